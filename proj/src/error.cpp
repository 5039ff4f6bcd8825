#include "mpseq/error.hpp"

namespace mpseq {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MixedSeries: return "MixedSeries";
    case ErrorKind::NonUniformGap: return "NonUniformGap";
    case ErrorKind::DuplicatePosition: return "DuplicatePosition";
    case ErrorKind::MissingIdentifier: return "MissingIdentifier";
    case ErrorKind::UnreadableFile: return "UnreadableFile";
    case ErrorKind::Not3D: return "Not3D";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::TooFewPatients: return "TooFewPatients";
    case ErrorKind::TooFewForK: return "TooFewForK";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyFold: return "EmptyFold";
    case ErrorKind::EmptyMatrix: return "EmptyMatrix";
    case ErrorKind::MixedLabelSets: return "MixedLabelSets";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::Unwritable: return "Unwritable";
  }
  return "Unknown";
}

}  // namespace mpseq
