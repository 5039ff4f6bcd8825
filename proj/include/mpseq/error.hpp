#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mpseq {

enum class ErrorKind {
  // ingestion
  MixedSeries,
  NonUniformGap,
  DuplicatePosition,
  MissingIdentifier,
  UnreadableFile,
  Not3D,
  EmptyDataset,
  // preprocessing / configs
  InvalidConfig,
  // model
  ShapeMismatch,
  FingerprintMismatch,
  CorruptCheckpoint,
  // training
  TooFewPatients,
  TooFewForK,
  LabelOutOfRange,
  NonFiniteLoss,
  EmptyFold,
  // evaluation
  EmptyMatrix,
  MixedLabelSets,
  // phantom
  InvalidSpec,
  Unwritable,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure surfaced by the library carries one of the kinds above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mpseq
