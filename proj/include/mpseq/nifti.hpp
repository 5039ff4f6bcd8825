#pragma once

#include <filesystem>

#include "mpseq/volume.hpp"

namespace mpseq::nifti {

enum class StorageType { Float32, Float64 };

/// Read a single-volume NIfTI-1 file (.nii or .nii.gz, either byte order).
///
/// Orientation comes from the sform when set, else the qform, else the
/// pixdim diagonal. The returned volume is NOT canonicalized; callers that
/// feed the pipeline go through ingestion::load_volume_file.
///
/// Throws UnreadableFile on I/O or header errors and Not3D when more or
/// fewer than three non-singleton dimensions remain (or they are not the
/// leading three).
SeriesVolume read(const std::filesystem::path& path);

/// Write a .nii.gz (or plain .nii when the extension says so) with matching
/// sform and qform. The write goes to a temporary file that is then renamed.
void write(const std::filesystem::path& path, const SeriesVolume& volume,
           StorageType storage = StorageType::Float32);

}  // namespace mpseq::nifti
