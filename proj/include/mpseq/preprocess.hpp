#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "mpseq/json_util.hpp"
#include "mpseq/volume.hpp"

namespace mpseq {

enum class Interpolation { Trilinear, Nearest };

/// Geometry and intensity normalization settings. Defaults reproduce the
/// body-MRI protocol: 1.5 x 1.5 x 7.8 mm, 256 x 256 x 36 voxels, [1%, 99%].
struct PreprocessConfig {
  Vec3 target_spacing{1.5, 1.5, 7.8};
  Shape3 target_shape{256, 256, 36};
  double p_low = 1.0;
  double p_high = 99.0;
  double pad_value = 0.0;
  Interpolation interpolation = Interpolation::Trilinear;

  void validate() const;
  ordered_json to_json() const;
  /// Strict: unknown keys and missing keys throw InvalidConfig.
  static PreprocessConfig from_json(const nlohmann::json& j, const std::string& context = "preprocess");
  std::string fingerprint() const;
};

/// max(1, round(n * s_in / s_out)).
std::size_t resampled_extent(std::size_t n_in, double s_in, double s_out);

/// Resample onto a grid with `target_spacing` covering the same field of
/// view. Output voxel o along an axis samples input continuous index
/// (o + 0.5) * s_out / s_in - 0.5, clamped to the edge voxels; the field of
/// view corner is preserved, so with equal spacing the output is the input.
SeriesVolume resample(const SeriesVolume& v, const Vec3& target_spacing,
                      Interpolation mode = Interpolation::Trilinear);

/// Per-axis leading offset: positive = voxels cropped from the front,
/// negative = voxels padded in front. Odd remainders go to the trailing side.
std::array<long long, 3> crop_pad_offsets(const Shape3& in, const Shape3& target);

SeriesVolume crop_or_pad(const SeriesVolume& v, const Shape3& target_shape, double pad_value = 0.0);

/// Linear-interpolation percentile (p in [0, 100]) of `values`.
double percentile(std::vector<double> values, double p);

/// clamp((x - a) / (b - a), 0, 1) with a, b the p_low / p_high percentiles;
/// all zeros when b == a.
SeriesVolume normalize_percentile(const SeriesVolume& v, double p_low, double p_high);

/// Model input of shape (1, Z, Y, X); values are x-fastest, same as SeriesVolume.
struct ModelInput {
  std::array<std::size_t, 4> shape{1, 1, 1, 1};
  std::vector<double> values;
};

/// resample -> crop_or_pad -> normalize_percentile, as a volume.
SeriesVolume preprocess_volume(const SeriesVolume& v, const PreprocessConfig& cfg);
/// Same as preprocess_volume, flattened into a model input tensor.
ModelInput preprocess_pipeline(const SeriesVolume& v, const PreprocessConfig& cfg);

/// Debug dump: `<path>` as a float64 NIfTI volume and `<path stem>.json`
/// with the config fingerprint and source series.
void dump_preprocessed(const std::filesystem::path& path, const SeriesVolume& preprocessed,
                       const PreprocessConfig& cfg, const std::string& series_uid);

}  // namespace mpseq
