#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mpseq/ingestion.hpp"
#include "mpseq/json_util.hpp"
#include "mpseq/volume.hpp"

namespace mpseq {

/// Tissue classes of the synthetic anatomy, in this order in every
/// per-tissue array.
enum class Tissue : std::uint8_t { Air, Fat, Parenchyma, Fluid, Vessel };
inline constexpr std::size_t kTissueCount = 5;

/// Intensity signature of one sequence class.
///
/// Voxel value before noise = background_mean * tissue[t] * (1 + background_sigma * texture),
/// times lesion_multiplier inside lesions. Diffusion classes (non-empty
/// b_values) are further weighted by exp(-b * adc), with adc taken from
/// PhantomSpec::adc (units 1e-3 mm^2/s). Noise is Rician with standard
/// deviation noise_sigma * background_mean.
struct ClassSignature {
  std::string label;
  double background_mean = 100.0;
  double background_sigma = 0.1;
  std::array<int, 2> lesion_count{0, 3};
  double lesion_multiplier = 1.5;
  double texture_granularity = 8.0;  // wavelength of the texture field, voxels
  std::vector<double> b_values;      // DWI only
  std::array<double, kTissueCount> tissue{0.0, 1.0, 1.0, 1.0, 1.0};
  double noise_sigma = 0.03;
};

struct PhantomSpec {
  std::string label_set = "body";
  std::vector<ClassSignature> classes;
  std::array<std::size_t, 2> shape_xy{36, 44};
  std::array<std::size_t, 2> shape_z{14, 18};
  std::array<double, 2> spacing_xy{2.6, 3.4};  // mm
  std::array<double, 2> spacing_z{4.5, 5.5};
  /// Apparent diffusion per tissue (1e-3 mm^2/s) and the lesion factor.
  std::array<double, kTissueCount> adc{0.0, 0.2, 1.1, 3.0, 2.5};
  double lesion_adc_factor = 0.55;
  /// DWI volumes per study, drawn uniformly; b-values are a sorted random
  /// subset of the DWI signature's list.
  std::array<int, 2> dwi_count{1, 3};
  /// Overlap mode: DWI volumes with b <= hard_b_threshold take the T2FS
  /// signature, so they are statistically indistinguishable from T2FS.
  bool hard = false;
  double hard_b_threshold = 100.0;
  /// Fraction of studies that receive one series with a contradictory
  /// body-part header (exactly round(fraction * n_studies) studies).
  double conflict_fraction = 0.0;
  std::uint64_t seed = 0;

  static PhantomSpec default_body();
  static PhantomSpec hard_body();

  /// Throws InvalidSpec.
  void validate() const;
  ordered_json to_json() const;
  /// Strict; missing keys keep their default_body() values.
  static PhantomSpec from_json(const nlohmann::json& j, const std::string& context = "phantom");
  const ClassSignature& signature(const std::string& label) const;
};

struct GeneratedSeries {
  SeriesEntry entry;
  SeriesVolume volume;
};

struct GeneratedStudy {
  StudyRecord record;  // locators empty until written
  std::vector<GeneratedSeries> series;
};

/// One volume per class plus extra DWI b-values, sharing one anatomy.
/// Deterministic per (spec.seed, patient_id, study_index).
GeneratedStudy generate_study(const PhantomSpec& spec, const std::string& patient_id, std::size_t study_index);

struct DatasetSummary {
  std::vector<StudyRecord> manifest;
  std::vector<std::string> conflict_studies;  // study UIDs with a seeded conflict
};

/// Writes <root>/<patient>/<study>/<series>.nii.gz with a <series>.json header
/// sidecar, plus labels.jsonl, manifest.jsonl and dataset_card.json.
/// Throws InvalidSpec (n_patients < 3) and Unwritable.
DatasetSummary generate_dataset(const PhantomSpec& spec, std::size_t n_patients, std::size_t studies_per_patient,
                                const std::filesystem::path& root, unsigned jobs = 1);

/// Patient ids used by the generator: P0001, P0002, ...
std::string phantom_patient_id(std::size_t index);

/// (log mean, log standard deviation) of the raw intensities.
std::array<double, 2> intensity_features(const SeriesVolume& v);

struct LabeledFeatures {
  std::array<double, 2> features;
  std::size_t label;
};

/// Fraction of `test` assigned to their class by the nearest class centroid
/// of `train` (features z-scored with the training statistics).
double nearest_centroid_accuracy(const std::vector<LabeledFeatures>& train, const std::vector<LabeledFeatures>& test);

}  // namespace mpseq
