#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpseq/dicom.hpp"
#include "mpseq/labels.hpp"
#include "mpseq/volume.hpp"

namespace mpseq {

using ordered_json = nlohmann::ordered_json;

/// Normalized DICOM-derived metadata of one series.
struct HeaderFields {
  std::string patient_id;
  std::string study_uid;
  std::string series_uid;
  std::optional<std::string> body_part_examined;
  std::optional<std::string> procedure_step_description;
  std::optional<std::string> series_description;
  std::optional<std::string> protocol_name;
  std::optional<std::string> scanner_model;
  std::optional<double> b_value;  // s/mm^2
  std::optional<double> echo_time_ms;
  std::optional<double> repetition_time_ms;

  /// Throws MissingIdentifier / InvalidConfig on invariant violations.
  void validate() const;
  friend bool operator==(const HeaderFields&, const HeaderFields&) = default;
};

ordered_json to_json(const HeaderFields& h);
HeaderFields header_fields_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// DICOM slices -> series volumes

/// One parsed DICOM slice: its key-value metadata plus stored pixel values
/// (row-major, column index fastest, before rescale).
struct SliceRecord {
  std::string source;
  dicom::Dataset metadata;
  std::size_t rows = 0;
  std::size_t columns = 0;
  std::vector<double> pixels;
};

/// Parse a DICOM file into a SliceRecord. With `with_pixels == false` the
/// pixel payload is dropped (metadata scans).
SliceRecord read_slice(const std::filesystem::path& path, bool with_pixels = true);

struct AssembledSeries {
  SeriesVolume volume;
  HeaderFields header;
};

/// Maximum allowed deviation of any inter-slice gap from the median gap,
/// as a fraction of the median.
inline constexpr double kSliceGapTolerance = 0.10;

/// Stack slices of one series into a volume. Input order does not matter.
/// Errors: MixedSeries, DuplicatePosition, NonUniformGap, UnreadableFile.
AssembledSeries assemble_series(std::vector<SliceRecord> slices, double gap_tolerance = kSliceGapTolerance);

/// Ordered fallback table for locating the diffusion b-value: the standard
/// tag first, then vendor-private tags.
struct BValueSource {
  dicom::Tag tag;
  std::string vendor;
  /// Values at or above this are vendor-encoded with an offset and reduced
  /// modulo it (GE stores b + 1e9). Zero disables.
  double modulo = 0.0;
};
const std::vector<BValueSource>& default_b_value_sources();

HeaderFields extract_headers(const dicom::Dataset& record,
                             const std::vector<BValueSource>& b_sources = default_b_value_sources());
inline HeaderFields extract_headers(const SliceRecord& record) { return extract_headers(record.metadata); }

// ---------------------------------------------------------------------------
// Header -> label rules

enum class TextField { SeriesDescription, ProtocolName };

/// A rule matches when any pattern is a case-insensitive substring of any
/// of its fields and, if a b-value range is given, the header's b-value is
/// present and inside it.
struct LabelRule {
  std::string label;
  std::vector<std::string> patterns;
  std::vector<TextField> fields{TextField::SeriesDescription, TextField::ProtocolName};
  std::optional<double> b_value_min;
  std::optional<double> b_value_max;
};

/// First-match-wins rule list for one label-set profile.
struct LabelRuleTable {
  std::string label_set_id;
  std::vector<LabelRule> rules;

  static LabelRuleTable default_body();
  static LabelRuleTable default_brain();
  static LabelRuleTable default_for(const std::string& label_set_id);

  static LabelRuleTable from_json(const nlohmann::json& j);
  static LabelRuleTable load(const std::filesystem::path& path);
  ordered_json to_json() const;
};

/// nullopt means Unknown; the table never guesses.
std::optional<SequenceLabel> infer_label_from_headers(const HeaderFields& h, const LabelRuleTable& rules);
/// Same as above but only consults one text field (used by conflict rule b).
std::optional<SequenceLabel> infer_label_from_field(const HeaderFields& h, TextField field,
                                                    const LabelRuleTable& rules);

// ---------------------------------------------------------------------------
// Manifest records

struct VolumeLocator {
  enum class Kind { Nifti, Dicom };
  Kind kind = Kind::Nifti;
  std::vector<std::string> paths;  // one volume file, or the series' slice files
};

struct SeriesEntry {
  std::string series_uid;
  HeaderFields header;
  VolumeLocator locator;
  std::optional<SequenceLabel> label;
};

struct RejectedSeries {
  std::string series_uid;
  std::string source;
  std::string reason;
};

struct StudyRecord {
  std::string patient_id;
  std::string study_uid;
  std::vector<SeriesEntry> series;
  std::vector<std::string> missing_classes;  // non-empty => flagged incomplete
  std::vector<RejectedSeries> rejected;

  bool complete() const noexcept { return missing_classes.empty(); }
};

ordered_json to_json(const StudyRecord& study);
StudyRecord study_record_from_json(const nlohmann::json& j);

void write_manifest(const std::filesystem::path& path, const std::vector<StudyRecord>& studies);
std::vector<StudyRecord> read_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Conflict audit

enum class Severity { Warning, Conflict };

struct Finding {
  std::string rule_id;
  Severity severity = Severity::Warning;
  std::string series_uid;
  std::string fields;
  std::string message;
};

struct ConflictReport {
  std::string study_uid;
  std::vector<Finding> findings;

  bool passed() const noexcept { return findings.empty(); }
  std::size_t count(Severity s) const;
};

ordered_json to_json(const ConflictReport& report);

inline constexpr const char* kRuleBodyPartVsProcedure = "a_body_part_vs_procedure";
inline constexpr const char* kRuleDescriptionVsProtocol = "b_description_vs_protocol";
inline constexpr const char* kRuleMissingField = "c_missing_field";

struct ConflictRuleSet {
  bool body_part_vs_procedure = true;
  bool description_vs_protocol = true;
  bool missing_fields = true;
  /// Region name -> uppercase whole-word keywords. Unknown words never fire.
  std::map<std::string, std::vector<std::string>> anatomy_lexicon;
  /// Header field names checked by the missing-field rule.
  std::vector<std::string> required_fields;
  LabelRuleTable label_rules;

  static ConflictRuleSet defaults(const std::string& label_set_id = "body");
  static ConflictRuleSet from_json(const nlohmann::json& j);
  ordered_json to_json() const;
};

/// Regions named by free text, via whole-word lexicon matches.
std::vector<std::string> anatomical_regions(const std::string& text, const ConflictRuleSet& rules);

/// Findings ordered by (rule id, series_uid, field).
ConflictReport detect_conflicts(const StudyRecord& study, const ConflictRuleSet& rules);

// ---------------------------------------------------------------------------
// Volumes and manifests on disk

/// Read a single-volume container and canonicalize its orientation.
SeriesVolume load_volume_file(const std::filesystem::path& path);
/// Materialize a manifest series (NIfTI file or DICOM slice set), canonicalized.
SeriesVolume load_series(const VolumeLocator& locator);

struct LabelSource {
  enum class Mode { Rules, Sidecar };
  Mode mode = Mode::Rules;
  LabelRuleTable rules = LabelRuleTable::default_body();
  /// JSON-lines {"series_uid": ..., "label": ...}; defaults to <root>/labels.jsonl.
  std::optional<std::filesystem::path> sidecar;
};

struct ManifestBuild {
  std::vector<StudyRecord> studies;
  /// Files that could not be attributed to any study (unreadable, no IDs).
  std::vector<RejectedSeries> unassigned;

  std::size_t flagged() const;
  std::size_t rejected() const;
};

/// Scan `root` recursively for NIfTI volumes (with optional `<stem>.json`
/// header sidecars) and DICOM slice files; one record per (patient, study),
/// ordered by (patient_id, study_uid). Throws EmptyDataset when no study is found.
ManifestBuild build_manifest(const std::filesystem::path& root, const LabelSource& labels,
                             const LabelSet& label_set = LabelSet::body(), unsigned jobs = 1);

std::map<std::string, std::string> read_label_sidecar(const std::filesystem::path& path);

}  // namespace mpseq
