#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpseq/json_util.hpp"
#include "mpseq/labels.hpp"
#include "mpseq/nn/model.hpp"
#include "mpseq/preprocess.hpp"

namespace mpseq {

/// counts[t][p]: rows are ground truth, columns predictions.
struct ConfusionMatrix {
  std::string label_set_id;
  std::vector<std::string> classes;
  std::vector<std::vector<std::uint64_t>> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(const LabelSet& set);

  std::size_t size() const noexcept { return classes.size(); }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  /// Throws LabelOutOfRange.
  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);

  ordered_json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& j);
  /// Header row "truth\predicted,<classes...>", then one row per class.
  std::string to_csv() const;
};

ConfusionMatrix confusion_matrix(const LabelSet& set, const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct Averages {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::string label_set_id;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  Averages weighted;  // support-weighted; the headline numbers
  Averages macro;
  std::uint64_t n_samples = 0;
  /// Classes with zero support (their metrics are 0 by convention).
  std::vector<std::string> zero_support;
  ConfusionMatrix confusion;

  bool flagged() const noexcept { return !zero_support.empty(); }
  ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Throws EmptyMatrix when the matrix has no entries.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

/// Across-fold summary of one metric.
struct FoldSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double sd = 0.0;       // sample standard deviation (0 for one fold)
  double ci_low = 0.0;   // mean - 1.96 sd / sqrt(k)
  double ci_high = 0.0;  // mean + 1.96 sd / sqrt(k)
};

FoldSummary summarize(const std::vector<double>& values);

/// "99.50% (99.29%-99.71%)": mean with the min-max fold range.
std::string format_percent_range(const FoldSummary& s);

struct EnsembleReport {
  std::string label_set_id;
  std::vector<MetricsReport> folds;
  FoldSummary accuracy;
  FoldSummary precision;  // weighted
  FoldSummary recall;     // weighted
  FoldSummary f1;         // weighted
  FoldSummary macro_precision;
  FoldSummary macro_recall;
  FoldSummary macro_f1;
  ConfusionMatrix aggregate;  // entrywise sum over folds

  ordered_json to_json() const;
  /// Plain-text table: metric, mean (min-max), 95% interval.
  std::string summary_table() const;
};

/// Throws MixedLabelSets when folds disagree on the label set, EmptyMatrix when empty.
EnsembleReport ensemble_metrics(const std::vector<MetricsReport>& reports);

/// One evaluated series.
struct PredictionRecord {
  std::string series_uid;
  std::size_t truth = 0;
  std::size_t predicted = 0;
  std::vector<double> probabilities;
};

ordered_json to_json(const PredictionRecord& p);
PredictionRecord prediction_record_from_json(const nlohmann::json& j);

struct MisclassificationEntry {
  std::size_t truth = 0;
  std::size_t predicted = 0;
  std::string truth_name;
  std::string predicted_name;
  std::uint64_t count = 0;
  std::vector<std::string> examples;  // up to kMisclassificationExamples series UIDs
};

inline constexpr std::size_t kMisclassificationExamples = 5;

/// Off-diagonal cells, count descending then (truth, predicted) ascending.
/// Example UIDs are drawn from `predictions` in their given order.
std::vector<MisclassificationEntry> misclassification_report(const ConfusionMatrix& cm,
                                                             const std::vector<PredictionRecord>& predictions = {});
ordered_json to_json(const std::vector<MisclassificationEntry>& entries);

struct Prediction {
  SequenceLabel label;
  std::vector<double> probabilities;
};

/// Argmax with ties resolved toward the lowest index.
std::size_t argmax(const std::vector<double>& values);

/// Softmax probabilities of one preprocessed input averaged over the
/// checkpoints. Throws FingerprintMismatch when the checkpoints disagree on
/// label set, preprocessing, or architecture.
std::vector<double> ensemble_probabilities(const std::vector<const nn::LoadedCheckpoint*>& checkpoints,
                                           const ModelInput& input);

/// Preprocess `v` with the checkpoints' stored preprocessing config and
/// classify it.
Prediction predict_volume(const std::vector<const nn::LoadedCheckpoint*>& checkpoints, const SeriesVolume& v);

enum class AuditStatus { Agree, Disagree, HeaderUnknown };
std::string to_string(AuditStatus s);

struct AuditEntry {
  std::string series_uid;
  std::string predicted;
  std::optional<std::string> header_label;
  AuditStatus status = AuditStatus::Agree;
  std::vector<double> probabilities;
};

struct AuditReport {
  std::string label_set_id;
  std::vector<AuditEntry> entries;
  std::size_t agree = 0;
  std::size_t disagree = 0;
  std::size_t header_unknown = 0;

  ordered_json to_json() const;
};

struct AuditInput {
  std::string series_uid;
  Prediction prediction;
  std::optional<SequenceLabel> header_label;  // nullopt = rule table said Unknown
};

AuditReport audit_consistency(const std::string& label_set_id, const std::vector<AuditInput>& items);

/// SVG heat map of a confusion matrix.
std::string confusion_matrix_svg(const ConfusionMatrix& cm, const std::string& title);
/// SVG bar chart of per-fold values for several metrics.
std::string fold_metrics_svg(const EnsembleReport& report);

}  // namespace mpseq
