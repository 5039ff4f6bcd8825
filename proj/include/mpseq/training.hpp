#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mpseq/evaluation.hpp"
#include "mpseq/ingestion.hpp"
#include "mpseq/json_util.hpp"
#include "mpseq/nn/model.hpp"
#include "mpseq/preprocess.hpp"

namespace mpseq {

// ------------------------------------------------------------- splitting

struct SplitSpec {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;
  std::uint64_t seed = 0;

  /// Ratios non-negative and summing to 1 within 1e-9.
  void validate() const;
  ordered_json to_json() const;
  /// {"ratios": [train, val, test], "seed": n}
  static SplitSpec from_json(const nlohmann::json& j, const std::string& context = "split");
};

struct PatientSplit {
  std::vector<std::string> train, val, test;
};

/// Seeded shuffle of the (deduplicated, sorted) IDs, then cuts at
/// round(n * train) and round(n * (train + val)). Throws TooFewPatients for n < 3.
PatientSplit split_patients(std::vector<std::string> patient_ids, const SplitSpec& spec);
PatientSplit split_patients(const std::vector<StudyRecord>& manifest, const SplitSpec& spec);

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

struct FoldPlan {
  std::size_t k = 0;
  std::vector<Fold> folds;
  std::vector<std::string> test;

  ordered_json to_json() const;
  friend bool operator==(const FoldPlan& a, const FoldPlan& b) {
    if (a.k != b.k || a.test != b.test || a.folds.size() != b.folds.size()) return false;
    for (std::size_t i = 0; i < a.folds.size(); ++i)
      if (a.folds[i].train != b.folds[i].train || a.folds[i].val != b.folds[i].val) return false;
    return true;
  }
};

/// k >= 2: seeded shuffle of the pool, then k contiguous validation chunks
/// whose sizes differ by at most one (the first n % k chunks are larger).
/// Throws TooFewForK when the pool has fewer than k patients.
FoldPlan make_folds(std::vector<std::string> pool, std::size_t k, std::uint64_t seed,
                    std::vector<std::string> test = {});
/// k >= 2 partitions train + val as above; k == 1 is a single pass that
/// trains on split.train and validates on split.val.
FoldPlan make_folds(const PatientSplit& split, std::size_t k, std::uint64_t seed);

// ------------------------------------------------------------------ loss

/// Mean over the batch of -log softmax(logits)[label]. Throws LabelOutOfRange.
double compute_loss(const nn::Tensor& logits, const std::vector<std::size_t>& labels);
/// Same value; also writes dL/dlogits into `grad`.
double compute_loss(const nn::Tensor& logits, const std::vector<std::size_t>& labels, nn::Tensor& grad);

// ------------------------------------------------------------- training

struct TrainConfig {
  std::size_t batch_size = 2;
  double learning_rate = 1e-4;
  std::size_t epochs = 25;
  std::uint64_t seed = 0;

  void validate() const;
  ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, const std::string& context = "train");
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

ordered_json to_json(const EpochRecord& r);

/// Earliest epoch with the highest validation accuracy.
std::size_t select_best_epoch(const std::vector<EpochRecord>& history);

/// Preprocessed, labeled series held in memory; immutable after
/// construction, so concurrent reads are safe.
class Dataset {
 public:
  struct Item {
    std::string patient_id;
    std::string series_uid;
    std::size_t label = 0;
    std::vector<double> input;  // (1, Z, Y, X) values
  };

  Dataset(std::string label_set_id, std::array<std::size_t, 4> input_shape, std::vector<Item> items);

  /// Loads and preprocesses every labeled series of the manifest; series
  /// without a label are skipped.
  static Dataset from_manifest(const std::vector<StudyRecord>& manifest, const PreprocessConfig& cfg,
                               const LabelSet& labels, unsigned jobs = 1);

  const std::string& label_set_id() const noexcept { return label_set_id_; }
  const std::array<std::size_t, 4>& input_shape() const noexcept { return shape_; }
  const std::vector<Item>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  /// Item indices whose patient is in `patients`, in dataset order.
  std::vector<std::size_t> select(const std::vector<std::string>& patients) const;
  /// Stack items into a (B, 1, Z, Y, X) tensor.
  nn::Tensor batch(const std::vector<std::size_t>& indices) const;

 private:
  std::string label_set_id_;
  std::array<std::size_t, 4> shape_;
  std::vector<Item> items_;
};

struct FoldResult {
  std::size_t fold_id = 0;
  std::vector<EpochRecord> history;
  nn::CheckpointMeta meta;
  std::vector<double> best_state;  // Model::export_state() of the best epoch
};

struct FoldContext {
  nn::ModelConfig model;
  TrainConfig train;
  std::string preprocess_fingerprint;
  ordered_json preprocess;
  /// Called after every epoch (progress reporting); may be empty.
  std::function<void(std::size_t fold, const EpochRecord&)> on_epoch;
};

/// Train one fold for exactly `epochs` epochs and keep the weights of the
/// best validation epoch. Throws EmptyFold, NonFiniteLoss.
FoldResult train_fold(std::size_t fold_id, const Fold& fold, const FoldContext& ctx, const Dataset& data);

/// Evaluate a model on the given items (inference mode).
std::vector<PredictionRecord> predict_items(const nn::Model& model, const Dataset& data,
                                            const std::vector<std::size_t>& indices);

struct CrossValidationOptions {
  std::size_t k = 5;
  SplitSpec split;
  FoldContext context;
  std::string label_set_id = "body";
  unsigned jobs = 1;
  /// When set, results are persisted under this directory.
  std::optional<std::filesystem::path> run_dir;
  /// Extra provenance stored in run.json.
  ordered_json run_info = ordered_json::object();
};

struct FoldOutcome {
  FoldResult result;
  MetricsReport test_report;
  std::vector<PredictionRecord> test_predictions;
};

struct CrossValidationResult {
  PatientSplit split;
  FoldPlan plan;
  std::vector<FoldOutcome> folds;  // fold-index order
  EnsembleReport ensemble;
};

/// Split, plan folds, train each fold, test every fold's best checkpoint on
/// the fixed test split and aggregate. Folds run on up to `jobs` threads.
/// Run directory layout:
///   run.json, plan.json, ensemble.json, misclassifications.json,
///   confusion_matrix.csv,
///   fold<i>/{checkpoint.ckpt, history.jsonl, test_report.json, predictions.jsonl}
CrossValidationResult run_cross_validation(const Dataset& data, const CrossValidationOptions& opts);

}  // namespace mpseq
