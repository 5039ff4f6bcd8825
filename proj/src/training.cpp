#include "mpseq/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mpseq/error.hpp"
#include "mpseq/parallel.hpp"
#include "mpseq/random.hpp"

namespace mpseq {

namespace fs = std::filesystem;

// ------------------------------------------------------------- splitting

void SplitSpec::validate() const {
  if (!(train >= 0.0 && val >= 0.0 && test >= 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "split.ratios must be non-negative");
  }
  if (std::fabs(train + val + test - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidConfig, "split.ratios must sum to 1 (got " + std::to_string(train + val + test) + ")");
  }
}

ordered_json SplitSpec::to_json() const {
  ordered_json j;
  j["ratios"] = {train, val, test};
  j["seed"] = seed;
  return j;
}

SplitSpec SplitSpec::from_json(const nlohmann::json& j, const std::string& context) {
  reject_unknown_keys(j, {"ratios", "seed"}, context);
  SplitSpec s;
  const auto r = get_field<std::vector<double>>(j, "ratios", context);
  if (r.size() != 3) throw Error(ErrorKind::InvalidConfig, "'" + context + ".ratios' needs 3 entries");
  s.train = r[0];
  s.val = r[1];
  s.test = r[2];
  if (j.contains("seed")) s.seed = get_field<std::uint64_t>(j, "seed", context);
  s.validate();
  return s;
}

namespace {

void sort_unique(std::vector<std::string>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

// Distinct streams for the patient split and the fold shuffle.
constexpr std::uint64_t kSplitStream = 0x5b17;
constexpr std::uint64_t kFoldStream = 0xf01d;

}  // namespace

PatientSplit split_patients(std::vector<std::string> ids, const SplitSpec& spec) {
  spec.validate();
  sort_unique(ids);
  const std::size_t n = ids.size();
  if (n < 3) throw Error(ErrorKind::TooFewPatients, "need at least 3 patients, got " + std::to_string(n));
  Rng rng(derive_seed(spec.seed, {kSplitStream}));
  rng.shuffle(ids);
  const double dn = static_cast<double>(n);
  const auto cut1 = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(dn * spec.train)));
  const auto cut2 =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(dn * (spec.train + spec.val))), cut1, n);
  PatientSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut1));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(cut1), ids.begin() + static_cast<std::ptrdiff_t>(cut2));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(cut2), ids.end());
  return s;
}

PatientSplit split_patients(const std::vector<StudyRecord>& manifest, const SplitSpec& spec) {
  std::vector<std::string> ids;
  for (const auto& s : manifest) ids.push_back(s.patient_id);
  return split_patients(std::move(ids), spec);
}

FoldPlan make_folds(std::vector<std::string> pool, std::size_t k, std::uint64_t seed, std::vector<std::string> test) {
  if (k < 2) throw Error(ErrorKind::InvalidConfig, "k-fold partitioning needs k >= 2");
  sort_unique(pool);
  const std::size_t n = pool.size();
  if (n < k) {
    throw Error(ErrorKind::TooFewForK, std::to_string(n) + " patients cannot form " + std::to_string(k) + " folds");
  }
  Rng rng(derive_seed(seed, {kFoldStream}));
  rng.shuffle(pool);
  FoldPlan plan;
  plan.k = k;
  plan.test = std::move(test);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    Fold fold;
    fold.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(start),
                    pool.begin() + static_cast<std::ptrdiff_t>(start + len));
    fold.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(start));
    fold.train.insert(fold.train.end(), pool.begin() + static_cast<std::ptrdiff_t>(start + len), pool.end());
    plan.folds.push_back(std::move(fold));
    start += len;
  }
  return plan;
}

FoldPlan make_folds(const PatientSplit& split, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error(ErrorKind::InvalidConfig, "k must be >= 1");
  if (k == 1) {
    if (split.train.empty() || split.val.empty()) {
      throw Error(ErrorKind::TooFewForK, "k = 1 needs non-empty train and validation splits");
    }
    FoldPlan plan;
    plan.k = 1;
    plan.folds.push_back(Fold{split.train, split.val});
    plan.test = split.test;
    return plan;
  }
  std::vector<std::string> pool = split.train;
  pool.insert(pool.end(), split.val.begin(), split.val.end());
  return make_folds(std::move(pool), k, seed, split.test);
}

ordered_json FoldPlan::to_json() const {
  ordered_json j;
  j["k"] = k;
  ordered_json fj = ordered_json::array();
  for (const auto& f : folds) fj.push_back({{"train", f.train}, {"val", f.val}});
  j["folds"] = std::move(fj);
  j["test"] = test;
  return j;
}

// ------------------------------------------------------------------ loss

double compute_loss(const nn::Tensor& logits, const std::vector<std::size_t>& labels, nn::Tensor& grad) {
  const std::size_t B = logits.n();
  const std::size_t C = logits.c();
  if (labels.size() != B) throw Error(ErrorKind::ShapeMismatch, "labels do not match the batch size");
  if (B == 0) throw Error(ErrorKind::ShapeMismatch, "empty batch");
  grad = nn::Tensor(logits.shape);
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    if (labels[i] >= C) {
      throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[i]) + " outside [0, " +
                                                  std::to_string(C) + ")");
    }
    double m = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, logits.at(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits.at(i, c) - m);
    const double log_z = m + std::log(z);
    total += log_z - logits.at(i, labels[i]);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(logits.at(i, c) - log_z);
      grad.at(i, c) = (p - (c == labels[i] ? 1.0 : 0.0)) / static_cast<double>(B);
    }
  }
  return total / static_cast<double>(B);
}

double compute_loss(const nn::Tensor& logits, const std::vector<std::size_t>& labels) {
  nn::Tensor unused;
  return compute_loss(logits, labels, unused);
}

// ---------------------------------------------------------- train config

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "train.batch_size must be >= 1");
  if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "train.epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::InvalidConfig, "train.learning_rate must be > 0");
  }
}

ordered_json TrainConfig::to_json() const {
  ordered_json j;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["epochs"] = epochs;
  j["loss"] = "cross_entropy";
  j["optimizer"] = "adam";
  j["seed"] = seed;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const std::string& context) {
  reject_unknown_keys(j, {"batch_size", "learning_rate", "epochs", "loss", "optimizer", "seed"}, context);
  TrainConfig c;
  if (j.contains("batch_size")) c.batch_size = get_field<std::size_t>(j, "batch_size", context);
  if (j.contains("learning_rate")) c.learning_rate = get_field<double>(j, "learning_rate", context);
  if (j.contains("epochs")) c.epochs = get_field<std::size_t>(j, "epochs", context);
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", context);
  if (j.contains("loss") && get_field<std::string>(j, "loss", context) != "cross_entropy") {
    throw Error(ErrorKind::InvalidConfig, "'" + context + ".loss' supports only \"cross_entropy\"");
  }
  if (j.contains("optimizer") && get_field<std::string>(j, "optimizer", context) != "adam") {
    throw Error(ErrorKind::InvalidConfig, "'" + context + ".optimizer' supports only \"adam\"");
  }
  c.validate();
  return c;
}

ordered_json to_json(const EpochRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_accuracy"] = r.val_accuracy;
  return j;
}

std::size_t select_best_epoch(const std::vector<EpochRecord>& history) {
  if (history.empty()) throw Error(ErrorKind::EmptyFold, "no epochs recorded");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].val_accuracy > history[best].val_accuracy) best = i;
  return best;
}

// --------------------------------------------------------------- dataset

Dataset::Dataset(std::string label_set_id, std::array<std::size_t, 4> input_shape, std::vector<Item> items)
    : label_set_id_(std::move(label_set_id)), shape_(input_shape), items_(std::move(items)) {
  const std::size_t want = shape_[0] * shape_[1] * shape_[2] * shape_[3];
  for (const auto& it : items_) {
    if (it.input.size() != want) throw Error(ErrorKind::ShapeMismatch, "dataset item " + it.series_uid);
  }
}

Dataset Dataset::from_manifest(const std::vector<StudyRecord>& manifest, const PreprocessConfig& cfg,
                               const LabelSet& labels, unsigned jobs) {
  struct Job {
    const StudyRecord* study;
    const SeriesEntry* series;
  };
  std::vector<Job> todo;
  for (const auto& study : manifest)
    for (const auto& s : study.series)
      if (s.label) {
        if (s.label->label_set_id != labels.id()) {
          throw Error(ErrorKind::MixedLabelSets, "series " + s.series_uid + " is labeled in '" +
                                                     s.label->label_set_id + "', expected '" + labels.id() + "'");
        }
        todo.push_back({&study, &s});
      }
  std::vector<Item> items(todo.size());
  parallel_for(todo.size(), jobs, [&](std::size_t i) {
    const auto& job = todo[i];
    ModelInput in = preprocess_pipeline(load_series(job.series->locator), cfg);
    items[i] = Item{job.study->patient_id, job.series->series_uid, job.series->label->class_index, std::move(in.values)};
  });
  const std::array<std::size_t, 4> shape{1, cfg.target_shape.nz, cfg.target_shape.ny, cfg.target_shape.nx};
  return Dataset(labels.id(), shape, std::move(items));
}

std::vector<std::size_t> Dataset::select(const std::vector<std::string>& patients) const {
  const std::set<std::string> want(patients.begin(), patients.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (want.count(items_[i].patient_id)) out.push_back(i);
  return out;
}

nn::Tensor Dataset::batch(const std::vector<std::size_t>& indices) const {
  nn::Tensor x({indices.size(), shape_[0], shape_[1], shape_[2], shape_[3]});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& src = items_.at(indices[b]).input;
    std::copy(src.begin(), src.end(), x.sample(b));
  }
  return x;
}

// -------------------------------------------------------------- training

namespace {

constexpr std::size_t kInferenceBatch = 8;

double accuracy_of(const std::vector<PredictionRecord>& preds) {
  std::size_t hit = 0;
  for (const auto& p : preds) hit += p.truth == p.predicted ? 1 : 0;
  return preds.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(preds.size());
}

}  // namespace

std::vector<PredictionRecord> predict_items(const nn::Model& model, const Dataset& data,
                                            const std::vector<std::size_t>& indices) {
  std::vector<PredictionRecord> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kInferenceBatch) {
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                         indices.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(indices.size(), start + kInferenceBatch)));
    const auto probs = nn::softmax_rows(model.infer(data.batch(chunk)));
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto& item = data.items()[chunk[b]];
      out.push_back(PredictionRecord{item.series_uid, item.label, argmax(probs[b]), probs[b]});
    }
  }
  return out;
}

FoldResult train_fold(std::size_t fold_id, const Fold& fold, const FoldContext& ctx, const Dataset& data) {
  ctx.train.validate();
  const auto train_idx = data.select(fold.train);
  const auto val_idx = data.select(fold.val);
  if (train_idx.empty()) throw Error(ErrorKind::EmptyFold, "fold " + std::to_string(fold_id) + " has no training series");
  if (val_idx.empty()) throw Error(ErrorKind::EmptyFold, "fold " + std::to_string(fold_id) + " has no validation series");

  nn::Model model(ctx.model);
  nn::Adam opt(ctx.train.learning_rate);
  const auto params = model.trainable();

  FoldResult result;
  result.fold_id = fold_id;
  double best_acc = -1.0;
  std::size_t best_epoch = 0;
  std::vector<std::size_t> order = train_idx;
  nn::Tensor grad;
  for (std::size_t epoch = 0; epoch < ctx.train.epochs; ++epoch) {
    order = train_idx;
    Rng rng(derive_seed(ctx.train.seed, {fold_id, epoch}));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += ctx.train.batch_size) {
      const std::vector<std::size_t> chunk(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + ctx.train.batch_size)));
      std::vector<std::size_t> labels;
      for (auto i : chunk) labels.push_back(data.items()[i].label);
      model.zero_grad();
      const nn::Tensor logits = model.forward(data.batch(chunk), true);
      const double loss = compute_loss(logits, labels, grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::NonFiniteLoss, "fold " + std::to_string(fold_id) + " epoch " + std::to_string(epoch) +
                                                  " batch at " + std::to_string(start) + ": loss " +
                                                  std::to_string(loss));
      }
      model.backward(grad);
      opt.step(params);
      loss_sum += loss * static_cast<double>(chunk.size());
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()),
                    accuracy_of(predict_items(model, data, val_idx))};
    result.history.push_back(rec);
    if (rec.val_accuracy > best_acc) {
      best_acc = rec.val_accuracy;
      best_epoch = epoch;
      result.best_state = model.export_state();
    }
    if (ctx.on_epoch) ctx.on_epoch(fold_id, rec);
  }

  auto& meta = result.meta;
  meta.model = ctx.model;
  meta.fold_id = static_cast<int>(fold_id);
  meta.best_epoch = static_cast<int>(best_epoch);
  meta.best_validation_accuracy = best_acc;
  meta.label_set_id = data.label_set_id();
  meta.preprocess_fingerprint = ctx.preprocess_fingerprint;
  meta.preprocess = ctx.preprocess;
  meta.extra = {{"train", ctx.train.to_json()},
                {"optimizer", {{"name", "adam"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
                {"train_patients", fold.train.size()},
                {"val_patients", fold.val.size()}};
  return result;
}

// ------------------------------------------------------ cross-validation

namespace {

std::string jsonl(const std::vector<ordered_json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

}  // namespace

CrossValidationResult run_cross_validation(const Dataset& data, const CrossValidationOptions& opts) {
  std::vector<std::string> patients;
  for (const auto& it : data.items()) patients.push_back(it.patient_id);

  CrossValidationResult cv;
  cv.split = split_patients(patients, opts.split);
  cv.plan = make_folds(cv.split, opts.k, opts.split.seed);
  const auto test_idx = data.select(cv.plan.test);
  if (test_idx.empty()) throw Error(ErrorKind::EmptyFold, "the test split has no series");

  if (opts.run_dir) {
    ordered_json run = opts.run_info;
    run["label_set"] = opts.label_set_id;
    run["k"] = opts.k;
    run["split"] = opts.split.to_json();
    run["train"] = opts.context.train.to_json();
    run["model"] = opts.context.model.to_json();
    run["model_fingerprint"] = opts.context.model.fingerprint();
    run["preprocess"] = opts.context.preprocess;
    run["preprocess_fingerprint"] = opts.context.preprocess_fingerprint;
    run["series"] = data.size();
    write_text_file(*opts.run_dir / "run.json", run.dump(2) + "\n");
    write_text_file(*opts.run_dir / "plan.json", cv.plan.to_json().dump(2) + "\n");
  }

  cv.folds.resize(cv.plan.folds.size());
  parallel_for(cv.plan.folds.size(), opts.jobs, [&](std::size_t f) {
    FoldOutcome out;
    out.result = train_fold(f, cv.plan.folds[f], opts.context, data);
    nn::Model best(opts.context.model);
    best.import_state(out.result.best_state);
    out.test_predictions = predict_items(best, data, test_idx);
    ConfusionMatrix cm(LabelSet::by_id(data.label_set_id()));
    for (const auto& p : out.test_predictions) cm.add(p.truth, p.predicted);
    out.test_report = compute_metrics(cm);
    if (opts.run_dir) {
      const fs::path dir = *opts.run_dir / ("fold" + std::to_string(f));
      fs::create_directories(dir);
      nn::save_checkpoint(dir / "checkpoint.ckpt", best, out.result.meta);
      std::vector<ordered_json> rows;
      for (const auto& r : out.result.history) rows.push_back(to_json(r));
      write_text_file(dir / "history.jsonl", jsonl(rows));
      rows.clear();
      for (const auto& p : out.test_predictions) rows.push_back(to_json(p));
      write_text_file(dir / "predictions.jsonl", jsonl(rows));
      write_text_file(dir / "test_report.json", out.test_report.to_json().dump(2) + "\n");
    }
    cv.folds[f] = std::move(out);
  });

  std::vector<MetricsReport> reports;
  std::vector<PredictionRecord> all_predictions;
  for (const auto& f : cv.folds) {
    reports.push_back(f.test_report);
    all_predictions.insert(all_predictions.end(), f.test_predictions.begin(), f.test_predictions.end());
  }
  cv.ensemble = ensemble_metrics(reports);
  if (opts.run_dir) {
    write_text_file(*opts.run_dir / "ensemble.json", cv.ensemble.to_json().dump(2) + "\n");
    write_text_file(*opts.run_dir / "confusion_matrix.csv", cv.ensemble.aggregate.to_csv());
    write_text_file(*opts.run_dir / "misclassifications.json",
                    to_json(misclassification_report(cv.ensemble.aggregate, all_predictions)).dump(2) + "\n");
  }
  return cv;
}

}  // namespace mpseq
