// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

#include "gradcheck.hpp"
#include "mpseq/error.hpp"
#include "mpseq/evaluation.hpp"
#include "mpseq/phantom.hpp"
#include "mpseq/preprocess.hpp"
#include "mpseq/training.hpp"
#include "oracles.hpp"

using namespace mpseq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures; the first few are kept for the report line.
struct Tally {
  bool pass = true;
  std::vector<std::string> notes;

  void expect(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    if (notes.size() < 3) notes.push_back(what);
  }
  Outcome outcome(std::string detail) const {
    for (const auto& n : notes) detail += "; " + n;
    return {pass, detail};
  }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// The end-to-end phantom protocol: 50 patients, one study each, seed 7,
// batch 2, lr 1e-4, 25 epochs, 5 folds.
constexpr std::uint64_t kSeed = 7;
constexpr std::size_t kPatients = 50;

PreprocessConfig phantom_preprocess() {
  PreprocessConfig pc;
  pc.target_spacing = {6, 6, 10};
  pc.target_shape = {16, 16, 8};
  return pc;
}

CrossValidationOptions phantom_protocol(const fs::path& run_dir) {
  const auto pc = phantom_preprocess();
  CrossValidationOptions o;
  o.k = 5;
  o.split.seed = kSeed;
  o.context.model = nn::ModelConfig::micro_densenet(5);
  o.context.model.growth_rate = 16;
  o.context.model.init_features = 32;
  o.context.model.input_shape = {8, 16, 16};
  o.context.model.seed = kSeed;
  o.context.train.batch_size = 2;
  o.context.train.learning_rate = 1e-4;
  o.context.train.epochs = 25;
  o.context.train.seed = kSeed;
  o.context.preprocess = pc.to_json();
  o.context.preprocess_fingerprint = pc.fingerprint();
  o.run_dir = run_dir;
  return o;
}

struct PhantomRun {
  CrossValidationResult cv;
  double seconds = 0.0;
};

PhantomRun run_phantom(const fs::path& work, const std::string& name, bool hard) {
  const auto t0 = std::chrono::steady_clock::now();
  PhantomSpec spec = hard ? PhantomSpec::hard_body() : PhantomSpec::default_body();
  spec.seed = kSeed;
  const auto data_dir = work / (name + "_data");
  fs::remove_all(data_dir);
  const auto summary = generate_dataset(spec, kPatients, 1, data_dir);
  const auto data = Dataset::from_manifest(summary.manifest, phantom_preprocess(), LabelSet::body());
  PhantomRun r;
  r.cv = run_cross_validation(data, phantom_protocol(work / (name + "_run")));
  r.seconds = seconds_since(t0);
  return r;
}

Outcome criterion_end_to_end(const PhantomRun& normal, const PhantomRun& hard) {
  Tally t;
  const double f1 = normal.cv.ensemble.f1.mean;
  t.expect(f1 >= 0.95, "default fold-mean weighted F1 " + fmt(f1) + " < 0.95");
  t.expect(normal.seconds <= 1800, "default run took " + fmt(normal.seconds) + " s");
  const auto top = misclassification_report(hard.cv.ensemble.aggregate);
  std::string cell = "none";
  std::uint64_t count = 0;
  if (!top.empty()) {
    cell = top[0].truth_name + "->" + top[0].predicted_name;
    count = top[0].count;
    // A tie for the top cell would make the argmax ambiguous.
    t.expect(top.size() < 2 || top[1].count < top[0].count, "hard-mode top off-diagonal cell is tied");
  }
  t.expect(cell == "DWI->T2FS", "hard-mode argmax off-diagonal cell is " + cell);
  return t.outcome("default F1 " + format_percent_range(normal.cv.ensemble.f1) + " in " + fmt(normal.seconds, 3) +
                   " s; hard-mode top confusion " + cell + " x" + std::to_string(count));
}

SeriesVolume random_volume(Rng& rng, Shape3 shape, Vec3 spacing) {
  SeriesVolume v(shape, spacing);
  for (auto& x : v.voxels) x = rng.uniform(-100.0, 100.0);
  return v;
}

Outcome criterion_preprocess_oracles() {
  Tally t;
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Shape3 shape{static_cast<std::size_t>(rng.integer(1, 8)), static_cast<std::size_t>(rng.integer(1, 8)),
                       static_cast<std::size_t>(rng.integer(1, 8))};
    const Vec3 sp{rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 6)};
    const Vec3 target{rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 6)};
    const auto v = random_volume(rng, shape, sp);
    const auto r = resample(v, target);
    for (std::size_t k = 0; k < r.shape.nz; ++k)
      for (std::size_t j = 0; j < r.shape.ny; ++j)
        for (std::size_t i = 0; i < r.shape.nx; ++i) {
          const double want =
              oracle::trilinear(v, oracle::source_index(i, sp[0], target[0]), oracle::source_index(j, sp[1], target[1]),
                                oracle::source_index(k, sp[2], target[2]));
          worst = std::max(worst, std::abs(r.at(i, j, k) - want));
        }
  }
  t.expect(worst <= 1e-5, "resample error " + fmt(worst));

  double pworst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(rng.integer(1, 500)));
    for (auto& x : v) x = rng.normal(0, 50);
    for (double p : {0.0, 1.0, rng.uniform(0, 100), 99.0, 100.0})
      pworst = std::max(pworst, std::abs(percentile(v, p) - oracle::percentile(v, p)));
    SeriesVolume vol({v.size(), 1, 1}, {1, 1, 1});
    vol.voxels = v;
    const double a = oracle::percentile(v, 1), b = oracle::percentile(v, 99);
    const auto n = normalize_percentile(vol, 1, 99);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double want = b > a ? std::clamp((v[i] - a) / (b - a), 0.0, 1.0) : 0.0;
      pworst = std::max(pworst, std::abs(n.voxels[i] - want));
    }
  }
  t.expect(pworst <= 1e-9, "percentile normalization error " + fmt(pworst));

  bool exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape3 shape{static_cast<std::size_t>(rng.integer(2, 12)), static_cast<std::size_t>(rng.integer(1, 12)),
                       static_cast<std::size_t>(rng.integer(1, 12))};
    const auto v = random_volume(rng, shape, {rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(1, 6)});
    exact = exact && resample(v, v.spacing).voxels == v.voxels;
    exact = exact && resample(v, v.spacing, Interpolation::Nearest).voxels == v.voxels;
    exact = exact && crop_or_pad(v, v.shape).voxels == v.voxels;
    SeriesVolume unit = v;
    for (auto& x : unit.voxels) x = (x + 100.0) / 200.0;
    unit.voxels[0] = 0.0;
    unit.voxels.back() = 1.0;
    exact = exact && normalize_percentile(unit, 0, 100).voxels == unit.voxels;
  }
  t.expect(exact, "an identity case changed values");
  return t.outcome("resample max err " + fmt(worst) + ", percentile max err " + fmt(pworst) + ", identity cases " + (exact ? "exact" : "not exact"));
}

Outcome criterion_shape_contract() {
  Tally t;
  const PreprocessConfig cfg;
  Rng rng(4);
  std::size_t ok = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Shape3 shape{static_cast<std::size_t>(rng.integer(32, 384)), static_cast<std::size_t>(rng.integer(32, 384)),
                       static_cast<std::size_t>(rng.integer(4, 64))};
    const Vec3 sp{rng.uniform(0.4, 2.5), rng.uniform(0.4, 2.5), rng.uniform(1.0, 10.0)};
    SeriesVolume v(shape, sp);
    switch (trial % 4) {
      case 0:
        for (auto& x : v.voxels) x = rng.uniform(0, 4000);
        break;
      case 1:
        for (auto& x : v.voxels) x = rng.normal(-500, 300);
        break;
      case 2:
        std::fill(v.voxels.begin(), v.voxels.end(), rng.uniform(-10, 10));
        break;
      default:
        for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = rng.uniform() < 0.9 ? 0.0 : rng.uniform(0, 1e6);
    }
    const auto in = preprocess_pipeline(v, cfg);
    const auto [lo, hi] = std::minmax_element(in.values.begin(), in.values.end());
    const bool good = in.shape == std::array<std::size_t, 4>{1, 36, 256, 256} &&
                      in.values.size() == 36u * 256 * 256 && *lo >= 0.0 && *hi <= 1.0;
    ok += good;
    t.expect(good, "trial " + std::to_string(trial) + " bad shape or range");
  }
  return t.outcome(std::to_string(ok) + "/200 inputs gave (1, 36, 256, 256) in [0, 1]");
}

nn::Tensor random_batch(std::size_t n, const nn::ModelConfig& cfg, std::uint64_t seed) {
  nn::Tensor x({n, 1, cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]});
  Rng rng(seed);
  for (auto& v : x.data) v = rng.uniform();
  return x;
}

Outcome criterion_gradients() {
  Tally t;
  double worst = 0.0;
  int total = 0;
  struct Case {
    nn::ModelConfig cfg;
    bool batch_stats;
  };
  auto dense = nn::ModelConfig::micro_densenet(5);
  dense.seed = 5;
  auto res = nn::ModelConfig::micro_resnet(5);
  res.seed = 6;
  std::uint64_t seed = 20;
  for (const auto& c : {Case{dense, false}, Case{dense, true}, Case{res, false}}) {
    nn::Model m(c.cfg);
    gradcheck::move_off_kinks(m, seed + 1000);
    const auto r = gradcheck::run(m, random_batch(2, c.cfg, seed), {1, 3}, c.batch_stats, 25, seed + 1);
    seed += 2;
    t.expect(r.checked == 25, "only " + std::to_string(r.checked) + " usable samples");
    worst = std::max(worst, r.worst);
    total += r.checked;
  }
  t.expect(worst < 1e-3, "relative error " + fmt(worst));
  return t.outcome(std::to_string(total) + " sampled parameters, worst relative error " + fmt(worst));
}

std::vector<std::string> patient_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("P" + std::to_string(100000 + i));
  return ids;
}

bool disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end());
  return std::none_of(b.begin(), b.end(), [&](const std::string& x) { return sa.count(x) > 0; });
}

Outcome criterion_splits() {
  Tally t;
  Rng rng(6);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(10, 400));
    // Ratios with every share at least 10%.
    const double a = rng.uniform(0.1, 0.8), b = rng.uniform(0.1, 0.9 - a);
    const SplitSpec spec{a, b, 1.0 - a - b, rng.next_u64()};
    const auto ids = patient_ids(n);
    const auto s = split_patients(ids, spec);
    const std::string tag = "trial " + std::to_string(trial);
    t.expect(s.train.size() + s.val.size() + s.test.size() == n, tag + " lost patients");
    t.expect(disjoint(s.train, s.val) && disjoint(s.train, s.test) && disjoint(s.val, s.test), tag + " leakage");
    t.expect(std::abs(static_cast<double>(s.train.size()) - spec.train * n) <= 1.0 &&
                 std::abs(static_cast<double>(s.val.size()) - spec.val * n) <= 1.0 &&
                 std::abs(static_cast<double>(s.test.size()) - spec.test * n) <= 1.0,
             tag + " split size off by more than 1");

    const std::size_t pool = s.train.size() + s.val.size();
    const auto k = static_cast<std::size_t>(rng.integer(2, static_cast<long long>(std::min<std::size_t>(10, pool))));
    const auto plan = make_folds(s, k, rng.next_u64());
    t.expect(plan.folds.size() == k && plan.test == s.test, tag + " plan shape");
    std::multiset<std::string> val_union;
    for (const auto& f : plan.folds) {
      t.expect(f.train.size() + f.val.size() == pool, tag + " fold does not cover the pool");
      t.expect(disjoint(f.train, f.val) && disjoint(f.train, plan.test) && disjoint(f.val, plan.test),
               tag + " fold leakage");
      t.expect(std::abs(static_cast<double>(f.val.size()) - static_cast<double>(pool) / k) <= 1.0,
               tag + " fold size off by more than 1");
      val_union.insert(f.val.begin(), f.val.end());
    }
    std::set<std::string> pool_ids(s.train.begin(), s.train.end());
    pool_ids.insert(s.val.begin(), s.val.end());
    t.expect(val_union.size() == pool && std::set<std::string>(val_union.begin(), val_union.end()) == pool_ids,
             tag + " validation folds do not partition the pool");
  }
  const auto s = split_patients(patient_ids(1234), SplitSpec{0.7, 0.1, 0.2, kSeed});
  t.expect(s.train.size() == 864 && s.val.size() == 123 && s.test.size() == 247, "1234 patients split wrongly");
  return t.outcome("10000 instances; 1234 -> " + std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) +
                   "/" + std::to_string(s.test.size()));
}

Outcome criterion_metrics() {
  Tally t;
  Rng rng(7);
  double worst = 0.0, acc_vs_recall = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto classes = static_cast<std::size_t>(rng.integer(2, 8));
    std::vector<std::string> names;
    for (std::size_t c = 0; c < classes; ++c) names.push_back("C" + std::to_string(c));
    const LabelSet set("random", names);
    std::vector<std::pair<std::size_t, std::size_t>> pairs(static_cast<std::size_t>(rng.integer(1, 300)));
    const double skill = rng.uniform();
    for (auto& [truth, pred] : pairs) {
      truth = rng.index(classes);
      pred = rng.uniform() < skill ? truth : rng.index(classes);
    }
    const auto r = compute_metrics(confusion_matrix(set, pairs));
    const auto o = oracle::metrics_from_pairs(pairs, classes);
    auto diff = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
    diff(r.accuracy, o.accuracy);
    for (std::size_t c = 0; c < classes; ++c) {
      diff(r.per_class[c].precision, o.precision[c]);
      diff(r.per_class[c].recall, o.recall[c]);
      diff(r.per_class[c].f1, o.f1[c]);
      t.expect(r.per_class[c].support == o.support[c], "support mismatch");
    }
    diff(r.weighted.precision, o.weighted_precision);
    diff(r.weighted.recall, o.weighted_recall);
    diff(r.weighted.f1, o.weighted_f1);
    diff(r.macro.precision, o.macro_precision);
    diff(r.macro.recall, o.macro_recall);
    diff(r.macro.f1, o.macro_f1);
    acc_vs_recall = std::max(acc_vs_recall, std::abs(r.accuracy - r.weighted.recall));
  }
  t.expect(worst <= 1e-9, "metric error " + fmt(worst));
  t.expect(acc_vs_recall <= 1e-12, "accuracy vs weighted recall " + fmt(acc_vs_recall));

  // 22 DWI volumes read as T2FS among otherwise correct predictions.
  const auto& body = LabelSet::body();
  const auto dwi = *body.index_of("DWI"), t2fs = *body.index_of("T2FS");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<PredictionRecord> preds;
  for (std::size_t c = 0; c < body.size(); ++c)
    for (int i = 0; i < 100; ++i) pairs.emplace_back(c, c);
  for (int i = 0; i < 22; ++i) {
    pairs.emplace_back(dwi, t2fs);
    preds.push_back({"dwi." + std::to_string(i), dwi, t2fs, {}});
  }
  const auto report = misclassification_report(confusion_matrix(body, pairs), preds);
  const bool tally = report.size() == 1 && report[0].truth_name == "DWI" && report[0].predicted_name == "T2FS" &&
                     report[0].count == 22;
  t.expect(tally, "misclassification report does not show DWI->T2FS x22");
  return t.outcome("1000 instances, max err " + fmt(worst) + "; accuracy-recall gap " + fmt(acc_vs_recall) +
                   "; DWI->T2FS x" + (report.empty() ? std::string("0") : std::to_string(report[0].count)));
}

std::size_t earliest_argmax(const std::vector<EpochRecord>& h) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i].val_accuracy > h[best].val_accuracy) best = i;
  return best;
}

Outcome criterion_checkpoints(const fs::path& work, const PhantomRun* normal) {
  Tally t;
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<EpochRecord> h(static_cast<std::size_t>(rng.integer(1, 30)));
    for (std::size_t e = 0; e < h.size(); ++e) {
      h[e].epoch = e;
      h[e].val_accuracy = static_cast<double>(rng.integer(0, 4)) / 4.0;  // coarse, so ties are common
    }
    t.expect(select_best_epoch(h) == earliest_argmax(h), "select_best_epoch disagrees on a random history");
  }

  // Real training runs: the default phantom run if present, else a short one.
  std::optional<CrossValidationResult> own;
  const CrossValidationResult* cv = normal ? &normal->cv : nullptr;
  fs::path run_dir = work / "default_run";
  if (!cv) {
    PhantomSpec spec = PhantomSpec::default_body();
    spec.seed = kSeed;
    const auto data_dir = work / "ckpt_data";
    fs::remove_all(data_dir);
    const auto summary = generate_dataset(spec, 10, 1, data_dir);
    const auto data = Dataset::from_manifest(summary.manifest, phantom_preprocess(), LabelSet::body());
    run_dir = work / "ckpt_run";
    auto opts = phantom_protocol(run_dir);
    opts.k = 2;
    opts.context.train.epochs = 4;
    own = run_cross_validation(data, opts);
    cv = &*own;
  }
  std::size_t folds = 0;
  for (const auto& f : cv->folds) {
    const auto& r = f.result;
    t.expect(static_cast<std::size_t>(r.meta.best_epoch) == earliest_argmax(r.history), "fold " + std::to_string(r.fold_id) +
                                                                  " best epoch is not the earliest argmax");
    nn::Model best(r.meta.model);
    best.import_state(r.best_state);
    const auto loaded = nn::load_checkpoint(run_dir / ("fold" + std::to_string(r.fold_id)) / "checkpoint.ckpt",
                                            r.meta.model);
    const auto probe = random_batch(4, r.meta.model, 100 + r.fold_id);
    const auto a = best.infer(probe), b = loaded.model.infer(probe);
    t.expect(a.data.size() == b.data.size() &&
                 std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0,
             "fold " + std::to_string(r.fold_id) + " checkpoint logits differ");
    ++folds;
  }
  return t.outcome("1000 random histories; " + std::to_string(folds) +
                   " trained folds with earliest-argmax best epoch and bitwise-equal reloaded logits");
}

Outcome criterion_audit(const fs::path& work) {
  Tally t;
  PhantomSpec spec = PhantomSpec::default_body();
  spec.seed = 11;
  spec.conflict_fraction = 0.1;
  const auto dir = work / "audit_data";
  fs::remove_all(dir);
  const auto summary = generate_dataset(spec, 100, 1, dir);
  const auto manifest = read_manifest(dir / "manifest.jsonl");
  const auto rules = ConflictRuleSet::defaults();
  const std::set<std::string> seeded(summary.conflict_studies.begin(), summary.conflict_studies.end());
  std::set<std::string> flagged;
  for (const auto& s : manifest)
    if (!detect_conflicts(s, rules).passed()) flagged.insert(s.study_uid);
  std::size_t false_pos = 0, missed = 0;
  for (const auto& s : flagged) false_pos += seeded.count(s) == 0;
  for (const auto& s : seeded) missed += flagged.count(s) == 0;
  t.expect(seeded.size() == 10, std::to_string(seeded.size()) + " seeded conflicts instead of 10");
  t.expect(missed == 0, std::to_string(missed) + " seeded conflicts missed");
  t.expect(false_pos == 0, std::to_string(false_pos) + " clean studies flagged");
  return t.outcome(std::to_string(flagged.size()) + " flagged of " + std::to_string(seeded.size()) + " seeded in " +
                   std::to_string(manifest.size()) + " studies, " + std::to_string(false_pos) + " false positives");
}

Outcome criterion_determinism(const PhantomRun& first, const PhantomRun& second) {
  Tally t;
  t.expect(first.cv.plan == second.cv.plan, "fold plans differ");
  bool losses = first.cv.folds.size() == second.cv.folds.size();
  for (std::size_t f = 0; losses && f < first.cv.folds.size(); ++f) {
    const auto& a = first.cv.folds[f].result.history;
    const auto& b = second.cv.folds[f].result.history;
    losses = !a.empty() && !b.empty() && a[0].train_loss == b[0].train_loss;
  }
  t.expect(losses, "epoch-0 losses differ");
  t.expect(first.cv.ensemble.to_json().dump() == second.cv.ensemble.to_json().dump(), "ensemble reports differ");
  return t.outcome("fold plans, epoch-0 losses and ensemble report identical across two runs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path work;
  std::vector<int> only;
  bool keep = false;
  app.add_option("--work-dir", work, "Scratch directory (default: a fresh temp dir)");
  app.add_option("--only", only, "Run only these criteria (2-10)")->delimiter(',');
  app.add_flag("--keep", keep, "Keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  const bool own_dir = work.empty();
  if (own_dir) work = fs::temp_directory_path() / ("mpseq_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  std::map<int, Outcome> results;
  auto record = [&](int c, auto&& fn) {
    if (!wanted(c)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    results[c] = o;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c << ": " << o.detail << " ["
              << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  };

  record(3, criterion_preprocess_oracles);
  record(4, criterion_shape_contract);
  record(5, criterion_gradients);
  record(6, criterion_splits);
  record(7, criterion_metrics);
  record(9, [&] { return criterion_audit(work); });

  std::optional<PhantomRun> normal;
  if (wanted(2) || wanted(10)) {
    try {
      normal = run_phantom(work, "default", false);
    } catch (const std::exception& e) {
      std::cerr << "default phantom run failed: " << e.what() << "\n";
    }
  }
  record(8, [&] { return criterion_checkpoints(work, normal ? &*normal : nullptr); });
  record(2, [&] {
    if (!normal) return Outcome{false, "default phantom run failed"};
    return criterion_end_to_end(*normal, run_phantom(work, "hard", true));
  });
  record(10, [&] {
    if (!normal) return Outcome{false, "default phantom run failed"};
    return criterion_determinism(*normal, run_phantom(work, "repeat", false));
  });

  if (own_dir && !keep) fs::remove_all(work);
  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.second.pass; });
  std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
