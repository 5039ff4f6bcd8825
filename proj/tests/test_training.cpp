#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "mpseq/error.hpp"
#include "mpseq/phantom.hpp"
#include "mpseq/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mpseq;

namespace {

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back("P" + std::to_string(1000 + i));
  return v;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an mpseq::Error");
  return ErrorKind::InvalidConfig;
}

std::string error_text(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

constexpr std::array<std::size_t, 4> kTinyShape{1, 4, 8, 8};

// Five classes told apart by brightness; every patient has one of each.
Dataset tiny_dataset(std::size_t patients, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Dataset::Item> items;
  for (const auto& pid : ids(patients)) {
    for (std::size_t c = 0; c < 5; ++c) {
      Dataset::Item it;
      it.patient_id = pid;
      it.series_uid = pid + ".C" + std::to_string(c);
      it.label = c;
      it.input.resize(4 * 8 * 8);
      for (auto& x : it.input) x = std::clamp(0.2 * static_cast<double>(c) + rng.normal(0, 0.03), 0.0, 1.0);
      items.push_back(std::move(it));
    }
  }
  return Dataset("body", kTinyShape, std::move(items));
}

FoldContext tiny_context(std::size_t epochs) {
  FoldContext ctx;
  ctx.model = nn::ModelConfig::micro_densenet(5);
  ctx.model.input_shape = {4, 8, 8};
  ctx.model.seed = 1;
  ctx.train.epochs = epochs;
  ctx.train.learning_rate = 3e-3;
  ctx.train.seed = 2;
  ctx.preprocess_fingerprint = "fixture";
  ctx.preprocess = {{"fixture", true}};
  return ctx;
}

}  // namespace

TEST_CASE("patient split sizes") {
  auto s = split_patients(ids(1234), SplitSpec{0.7, 0.1, 0.2, 0});
  CHECK(s.train.size() == 864);
  CHECK(s.val.size() == 123);
  CHECK(s.test.size() == 247);
  s = split_patients(ids(10), SplitSpec{});
  CHECK(s.train.size() == 7);
  CHECK(s.val.size() == 1);
  CHECK(s.test.size() == 2);
  CHECK(kind_of([] { split_patients(ids(2), SplitSpec{}); }) == ErrorKind::TooFewPatients);
}

TEST_CASE("patient split is a seeded partition") {
  auto pool = ids(57);
  const auto a = split_patients(pool, SplitSpec{0.6, 0.2, 0.2, 4});
  std::reverse(pool.begin(), pool.end());
  const auto b = split_patients(pool, SplitSpec{0.6, 0.2, 0.2, 4});
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  const auto c = split_patients(pool, SplitSpec{0.6, 0.2, 0.2, 5});
  CHECK(a.train != c.train);

  std::set<std::string> seen;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (const auto& p : *part) CHECK(seen.insert(p).second);
  CHECK(seen.size() == 57);

  // Duplicate IDs (several studies per patient) collapse to one patient.
  auto dup = ids(20);
  dup.insert(dup.end(), dup.begin(), dup.begin() + 5);
  const auto d = split_patients(dup, SplitSpec{});
  CHECK(d.train.size() + d.val.size() + d.test.size() == 20);
}

TEST_CASE("split spec validation names the ratios") {
  CHECK(error_text([] { SplitSpec{0.6, 0.1, 0.2, 0}.validate(); }).find("ratios") != std::string::npos);
  CHECK(kind_of([] { SplitSpec{-0.1, 0.9, 0.2, 0}.validate(); }) == ErrorKind::InvalidConfig);
  const auto j = nlohmann::json{{"ratios", {0.8, 0.1, 0.1}}, {"seed", 9}};
  const auto s = SplitSpec::from_json(j);
  CHECK(s.seed == 9);
  CHECK(SplitSpec::from_json(nlohmann::json::parse(s.to_json().dump())).to_json() == s.to_json());
  CHECK(kind_of([] { SplitSpec::from_json({{"ratios", {0.5, 0.5}}}); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("fold plans partition the pool") {
  const auto pool = ids(10);
  const auto plan = make_folds(pool, 5, 3);
  REQUIRE(plan.folds.size() == 5);
  std::multiset<std::string> all;
  for (const auto& f : plan.folds) {
    CHECK(f.val.size() == 2);
    CHECK(f.train.size() == 8);
    for (const auto& v : f.val) {
      CHECK(std::find(f.train.begin(), f.train.end(), v) == f.train.end());
      all.insert(v);
    }
  }
  CHECK(all == std::multiset<std::string>(pool.begin(), pool.end()));

  std::vector<std::size_t> sizes;
  for (const auto& f : make_folds(ids(11), 5, 3).folds) sizes.push_back(f.val.size());
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{2, 2, 2, 2, 3});

  CHECK(kind_of([] { make_folds(ids(3), 5, 0); }) == ErrorKind::TooFewForK);
  CHECK(make_folds(pool, 5, 3) == plan);
  CHECK_FALSE(make_folds(pool, 5, 4) == plan);
}

TEST_CASE("k = 1 trains on the split's train part and validates on val") {
  const auto split = split_patients(ids(20), SplitSpec{0.7, 0.1, 0.2, 1});
  const auto plan = make_folds(split, 1, 1);
  REQUIRE(plan.folds.size() == 1);
  CHECK(plan.folds[0].train == split.train);
  CHECK(plan.folds[0].val == split.val);
  CHECK(plan.test == split.test);
  const auto five = make_folds(split, 5, 1);
  std::size_t pooled = 0;
  for (const auto& f : five.folds) pooled += f.val.size();
  CHECK(pooled == split.train.size() + split.val.size());
}

TEST_CASE("cross-entropy loss values") {
  nn::Tensor uniform({1, 5, 1, 1, 1}, 0.3);
  CHECK(compute_loss(uniform, {2}) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(std::abs(compute_loss(uniform, {2}) - 1.6094379124341003) < 1e-12);

  nn::Tensor sure({1, 5, 1, 1, 1}, 0.0);
  sure.data[3] = 30.0;
  CHECK(compute_loss(sure, {3}) < 1e-9);

  nn::Tensor z({1, 3, 1, 1, 1});
  z.data = {2.0, 1.0, 0.0};
  CHECK(std::abs(compute_loss(z, {0}) - oracle::softmax_cross_entropy({2, 1, 0}, 0)) < 1e-9);
  CHECK(std::abs(compute_loss(z, {0}) - 0.40760596444438) < 1e-9);

  CHECK(kind_of([&] { compute_loss(z, {3}); }) == ErrorKind::LabelOutOfRange);
}

TEST_CASE("loss gradient is (softmax - onehot) / N") {
  nn::Tensor z({2, 3, 1, 1, 1});
  z.data = {2.0, 1.0, 0.0, -1.0, 0.5, 0.25};
  nn::Tensor g;
  const double l = compute_loss(z, {0, 2}, g);
  CHECK(l == doctest::Approx(0.5 * (oracle::softmax_cross_entropy({2, 1, 0}, 0) +
                                    oracle::softmax_cross_entropy({-1, 0.5, 0.25}, 2))));
  const auto p = nn::softmax_rows(z);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const double onehot = (r == 0 && c == 0) || (r == 1 && c == 2) ? 1.0 : 0.0;
      CHECK(g.at(r, c) == doctest::Approx((p[r][c] - onehot) / 2.0));
    }
}

TEST_CASE("best epoch is the earliest maximum") {
  std::vector<EpochRecord> h;
  for (double a : {0.5, 0.9, 0.9, 0.8}) h.push_back({h.size(), 1.0, a});
  CHECK(select_best_epoch(h) == 1);
  CHECK(select_best_epoch({{0, 1.0, 0.0}}) == 0);
}

TEST_CASE("train config JSON is strict") {
  TrainConfig c;
  CHECK(c.batch_size == 2);
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.epochs == 25);
  const auto back = TrainConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  CHECK(back.to_json() == c.to_json());
  CHECK(kind_of([] { TrainConfig::from_json({{"momentum", 0.9}}); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { TrainConfig::from_json({{"loss", "mse"}}); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { TrainConfig::from_json({{"batch_size", 0}}); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("dataset selection and batching") {
  const auto data = tiny_dataset(4, 1);
  CHECK(data.size() == 20);
  const auto idx = data.select({"P1001", "P1003"});
  CHECK(idx.size() == 10);
  for (auto i : idx) CHECK((data.items()[i].patient_id == "P1001" || data.items()[i].patient_id == "P1003"));
  const auto b = data.batch({idx[0], idx[1]});
  CHECK(b.shape == std::array<std::size_t, 5>{2, 1, 4, 8, 8});
  CHECK(b.data[256] == data.items()[idx[1]].input[0]);
}

TEST_CASE("train_fold keeps the best validation epoch") {
  const auto data = tiny_dataset(6, 2);
  const Fold fold{{"P1000", "P1001", "P1002", "P1003"}, {"P1004", "P1005"}};
  const auto ctx = tiny_context(4);
  const auto r = train_fold(0, fold, ctx, data);
  REQUIRE(r.history.size() == 4);
  double best = 0.0;
  for (const auto& e : r.history) best = std::max(best, e.val_accuracy);
  CHECK(r.meta.best_validation_accuracy == best);
  CHECK(static_cast<std::size_t>(r.meta.best_epoch) == select_best_epoch(r.history));
  CHECK(r.history.back().train_loss < r.history.front().train_loss);

  // The stored state reproduces the best epoch's validation accuracy.
  nn::Model m(ctx.model);
  m.import_state(r.best_state);
  std::size_t correct = 0;
  const auto val = data.select(fold.val);
  for (const auto& p : predict_items(m, data, val)) correct += p.truth == p.predicted;
  CHECK(static_cast<double>(correct) / static_cast<double>(val.size()) == best);

  const auto again = train_fold(0, fold, ctx, data);
  CHECK(again.history[0].train_loss == r.history[0].train_loss);
  CHECK(again.best_state == r.best_state);

  CHECK(kind_of([&] { train_fold(0, Fold{{"P1000"}, {"P9999"}}, ctx, data); }) == ErrorKind::EmptyFold);
}

TEST_CASE("cross validation writes one checkpoint and report per fold") {
  testutil::TempDir dir("cv");
  const auto data = tiny_dataset(12, 3);
  CrossValidationOptions o;
  o.k = 5;
  o.split = SplitSpec{0.7, 0.1, 0.2, 6};
  o.context = tiny_context(2);
  o.run_dir = dir.path();
  o.jobs = 2;
  const auto cv = run_cross_validation(data, o);
  REQUIRE(cv.folds.size() == 5);
  const std::size_t test_series = data.select(cv.split.test).size();
  std::uint64_t counted = 0;
  for (std::size_t f = 0; f < 5; ++f) {
    const auto d = dir / ("fold" + std::to_string(f));
    CHECK(std::filesystem::exists(d / "checkpoint.ckpt"));
    CHECK(std::filesystem::exists(d / "test_report.json"));
    CHECK(std::filesystem::exists(d / "history.jsonl"));
    counted += cv.folds[f].test_report.n_samples;
    const auto ck = nn::load_checkpoint(d / "checkpoint.ckpt");
    CHECK(ck.meta.fold_id == static_cast<int>(f));
    CHECK(ck.meta.best_epoch == static_cast<int>(select_best_epoch(cv.folds[f].result.history)));
  }
  CHECK(counted == 5 * test_series);
  CHECK(cv.ensemble.aggregate.total() == 5 * test_series);
  for (const char* f : {"run.json", "plan.json", "ensemble.json", "confusion_matrix.csv", "misclassifications.json"})
    CHECK(std::filesystem::exists(dir / f));

  // No patient appears in two roles of one fold.
  for (const auto& f : cv.plan.folds) {
    std::set<std::string> seen;
    for (const auto* part : {&f.train, &f.val, &cv.plan.test})
      for (const auto& p : *part) CHECK(seen.insert(p).second);
  }

  o.k = 1;
  o.run_dir.reset();
  const auto one = run_cross_validation(data, o);
  CHECK(one.folds.size() == 1);
  CHECK(one.ensemble.f1.mean == one.folds[0].test_report.weighted.f1);
}

TEST_CASE("dataset from a phantom manifest") {
  testutil::TempDir dir("dataset");
  PhantomSpec spec = PhantomSpec::default_body();
  spec.seed = 9;
  const auto sum = generate_dataset(spec, 3, 1, dir.path());
  PreprocessConfig pc;
  pc.target_spacing = {6, 6, 10};
  pc.target_shape = {16, 16, 8};
  const auto data = Dataset::from_manifest(sum.manifest, pc, LabelSet::body(), 2);
  std::size_t series = 0;
  for (const auto& s : sum.manifest) series += s.series.size();
  CHECK(data.size() == series);
  CHECK(data.input_shape() == std::array<std::size_t, 4>{1, 8, 16, 16});
  for (const auto& it : data.items()) {
    CHECK(it.input.size() == 8u * 16 * 16);
    CHECK(it.series_uid.find(LabelSet::body().name(it.label)) != std::string::npos);
  }
}
