#include <doctest.h>

#include <cmath>

#include "mpseq/error.hpp"
#include "mpseq/evaluation.hpp"
#include "mpseq/random.hpp"
#include "oracles.hpp"

using namespace mpseq;

namespace {

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

constexpr std::size_t VDCE = 0, T2W = 1, T2FS = 2, DWI = 3, ADC = 4;

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an mpseq::Error");
  return ErrorKind::InvalidConfig;
}

const LabelSet& two_classes() {
  static const LabelSet set("pair", {"A", "B"});
  return set;
}

MetricsReport report_with_f1(double f1) {
  MetricsReport r;
  r.label_set_id = "body";
  r.weighted.f1 = f1;
  r.confusion = ConfusionMatrix(LabelSet::body());
  return r;
}

nn::LoadedCheckpoint checkpoint(std::uint64_t seed, const std::string& label_set, int classes = 5) {
  nn::ModelConfig cfg = nn::ModelConfig::micro_densenet(classes);
  cfg.input_shape = {4, 8, 8};
  cfg.seed = seed;
  PreprocessConfig pc;
  pc.target_spacing = {2, 2, 2};
  pc.target_shape = {8, 8, 4};
  nn::CheckpointMeta meta;
  meta.model = cfg;
  meta.label_set_id = label_set;
  meta.preprocess = pc.to_json();
  meta.preprocess_fingerprint = pc.fingerprint();
  return nn::LoadedCheckpoint{nn::Model(cfg), meta};
}

ModelInput probe_input(std::uint64_t seed) {
  ModelInput in;
  in.shape = {1, 4, 8, 8};
  Rng rng(seed);
  in.values.resize(256);
  for (auto& v : in.values) v = rng.uniform();
  return in;
}

}  // namespace

TEST_CASE("confusion matrix counting") {
  const auto& body = LabelSet::body();
  Pairs correct;
  for (std::size_t c = 0; c < 5; ++c) correct.emplace_back(c, c);
  auto cm = confusion_matrix(body, correct);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t p = 0; p < 5; ++p) CHECK(cm.counts[t][p] == (t == p ? 1u : 0u));

  Pairs with_errors = correct;
  for (int i = 0; i < 22; ++i) with_errors.emplace_back(DWI, T2FS);
  cm = confusion_matrix(body, with_errors);
  CHECK(cm.counts[DWI][T2FS] == 22);
  CHECK(cm.total() == 27);
  CHECK(cm.trace() == 5);

  const auto empty = confusion_matrix(body, {});
  CHECK(empty.total() == 0);
  CHECK(empty.size() == 5);
  CHECK(kind_of([&] { cm.add(5, 0); }) == ErrorKind::LabelOutOfRange);

  const auto back = ConfusionMatrix::from_json(nlohmann::json::parse(cm.to_json().dump()));
  CHECK(back.counts == cm.counts);
  CHECK(cm.to_csv().rfind("truth\\predicted,VDCE,T2W,T2FS,DWI,ADC\n", 0) == 0);
}

TEST_CASE("metrics on a perfect classifier are all one") {
  ConfusionMatrix cm(LabelSet::body());
  for (std::size_t c = 0; c < 5; ++c) cm.add(c, c, c + 1);
  const auto r = compute_metrics(cm);
  CHECK(r.accuracy == 1.0);
  for (const Averages* a : {&r.weighted, &r.macro}) {
    CHECK(a->precision == 1.0);
    CHECK(a->recall == 1.0);
    CHECK(a->f1 == 1.0);
  }
  CHECK_FALSE(r.flagged());
}

TEST_CASE("two-class metrics match the hand formulas") {
  ConfusionMatrix cm(two_classes());
  cm.counts = {{8, 2}, {1, 9}};
  const auto r = compute_metrics(cm);
  const double p0 = 8.0 / 9, r0 = 8.0 / 10, p1 = 9.0 / 11, r1 = 9.0 / 10;
  const double f0 = 2 * p0 * r0 / (p0 + r0), f1 = 2 * p1 * r1 / (p1 + r1);
  CHECK(std::abs(r.per_class[0].precision - p0) < 1e-9);
  CHECK(std::abs(r.per_class[0].recall - r0) < 1e-9);
  CHECK(std::abs(r.per_class[1].precision - p1) < 1e-9);
  CHECK(std::abs(r.per_class[1].recall - r1) < 1e-9);
  CHECK(std::abs(r.per_class[0].f1 - f0) < 1e-9);
  CHECK(std::abs(r.per_class[1].f1 - f1) < 1e-9);
  CHECK(std::abs(r.weighted.f1 - 0.5 * (f0 + f1)) < 1e-9);
  CHECK(std::abs(r.macro.precision - 0.5 * (p0 + p1)) < 1e-9);
  CHECK(std::abs(r.accuracy - 0.85) < 1e-12);
  // Frozen values of the same formulas.
  CHECK(std::abs(r.per_class[0].f1 - 0.8421052631578947) < 1e-12);
  CHECK(std::abs(r.per_class[1].f1 - 0.8571428571428571) < 1e-12);
  CHECK(std::abs(r.weighted.precision - 0.8535353535353536) < 1e-12);
}

TEST_CASE("metrics agree with the pairwise oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Pairs pairs(static_cast<std::size_t>(rng.integer(1, 60)));
    for (auto& [t, p] : pairs) {
      t = rng.index(5);
      p = rng.uniform() < 0.6 ? t : rng.index(5);
    }
    const auto r = compute_metrics(confusion_matrix(LabelSet::body(), pairs));
    const auto o = oracle::metrics_from_pairs(pairs, 5);
    CHECK(std::abs(r.accuracy - o.accuracy) < 1e-9);
    CHECK(std::abs(r.weighted.f1 - o.weighted_f1) < 1e-9);
    CHECK(std::abs(r.macro.recall - o.macro_recall) < 1e-9);
    CHECK(std::abs(r.accuracy - r.weighted.recall) < 1e-12);
  }
}

TEST_CASE("zero-support classes score zero and flag the report") {
  ConfusionMatrix cm(LabelSet::body());
  cm.add(VDCE, VDCE, 4);
  cm.add(T2W, T2W, 3);
  cm.add(T2W, ADC, 1);
  const auto r = compute_metrics(cm);
  CHECK(r.flagged());
  CHECK(r.zero_support == std::vector<std::string>{"T2FS", "DWI", "ADC"});
  CHECK(r.per_class[ADC].f1 == 0.0);
  CHECK(r.per_class[ADC].recall == 0.0);
  CHECK(kind_of([] { compute_metrics(ConfusionMatrix(LabelSet::body())); }) == ErrorKind::EmptyMatrix);

  const auto back = MetricsReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  CHECK(back.to_json() == r.to_json());
}

TEST_CASE("fold summaries") {
  const auto s = summarize({0.99, 0.995, 1.0, 0.99, 0.995});
  CHECK(s.mean == doctest::Approx(0.994).epsilon(1e-12));
  CHECK(s.min == 0.99);
  CHECK(s.max == 1.0);
  CHECK(s.sd == doctest::Approx(std::sqrt(0.00007 / 4)).epsilon(1e-9));
  CHECK(s.ci_low == doctest::Approx(s.mean - 1.96 * s.sd / std::sqrt(5.0)));
  CHECK(format_percent_range(s) == "99.40% (99.00%-100.00%)");

  FoldSummary table{0.995, 0.9929, 0.9971};
  CHECK(format_percent_range(table) == "99.50% (99.29%-99.71%)");

  const auto one = summarize({0.87});
  CHECK(one.mean == 0.87);
  CHECK(one.sd == 0.0);
  CHECK(one.ci_low == 0.87);

  // Order of folds does not move the mean by even one ulp.
  CHECK(summarize({0.1, 0.7, 0.2}).mean == summarize({0.7, 0.2, 0.1}).mean);
}

TEST_CASE("ensemble across folds") {
  const auto e = ensemble_metrics({report_with_f1(0.9), report_with_f1(1.0)});
  CHECK(e.f1.mean == doctest::Approx(0.95));
  CHECK(e.f1.min == 0.9);
  CHECK(e.folds.size() == 2);
  CHECK(e.summary_table().find("95.00% (90.00%-100.00%)") != std::string::npos);

  ConfusionMatrix a(LabelSet::body()), b(LabelSet::body());
  a.add(DWI, T2FS, 2);
  a.add(ADC, ADC, 1);
  b.add(DWI, T2FS, 1);
  b.add(VDCE, VDCE, 3);
  const auto agg = ensemble_metrics({compute_metrics(a), compute_metrics(b)}).aggregate;
  CHECK(agg.counts[DWI][T2FS] == 3);
  CHECK(agg.total() == 7);

  auto brain = report_with_f1(0.5);
  brain.label_set_id = "brain";
  CHECK(kind_of([&] { ensemble_metrics({report_with_f1(0.9), brain}); }) == ErrorKind::MixedLabelSets);
}

TEST_CASE("misclassification report ordering") {
  ConfusionMatrix cm(LabelSet::body());
  for (std::size_t c = 0; c < 5; ++c) cm.add(c, c, 10);
  CHECK(misclassification_report(cm).empty());

  cm.add(DWI, T2FS, 3);
  auto m = misclassification_report(cm);
  REQUIRE(m.size() == 1);
  CHECK(m[0].truth_name == "DWI");
  CHECK(m[0].predicted_name == "T2FS");
  CHECK(m[0].count == 3);

  cm.add(T2W, ADC, 3);
  cm.add(VDCE, T2W, 1);
  m = misclassification_report(cm);
  REQUIRE(m.size() == 3);
  CHECK(m[0].truth == T2W);  // ties resolved by (truth, predicted)
  CHECK(m[1].truth == DWI);
  CHECK(m[2].count == 1);
}

TEST_CASE("the 22-volume DWI to T2FS tally") {
  Pairs pairs;
  std::vector<PredictionRecord> preds;
  for (std::size_t c = 0; c < 5; ++c)
    for (int i = 0; i < 40; ++i) pairs.emplace_back(c, c);
  for (int i = 0; i < 22; ++i) {
    pairs.emplace_back(DWI, T2FS);
    preds.push_back({"dwi_" + std::to_string(i), DWI, T2FS, {}});
  }
  const auto m = misclassification_report(confusion_matrix(LabelSet::body(), pairs), preds);
  REQUIRE(m.size() == 1);
  CHECK(m[0].count == 22);
  CHECK(m[0].examples.size() == kMisclassificationExamples);
  CHECK(m[0].examples[0] == "dwi_0");
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax({0.2, 0.4, 0.4}) == 1);
  CHECK(argmax({1.0}) == 0);
}

TEST_CASE("ensemble probabilities") {
  const auto a = checkpoint(1, "body");
  const auto a_again = checkpoint(1, "body");
  const auto in = probe_input(3);
  const auto p = ensemble_probabilities({&a}, in);
  REQUIRE(p.size() == 5);
  double s = 0;
  for (double v : p) s += v;
  CHECK(std::abs(s - 1.0) < 1e-6);
  const auto pp = ensemble_probabilities({&a, &a_again}, in);
  for (std::size_t i = 0; i < 5; ++i) CHECK(pp[i] == doctest::Approx(p[i]).epsilon(1e-15));

  const auto brain = checkpoint(1, "brain", 4);
  CHECK(kind_of([&] { ensemble_probabilities({&a, &brain}, in); }) == ErrorKind::FingerprintMismatch);

  SeriesVolume v({16, 16, 8}, {1, 1, 1});
  for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = static_cast<double>(i % 13);
  const auto pred = predict_volume({&a}, v);
  CHECK(pred.label.label_set_id == "body");
  CHECK(pred.label.class_index == argmax(pred.probabilities));
}

TEST_CASE("audit buckets") {
  auto pred = [](std::size_t c) {
    Prediction p;
    p.label = SequenceLabel::from_index(LabelSet::body(), c);
    p.probabilities.assign(5, 0.0);
    p.probabilities[c] = 1.0;
    return p;
  };
  std::vector<AuditInput> items{
      {"s1", pred(T2W), SequenceLabel::from_name(LabelSet::body(), "T2W")},
      {"s2", pred(ADC), SequenceLabel::from_name(LabelSet::body(), "DWI")},
      {"s3", pred(VDCE), std::nullopt},
  };
  const auto r = audit_consistency("body", items);
  CHECK(r.agree == 1);
  CHECK(r.disagree == 1);
  CHECK(r.header_unknown == 1);
  REQUIRE(r.entries.size() == 3);
  CHECK(r.entries[1].status == AuditStatus::Disagree);
  CHECK(r.entries[1].predicted == "ADC");
  CHECK(r.entries[1].header_label == std::optional<std::string>("DWI"));
  CHECK(r.entries[2].status == AuditStatus::HeaderUnknown);
}

TEST_CASE("plots are SVG documents") {
  ConfusionMatrix cm(LabelSet::body());
  cm.add(DWI, T2FS, 2);
  cm.add(ADC, ADC, 5);
  const auto svg = confusion_matrix_svg(cm, "test");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("T2FS") != std::string::npos);
  const auto bars = fold_metrics_svg(ensemble_metrics({compute_metrics(cm), compute_metrics(cm)}));
  CHECK(bars.find("</svg>") != std::string::npos);
}
