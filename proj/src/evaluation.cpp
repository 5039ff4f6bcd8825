#include "mpseq/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mpseq/error.hpp"

namespace mpseq {

// ------------------------------------------------------- confusion matrix

ConfusionMatrix::ConfusionMatrix(const LabelSet& set)
    : label_set_id(set.id()),
      classes(set.classes()),
      counts(set.size(), std::vector<std::uint64_t>(set.size(), 0)) {}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (const auto& row : counts) s = std::accumulate(row.begin(), row.end(), s);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) s += counts[i][i];
  return s;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  if (truth >= size() || predicted >= size()) {
    throw Error(ErrorKind::LabelOutOfRange, "pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                                                ") outside label set '" + label_set_id + "'");
  }
  counts[truth][predicted] += n;
}

ordered_json ConfusionMatrix::to_json() const {
  ordered_json j;
  j["label_set"] = label_set_id;
  j["classes"] = classes;
  j["counts"] = counts;
  return j;
}

ConfusionMatrix ConfusionMatrix::from_json(const nlohmann::json& j) {
  ConfusionMatrix cm;
  cm.label_set_id = j.at("label_set").get<std::string>();
  cm.classes = j.at("classes").get<std::vector<std::string>>();
  cm.counts = j.at("counts").get<std::vector<std::vector<std::uint64_t>>>();
  if (cm.counts.size() != cm.classes.size()) throw Error(ErrorKind::InvalidConfig, "confusion matrix shape");
  for (const auto& row : cm.counts)
    if (row.size() != cm.classes.size()) throw Error(ErrorKind::InvalidConfig, "confusion matrix shape");
  return cm;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "truth\\predicted";
  for (const auto& c : classes) os << ',' << c;
  os << '\n';
  for (std::size_t t = 0; t < size(); ++t) {
    os << classes[t];
    for (auto v : counts[t]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix confusion_matrix(const LabelSet& set, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  ConfusionMatrix cm(set);
  for (const auto& [t, p] : pairs) cm.add(t, p);
  return cm;
}

// ---------------------------------------------------------------- metrics

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

ordered_json averages_json(const Averages& a) {
  return ordered_json{{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
}

Averages averages_from_json(const nlohmann::json& j) {
  return Averages{j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) throw Error(ErrorKind::EmptyMatrix, "confusion matrix has no entries");
  MetricsReport r;
  r.label_set_id = cm.label_set_id;
  r.n_samples = n;
  r.confusion = cm;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(n);
  const std::size_t C = cm.size();
  for (std::size_t c = 0; c < C; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < C; ++k) {
      row += cm.counts[c][k];
      col += cm.counts[k][c];
    }
    const double tp = static_cast<double>(cm.counts[c][c]);
    ClassMetrics m;
    m.name = cm.classes[c];
    m.support = row;
    m.precision = ratio(tp, static_cast<double>(col));
    m.recall = ratio(tp, static_cast<double>(row));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    if (row == 0) {
      m.precision = m.recall = m.f1 = 0.0;
      r.zero_support.push_back(m.name);
    }
    const double w = static_cast<double>(row) / static_cast<double>(n);
    r.weighted.precision += w * m.precision;
    r.weighted.recall += w * m.recall;
    r.weighted.f1 += w * m.f1;
    r.macro.precision += m.precision / static_cast<double>(C);
    r.macro.recall += m.recall / static_cast<double>(C);
    r.macro.f1 += m.f1 / static_cast<double>(C);
    r.per_class.push_back(std::move(m));
  }
  return r;
}

ordered_json MetricsReport::to_json() const {
  ordered_json j;
  j["label_set"] = label_set_id;
  j["n_samples"] = n_samples;
  j["accuracy"] = accuracy;
  j["weighted"] = averages_json(weighted);
  j["macro"] = averages_json(macro);
  ordered_json pc = ordered_json::array();
  for (const auto& m : per_class) {
    pc.push_back({{"class", m.name}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                  {"support", m.support}});
  }
  j["per_class"] = std::move(pc);
  j["zero_support"] = zero_support;
  j["confusion_matrix"] = confusion.to_json();
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.label_set_id = j.at("label_set").get<std::string>();
  r.n_samples = j.at("n_samples").get<std::uint64_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.weighted = averages_from_json(j.at("weighted"));
  r.macro = averages_from_json(j.at("macro"));
  for (const auto& m : j.at("per_class")) {
    r.per_class.push_back(ClassMetrics{m.at("class").get<std::string>(), m.at("precision").get<double>(),
                                       m.at("recall").get<double>(), m.at("f1").get<double>(),
                                       m.at("support").get<std::uint64_t>()});
  }
  r.zero_support = j.at("zero_support").get<std::vector<std::string>>();
  r.confusion = ConfusionMatrix::from_json(j.at("confusion_matrix"));
  return r;
}

// --------------------------------------------------------------- ensemble

FoldSummary summarize(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorKind::EmptyMatrix, "no fold values to summarize");
  FoldSummary s;
  const double k = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / (k - 1.0));
  }
  const double half = 1.96 * s.sd / std::sqrt(k);
  s.ci_low = s.mean - half;
  s.ci_high = s.mean + half;
  return s;
}

std::string format_percent_range(const FoldSummary& s) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.2f%% (%.2f%%-%.2f%%)", 100.0 * s.mean, 100.0 * s.min, 100.0 * s.max);
  return buf;
}

namespace {

// Fixed-order sum so the mean does not depend on fold order beyond rounding.
std::vector<double> collect(const std::vector<MetricsReport>& r, double MetricsReport::*field) {
  std::vector<double> v;
  for (const auto& m : r) v.push_back(m.*field);
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<double> collect(const std::vector<MetricsReport>& r, Averages MetricsReport::*avg, double Averages::*field) {
  std::vector<double> v;
  for (const auto& m : r) v.push_back(m.*avg.*field);
  std::sort(v.begin(), v.end());
  return v;
}

ordered_json summary_json(const FoldSummary& s) {
  return ordered_json{{"mean", s.mean}, {"min", s.min},         {"max", s.max},
                      {"sd", s.sd},     {"ci95_low", s.ci_low}, {"ci95_high", s.ci_high}};
}

}  // namespace

EnsembleReport ensemble_metrics(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw Error(ErrorKind::EmptyMatrix, "ensemble of zero folds");
  EnsembleReport e;
  e.label_set_id = reports.front().label_set_id;
  e.aggregate = reports.front().confusion;
  for (auto& row : e.aggregate.counts) std::fill(row.begin(), row.end(), 0);
  for (const auto& r : reports) {
    if (r.label_set_id != e.label_set_id || r.confusion.classes != e.aggregate.classes) {
      throw Error(ErrorKind::MixedLabelSets, "fold label set '" + r.label_set_id + "' differs from '" +
                                                 e.label_set_id + "'");
    }
    for (std::size_t t = 0; t < e.aggregate.size(); ++t)
      for (std::size_t p = 0; p < e.aggregate.size(); ++p) e.aggregate.counts[t][p] += r.confusion.counts[t][p];
  }
  e.folds = reports;
  e.accuracy = summarize(collect(reports, &MetricsReport::accuracy));
  e.precision = summarize(collect(reports, &MetricsReport::weighted, &Averages::precision));
  e.recall = summarize(collect(reports, &MetricsReport::weighted, &Averages::recall));
  e.f1 = summarize(collect(reports, &MetricsReport::weighted, &Averages::f1));
  e.macro_precision = summarize(collect(reports, &MetricsReport::macro, &Averages::precision));
  e.macro_recall = summarize(collect(reports, &MetricsReport::macro, &Averages::recall));
  e.macro_f1 = summarize(collect(reports, &MetricsReport::macro, &Averages::f1));
  return e;
}

ordered_json EnsembleReport::to_json() const {
  ordered_json j;
  j["label_set"] = label_set_id;
  j["k"] = folds.size();
  j["weighted"] = {{"accuracy", summary_json(accuracy)},
                   {"precision", summary_json(precision)},
                   {"recall", summary_json(recall)},
                   {"f1", summary_json(f1)}};
  j["macro"] = {{"precision", summary_json(macro_precision)},
                {"recall", summary_json(macro_recall)},
                {"f1", summary_json(macro_f1)}};
  j["formatted"] = {{"accuracy", format_percent_range(accuracy)},
                    {"precision", format_percent_range(precision)},
                    {"recall", format_percent_range(recall)},
                    {"f1", format_percent_range(f1)}};
  j["aggregate_confusion_matrix"] = aggregate.to_json();
  ordered_json fj = ordered_json::array();
  for (const auto& f : folds) fj.push_back(f.to_json());
  j["folds"] = std::move(fj);
  return j;
}

std::string EnsembleReport::summary_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s  %-26s  %s\n", "metric", "mean (min-max)", "95% interval");
  os << line;
  const std::pair<const char*, const FoldSummary*> rows[] = {
      {"accuracy", &accuracy}, {"precision", &precision}, {"recall", &recall}, {"f1", &f1}};
  for (const auto& [name, s] : rows) {
    std::snprintf(line, sizeof line, "%-10s  %-26s  [%.2f%%, %.2f%%]\n", name, format_percent_range(*s).c_str(),
                  100.0 * s->ci_low, 100.0 * s->ci_high);
    os << line;
  }
  std::snprintf(line, sizeof line, "macro f1    %s\n", format_percent_range(macro_f1).c_str());
  os << line;
  os << "folds: " << folds.size() << ", aggregate classifications: " << aggregate.total() << '\n';
  return os.str();
}

// ------------------------------------------------------- misclassification

ordered_json to_json(const PredictionRecord& p) {
  ordered_json j;
  j["series_uid"] = p.series_uid;
  j["truth"] = p.truth;
  j["predicted"] = p.predicted;
  j["probabilities"] = p.probabilities;
  return j;
}

PredictionRecord prediction_record_from_json(const nlohmann::json& j) {
  return PredictionRecord{j.at("series_uid").get<std::string>(), j.at("truth").get<std::size_t>(),
                          j.at("predicted").get<std::size_t>(), j.at("probabilities").get<std::vector<double>>()};
}

std::vector<MisclassificationEntry> misclassification_report(const ConfusionMatrix& cm,
                                                             const std::vector<PredictionRecord>& predictions) {
  std::vector<MisclassificationEntry> out;
  for (std::size_t t = 0; t < cm.size(); ++t) {
    for (std::size_t p = 0; p < cm.size(); ++p) {
      if (t == p || cm.counts[t][p] == 0) continue;
      MisclassificationEntry e{t, p, cm.classes[t], cm.classes[p], cm.counts[t][p], {}};
      for (const auto& r : predictions) {
        if (e.examples.size() >= kMisclassificationExamples) break;
        if (r.truth == t && r.predicted == p) e.examples.push_back(r.series_uid);
      }
      out.push_back(std::move(e));
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const MisclassificationEntry& a, const MisclassificationEntry& b) { return a.count > b.count; });
  return out;
}

ordered_json to_json(const std::vector<MisclassificationEntry>& entries) {
  ordered_json j = ordered_json::array();
  for (const auto& e : entries) {
    j.push_back({{"truth", e.truth_name}, {"predicted", e.predicted_name}, {"count", e.count},
                 {"examples", e.examples}});
  }
  return j;
}

// -------------------------------------------------------------- prediction

std::size_t argmax(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<double> ensemble_probabilities(const std::vector<const nn::LoadedCheckpoint*>& checkpoints,
                                           const ModelInput& input) {
  if (checkpoints.empty()) throw Error(ErrorKind::InvalidConfig, "no checkpoints given");
  const auto& first = checkpoints.front()->meta;
  for (const auto* ck : checkpoints) {
    if (ck->meta.label_set_id != first.label_set_id) {
      throw Error(ErrorKind::FingerprintMismatch, "checkpoints trained on different label sets ('" +
                                                      first.label_set_id + "' vs '" + ck->meta.label_set_id + "')");
    }
    if (ck->meta.preprocess_fingerprint != first.preprocess_fingerprint) {
      throw Error(ErrorKind::FingerprintMismatch, "checkpoints use different preprocessing");
    }
    if (ck->meta.model.num_classes != first.model.num_classes) {
      throw Error(ErrorKind::FingerprintMismatch, "checkpoints disagree on the number of classes");
    }
  }
  nn::Tensor x({1, input.shape[0], input.shape[1], input.shape[2], input.shape[3]});
  x.data = input.values;
  std::vector<double> mean(static_cast<std::size_t>(first.model.num_classes), 0.0);
  for (const auto* ck : checkpoints) {
    const auto p = nn::softmax_rows(ck->model.infer(x));
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p[0][c];
  }
  for (auto& v : mean) v /= static_cast<double>(checkpoints.size());
  return mean;
}

Prediction predict_volume(const std::vector<const nn::LoadedCheckpoint*>& checkpoints, const SeriesVolume& v) {
  if (checkpoints.empty()) throw Error(ErrorKind::InvalidConfig, "no checkpoints given");
  const auto cfg = PreprocessConfig::from_json(checkpoints.front()->meta.preprocess);
  Prediction out;
  out.probabilities = ensemble_probabilities(checkpoints, preprocess_pipeline(v, cfg));
  out.label = SequenceLabel::from_index(LabelSet::by_id(checkpoints.front()->meta.label_set_id),
                                        argmax(out.probabilities));
  return out;
}

// ------------------------------------------------------------------ audit

std::string to_string(AuditStatus s) {
  switch (s) {
    case AuditStatus::Agree: return "agree";
    case AuditStatus::Disagree: return "disagree";
    case AuditStatus::HeaderUnknown: return "header_unknown";
  }
  return "?";
}

AuditReport audit_consistency(const std::string& label_set_id, const std::vector<AuditInput>& items) {
  AuditReport r;
  r.label_set_id = label_set_id;
  for (const auto& it : items) {
    AuditEntry e;
    e.series_uid = it.series_uid;
    e.predicted = it.prediction.label.value;
    e.probabilities = it.prediction.probabilities;
    if (!it.header_label) {
      e.status = AuditStatus::HeaderUnknown;
      ++r.header_unknown;
    } else {
      e.header_label = it.header_label->value;
      if (it.header_label->class_index == it.prediction.label.class_index) {
        e.status = AuditStatus::Agree;
        ++r.agree;
      } else {
        e.status = AuditStatus::Disagree;
        ++r.disagree;
      }
    }
    r.entries.push_back(std::move(e));
  }
  return r;
}

ordered_json AuditReport::to_json() const {
  ordered_json j;
  j["label_set"] = label_set_id;
  j["summary"] = {{"agree", agree}, {"disagree", disagree}, {"header_unknown", header_unknown}};
  ordered_json dis = ordered_json::array();
  ordered_json all = ordered_json::array();
  for (const auto& e : entries) {
    ordered_json row;
    row["series_uid"] = e.series_uid;
    row["status"] = to_string(e.status);
    row["predicted"] = e.predicted;
    row["header_label"] = e.header_label ? ordered_json(*e.header_label) : ordered_json(nullptr);
    row["probabilities"] = e.probabilities;
    if (e.status == AuditStatus::Disagree) dis.push_back(row);
    all.push_back(std::move(row));
  }
  j["disagreements"] = std::move(dis);
  j["series"] = std::move(all);
  return j;
}

// ------------------------------------------------------------------ plots

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string confusion_matrix_svg(const ConfusionMatrix& cm, const std::string& title) {
  const int cell = 56, left = 90, top = 60;
  const int n = static_cast<int>(cm.size());
  const int width = left + n * cell + 20, height = top + n * cell + 50;
  std::uint64_t peak = 1;
  for (const auto& row : cm.counts)
    for (auto v : row) peak = std::max(peak, v);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << escape_xml(title) << "</text>\n";
  os << "<text x=\"" << left << "\" y=\"40\">predicted</text>\n";
  for (int p = 0; p < n; ++p) {
    os << "<text x=\"" << left + p * cell + cell / 2 << "\" y=\"" << top - 4 << "\" text-anchor=\"middle\">"
       << escape_xml(cm.classes[static_cast<std::size_t>(p)]) << "</text>\n";
  }
  for (int t = 0; t < n; ++t) {
    os << "<text x=\"" << left - 6 << "\" y=\"" << top + t * cell + cell / 2 + 4 << "\" text-anchor=\"end\">"
       << escape_xml(cm.classes[static_cast<std::size_t>(t)]) << "</text>\n";
    for (int p = 0; p < n; ++p) {
      const auto v = cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
      const int shade = 255 - static_cast<int>(std::lround(200.0 * static_cast<double>(v) / static_cast<double>(peak)));
      os << "<rect x=\"" << left + p * cell << "\" y=\"" << top + t * cell << "\" width=\"" << cell << "\" height=\""
         << cell << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"#888\"/>\n";
      os << "<text x=\"" << left + p * cell + cell / 2 << "\" y=\"" << top + t * cell + cell / 2 + 4
         << "\" text-anchor=\"middle\">" << v << "</text>\n";
    }
  }
  os << "<text x=\"10\" y=\"" << top + n * cell + 30 << "\">rows: truth</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string fold_metrics_svg(const EnsembleReport& report) {
  const char* names[] = {"accuracy", "precision", "recall", "f1"};
  const int k = static_cast<int>(report.folds.size());
  const int bar = 14, group_gap = 30, left = 50, top = 40, plot_h = 200;
  const int group_w = k * bar + group_gap;
  const int width = left + 4 * group_w + 20, height = top + plot_h + 60;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">per-fold metrics (weighted)</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - 10 << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const int y = top + plot_h - tick * plot_h / 4;
    os << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << tick * 25 << "%</text>\n";
  }
  for (int m = 0; m < 4; ++m) {
    for (int f = 0; f < k; ++f) {
      const auto& r = report.folds[static_cast<std::size_t>(f)];
      const double v = m == 0 ? r.accuracy : m == 1 ? r.weighted.precision : m == 2 ? r.weighted.recall : r.weighted.f1;
      const int h = static_cast<int>(std::lround(v * plot_h));
      os << "<rect x=\"" << left + m * group_w + f * bar << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar - 2
         << "\" height=\"" << h << "\" fill=\"#4a78b5\"/>\n";
    }
    os << "<text x=\"" << left + m * group_w + k * bar / 2 << "\" y=\"" << top + plot_h + 18
       << "\" text-anchor=\"middle\">" << names[m] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace mpseq
