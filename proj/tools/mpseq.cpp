// mpseq: command-line front end for ingestion, training, prediction,
// evaluation, auditing, phantom synthesis and reporting.
//
// Exit codes: 0 success, 1 internal error, 2 bad input.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "mpseq/error.hpp"
#include "mpseq/evaluation.hpp"
#include "mpseq/ingestion.hpp"
#include "mpseq/parallel.hpp"
#include "mpseq/phantom.hpp"
#include "mpseq/run_config.hpp"
#include "mpseq/training.hpp"

namespace fs = std::filesystem;
using namespace mpseq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitBadInput = 2;

constexpr const char* kDataRootEnv = "MPSEQ_DATA_ROOT";

struct Globals {
  bool quiet = false;
  bool json = false;
  unsigned jobs = 1;
  bool jobs_set = false;
};

Globals g;

void info(const std::string& line) {
  if (!g.quiet) std::cerr << line << "\n";
}

std::optional<fs::path> env_data_root() {
  const char* v = std::getenv(kDataRootEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return fs::path(v);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::UnreadableFile, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

std::vector<std::string> string_list(const nlohmann::json& j) { return j.get<std::vector<std::string>>(); }

std::vector<fs::path> fold_dirs(const fs::path& run_dir) {
  std::vector<fs::path> dirs;
  for (std::size_t i = 0;; ++i) {
    const fs::path d = run_dir / ("fold" + std::to_string(i));
    if (!fs::is_directory(d)) break;
    dirs.push_back(d);
  }
  if (dirs.empty()) throw Error(ErrorKind::UnreadableFile, "no fold directories under " + run_dir.string());
  return dirs;
}

std::vector<nn::LoadedCheckpoint> load_checkpoints(const std::vector<std::string>& paths) {
  std::vector<nn::LoadedCheckpoint> out;
  for (const auto& p : paths) out.push_back(nn::load_checkpoint(p));
  return out;
}

std::vector<const nn::LoadedCheckpoint*> pointers(const std::vector<nn::LoadedCheckpoint>& v) {
  std::vector<const nn::LoadedCheckpoint*> out;
  for (const auto& c : v) out.push_back(&c);
  return out;
}

LabelRuleTable rules_for(const std::string& label_set, const std::optional<fs::path>& rules_path) {
  return rules_path ? LabelRuleTable::load(*rules_path) : LabelRuleTable::default_for(label_set);
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string root;
  std::string out;
  std::string rules;
  std::string label_set = "body";
  bool sidecar = false;
};

int cmd_ingest(const IngestArgs& a) {
  fs::path root = a.root.empty() ? env_data_root().value_or(fs::path()) : fs::path(a.root);
  if (root.empty()) throw Error(ErrorKind::InvalidConfig, std::string("no data root given and ") + kDataRootEnv + " unset");
  if (!fs::is_directory(root)) throw Error(ErrorKind::UnreadableFile, "data root " + root.string() + " is not a directory");
  const LabelSet& set = LabelSet::by_id(a.label_set);
  LabelSource src;
  src.rules = rules_for(a.label_set, a.rules.empty() ? std::nullopt : std::optional<fs::path>(a.rules));
  if (a.sidecar) src.mode = LabelSource::Mode::Sidecar;
  const ManifestBuild build = build_manifest(root, src, set, g.jobs);
  const fs::path out = a.out.empty() ? root / "manifest.jsonl" : fs::path(a.out);
  write_manifest(out, build.studies);

  std::size_t series = 0;
  for (const auto& s : build.studies) series += s.series.size();
  if (g.json) {
    ordered_json j;
    j["manifest"] = out.string();
    j["studies"] = build.studies.size();
    j["series"] = series;
    j["flagged"] = build.flagged();
    j["rejected"] = build.rejected();
    j["unassigned"] = build.unassigned.size();
    std::cout << j.dump() << "\n";
  } else {
    std::cout << "studies " << build.studies.size() << ", series " << series << ", flagged " << build.flagged()
              << ", rejected " << build.rejected() << ", unassigned " << build.unassigned.size() << "\n"
              << "manifest written to " << out.string() << "\n";
  }
  return kExitOk;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data_root;
  std::string run_dir;
};

// Manifest of a run: explicit path, <data_root>/manifest.jsonl, or a fresh scan.
std::pair<std::vector<StudyRecord>, fs::path> resolve_manifest(const RunConfig& cfg) {
  if (cfg.paths.manifest) return {read_manifest(*cfg.paths.manifest), *cfg.paths.manifest};
  if (!cfg.paths.data_root) {
    throw Error(ErrorKind::InvalidConfig,
                std::string("'paths' needs data_root or manifest (or set ") + kDataRootEnv + ")");
  }
  const fs::path m = *cfg.paths.data_root / "manifest.jsonl";
  if (fs::exists(m)) return {read_manifest(m), m};
  info("scanning " + cfg.paths.data_root->string());
  LabelSource src;
  src.rules = rules_for(cfg.label_set, cfg.paths.label_rules);
  ManifestBuild build = build_manifest(*cfg.paths.data_root, src, LabelSet::by_id(cfg.label_set), cfg.jobs);
  write_manifest(m, build.studies);
  return {std::move(build.studies), m};
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = RunConfig::load(a.config);
  if (a.seed) cfg.set_seed(*a.seed);
  if (g.jobs_set) cfg.jobs = g.jobs;
  if (!a.data_root.empty()) {
    cfg.paths.data_root = fs::path(a.data_root);
    cfg.paths.manifest.reset();
  } else if (!cfg.paths.data_root && !cfg.paths.manifest) {
    cfg.paths.data_root = env_data_root();
  }
  if (!a.run_dir.empty()) cfg.paths.run_dir = a.run_dir;

  const auto [manifest, manifest_path] = resolve_manifest(cfg);
  const LabelSet& set = LabelSet::by_id(cfg.label_set);
  info("preprocessing");
  const Dataset data = Dataset::from_manifest(manifest, cfg.preprocess, set, cfg.jobs);
  info("dataset: " + std::to_string(data.size()) + " labeled series");

  CrossValidationOptions o;
  o.k = cfg.k;
  o.split = cfg.split;
  o.label_set_id = cfg.label_set;
  o.jobs = cfg.jobs;
  o.run_dir = cfg.paths.run_dir;
  o.context.model = cfg.model;
  o.context.train = cfg.train;
  o.context.preprocess = cfg.preprocess.to_json();
  o.context.preprocess_fingerprint = cfg.preprocess.fingerprint();
  if (!g.quiet) {
    o.context.on_epoch = [](std::size_t fold, const EpochRecord& r) {
      std::ostringstream s;
      s.setf(std::ios::fixed);
      s.precision(4);
      s << "fold " << fold << " epoch " << r.epoch << " loss " << r.train_loss << " val_acc " << r.val_accuracy;
      std::cerr << s.str() << "\n";
    };
  }
  o.run_info["config"] = cfg.to_json();
  o.run_info["manifest"] = manifest_path.string();

  const CrossValidationResult cv = run_cross_validation(data, o);
  if (g.json) {
    std::cout << cv.ensemble.to_json().dump() << "\n";
  } else {
    std::cout << cv.ensemble.summary_table() << "run written to " << cfg.paths.run_dir.string() << "\n";
  }
  return kExitOk;
}

// --------------------------------------------------------------- predict

struct PredictArgs {
  std::vector<std::string> checkpoints;
  std::string volume;
};

int cmd_predict(const PredictArgs& a) {
  const auto ckpts = load_checkpoints(a.checkpoints);
  const SeriesVolume v = load_volume_file(a.volume);
  const Prediction p = predict_volume(pointers(ckpts), v);
  ordered_json j;
  j["volume"] = a.volume;
  j["label"] = p.label.value;
  j["label_set"] = p.label.label_set_id;
  j["classes"] = LabelSet::by_id(p.label.label_set_id).classes();
  j["probabilities"] = p.probabilities;
  std::cout << j.dump(g.json ? -1 : 2) << "\n";
  return kExitOk;
}

// -------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string run_dir;
  std::string manifest;
};

// Re-run every fold checkpoint on the run's test patients.
int cmd_evaluate(const EvaluateArgs& a) {
  const fs::path run_dir = a.run_dir;
  const auto run = read_json(run_dir / "run.json");
  const auto plan = read_json(run_dir / "plan.json");
  fs::path manifest_path;
  if (!a.manifest.empty()) {
    manifest_path = a.manifest;
  } else if (run.contains("manifest")) {
    manifest_path = run.at("manifest").get<std::string>();
  } else {
    throw Error(ErrorKind::InvalidConfig, "run.json has no manifest; pass --manifest");
  }
  const auto test = string_list(plan.at("test"));

  std::vector<fs::path> ckpt_paths;
  for (const auto& d : fold_dirs(run_dir)) ckpt_paths.push_back(d / "checkpoint.ckpt");
  std::vector<nn::LoadedCheckpoint> ckpts;
  for (const auto& p : ckpt_paths) ckpts.push_back(nn::load_checkpoint(p));
  const auto& meta = ckpts.front().meta;
  const PreprocessConfig pc = PreprocessConfig::from_json(meta.preprocess);
  const LabelSet& set = LabelSet::by_id(meta.label_set_id);

  info("preprocessing test split");
  std::vector<StudyRecord> manifest = read_manifest(manifest_path);
  const std::set<std::string> test_set(test.begin(), test.end());
  std::erase_if(manifest, [&](const StudyRecord& s) { return !test_set.count(s.patient_id); });
  const Dataset data = Dataset::from_manifest(manifest, pc, set, g.jobs);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  std::vector<MetricsReport> reports(ckpts.size());
  parallel_for(ckpts.size(), g.jobs, [&](std::size_t f) {
    if (ckpts[f].meta.preprocess_fingerprint != meta.preprocess_fingerprint ||
        ckpts[f].meta.label_set_id != meta.label_set_id) {
      throw Error(ErrorKind::FingerprintMismatch, "fold checkpoints disagree on preprocessing or label set");
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& p : predict_items(ckpts[f].model, data, idx)) pairs.emplace_back(p.truth, p.predicted);
    reports[f] = compute_metrics(confusion_matrix(set, pairs));
  });
  const EnsembleReport ens = ensemble_metrics(reports);

  // Soft-voting ensemble of all folds, as used by predict and audit.
  std::vector<std::pair<std::size_t, std::size_t>> voted;
  const auto ptrs = pointers(ckpts);
  for (const auto& item : data.items()) {
    ModelInput in;
    in.shape = data.input_shape();
    in.values = item.input;
    voted.emplace_back(item.label, argmax(ensemble_probabilities(ptrs, in)));
  }
  const MetricsReport voted_report = compute_metrics(confusion_matrix(set, voted));

  ordered_json out;
  out["manifest"] = manifest_path.string();
  out["test_series"] = data.size();
  out["folds"] = ens.to_json();
  out["soft_vote"] = voted_report.to_json();
  write_text_file(run_dir / "evaluation.json", out.dump(2) + "\n");
  if (g.json) {
    std::cout << out.dump() << "\n";
  } else {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << ens.summary_table() << "soft vote over " << ckpts.size() << " folds: accuracy "
      << 100.0 * voted_report.accuracy << "%, f1 " << 100.0 * voted_report.weighted.f1 << "%\n";
    std::cout << s.str();
  }
  return kExitOk;
}

// ----------------------------------------------------------------- audit

struct AuditArgs {
  std::string manifest;
  std::vector<std::string> checkpoints;
  std::string rules;
  std::string label_set;
  std::string out;
};

int cmd_audit(const AuditArgs& a) {
  const auto manifest = read_manifest(a.manifest);
  const auto ckpts = load_checkpoints(a.checkpoints);
  std::string label_set = a.label_set;
  if (label_set.empty()) label_set = ckpts.empty() ? "body" : ckpts.front().meta.label_set_id;
  const LabelSet& set = LabelSet::by_id(label_set);
  const LabelRuleTable rules = rules_for(label_set, a.rules.empty() ? std::nullopt : std::optional<fs::path>(a.rules));
  ConflictRuleSet conflict_rules = ConflictRuleSet::defaults(label_set);
  conflict_rules.label_rules = rules;

  ordered_json out;
  out["manifest"] = a.manifest;
  std::size_t conflicted = 0;
  ordered_json studies = ordered_json::array();
  for (const auto& s : manifest) {
    const ConflictReport r = detect_conflicts(s, conflict_rules);
    if (r.passed()) continue;
    ++conflicted;
    studies.push_back(to_json(r));
  }
  out["header_conflicts"] = {{"studies_checked", manifest.size()}, {"studies_flagged", conflicted},
                             {"reports", studies}};

  std::optional<AuditReport> report;
  if (!ckpts.empty()) {
    std::vector<const SeriesEntry*> series;
    for (const auto& s : manifest)
      for (const auto& e : s.series) series.push_back(&e);
    std::vector<AuditInput> items(series.size());
    const auto ptrs = pointers(ckpts);
    parallel_for(series.size(), g.jobs, [&](std::size_t i) {
      const SeriesEntry& e = *series[i];
      items[i].series_uid = e.series_uid;
      items[i].prediction = predict_volume(ptrs, load_series(e.locator));
      const auto label = infer_label_from_headers(e.header, rules);
      if (label && label->label_set_id == set.id()) items[i].header_label = label;
    });
    report = audit_consistency(label_set, items);
    out["consistency"] = report->to_json();
  }

  if (!a.out.empty()) write_text_file(a.out, out.dump(2) + "\n");
  if (g.json) {
    std::cout << out.dump() << "\n";
  } else {
    std::cout << "studies " << manifest.size() << ", header conflicts in " << conflicted << "\n";
    if (report) {
      std::cout << "model vs header: agree " << report->agree << ", disagree " << report->disagree
                << ", header unknown " << report->header_unknown << "\n";
    }
  }
  return kExitOk;
}

// ----------------------------------------------------------------- synth

struct SynthArgs {
  std::string spec;
  std::string out;
  bool hard = false;
  std::size_t patients = 50;
  std::size_t studies = 1;
  std::optional<std::uint64_t> seed;
  std::optional<double> conflicts;
};

int cmd_synth(const SynthArgs& a) {
  PhantomSpec spec = a.spec.empty() ? (a.hard ? PhantomSpec::hard_body() : PhantomSpec::default_body())
                                    : PhantomSpec::from_json(read_json(a.spec));
  if (a.hard) spec.hard = true;
  if (a.seed) spec.seed = *a.seed;
  if (a.conflicts) spec.conflict_fraction = *a.conflicts;
  spec.validate();
  const DatasetSummary sum = generate_dataset(spec, a.patients, a.studies, a.out, g.jobs);
  std::size_t series = 0;
  for (const auto& s : sum.manifest) series += s.series.size();
  if (g.json) {
    ordered_json j;
    j["root"] = a.out;
    j["studies"] = sum.manifest.size();
    j["series"] = series;
    j["conflict_studies"] = sum.conflict_studies;
    std::cout << j.dump() << "\n";
  } else {
    std::cout << "wrote " << sum.manifest.size() << " studies (" << series << " series, "
              << sum.conflict_studies.size() << " with header conflicts) to " << a.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::string run_dir;
  bool plots = false;
};

std::string per_class_table(const EnsembleReport& e) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "class       f1 mean (min-max)\n";
  for (std::size_t c = 0; c < e.aggregate.classes.size(); ++c) {
    std::vector<double> f1;
    for (const auto& f : e.folds) f1.push_back(f.per_class[c].f1);
    std::string name = e.aggregate.classes[c];
    name.resize(std::max<std::size_t>(name.size(), 12), ' ');
    s << name << format_percent_range(summarize(f1)) << "\n";
  }
  return s.str();
}

int cmd_report(const ReportArgs& a) {
  const fs::path run_dir = a.run_dir;
  std::vector<MetricsReport> reports;
  for (const auto& d : fold_dirs(run_dir)) reports.push_back(MetricsReport::from_json(read_json(d / "test_report.json")));
  const EnsembleReport e = ensemble_metrics(reports);

  std::string text = e.summary_table();
  text += "\n" + per_class_table(e) + "\nconfusion matrix (rows truth, columns predicted)\n" + e.aggregate.to_csv();
  const auto mis = misclassification_report(e.aggregate);
  if (!mis.empty()) {
    text += "\nmost frequent confusions\n";
    for (std::size_t i = 0; i < mis.size() && i < 5; ++i)
      text += mis[i].truth_name + " -> " + mis[i].predicted_name + ": " + std::to_string(mis[i].count) + "\n";
  }
  write_text_file(run_dir / "report.txt", text);
  if (a.plots) {
    write_text_file(run_dir / "confusion_matrix.svg", confusion_matrix_svg(e.aggregate, "aggregate over folds"));
    write_text_file(run_dir / "fold_metrics.svg", fold_metrics_svg(e));
  }
  if (g.json) {
    ordered_json j = e.to_json();
    j["f1_range"] = format_percent_range(e.f1);
    std::cout << j.dump() << "\n";
  } else {
    std::cout << text;
  }
  return kExitOk;
}

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::NonFiniteLoss:
      return kExitInternal;
    default:
      return kExitBadInput;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence classification pipeline for multi-parametric MRI"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress output");
  app.add_flag("--json", g.json, "Machine-readable output on stdout");
  app.add_option("-j,--jobs", g.jobs, "Parallel workers")->check(CLI::PositiveNumber);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Scan a data root and write the manifest");
  c_ingest->add_option("root", ingest.root, std::string("Data root (default $") + kDataRootEnv + ")");
  c_ingest->add_option("-o,--out", ingest.out, "Manifest path (default <root>/manifest.jsonl)");
  c_ingest->add_option("--rules", ingest.rules, "Label rule table (JSON)");
  c_ingest->add_option("--label-set", ingest.label_set, "Label set profile");
  c_ingest->add_flag("--sidecar-labels", ingest.sidecar, "Take labels from <root>/labels.jsonl");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Cross-validated training from a run config");
  c_train->add_option("-c,--config", train.config, "Run config (JSON)")->required();
  c_train->add_option("--seed", train.seed, "Override split, model and training seeds");
  c_train->add_option("--data-root", train.data_root, "Override paths.data_root");
  c_train->add_option("--run-dir", train.run_dir, "Override paths.run_dir");

  PredictArgs predict;
  auto* c_predict = app.add_subcommand("predict", "Classify one volume");
  c_predict->add_option("-k,--checkpoint", predict.checkpoints, "Checkpoint (repeat to ensemble)")->required();
  c_predict->add_option("volume", predict.volume, "NIfTI volume")->required();

  EvaluateArgs evaluate;
  auto* c_eval = app.add_subcommand("evaluate", "Re-score a run's checkpoints on its test split");
  c_eval->add_option("run_dir", evaluate.run_dir, "Run directory")->required();
  c_eval->add_option("--manifest", evaluate.manifest, "Manifest (default: the one recorded in run.json)");

  AuditArgs audit;
  auto* c_audit = app.add_subcommand("audit", "Header conflicts and model/header agreement");
  c_audit->add_option("manifest", audit.manifest, "Manifest (JSON lines)")->required();
  c_audit->add_option("-k,--checkpoint", audit.checkpoints, "Checkpoint (repeat to ensemble)");
  c_audit->add_option("--rules", audit.rules, "Label rule table (JSON)");
  c_audit->add_option("--label-set", audit.label_set, "Label set profile");
  c_audit->add_option("-o,--out", audit.out, "Also write the report here");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a phantom dataset");
  c_synth->add_option("out", synth.out, "Output directory")->required();
  c_synth->add_option("--spec", synth.spec, "Phantom spec (JSON)");
  c_synth->add_flag("--hard", synth.hard, "Overlap low-b DWI with T2FS");
  c_synth->add_option("--patients", synth.patients, "Number of patients");
  c_synth->add_option("--studies", synth.studies, "Studies per patient");
  c_synth->add_option("--seed", synth.seed, "Generator seed");
  c_synth->add_option("--conflicts", synth.conflicts, "Fraction of studies with a header conflict");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Summary table (and plots) of a finished run");
  c_report->add_option("run_dir", report.run_dir, "Run directory")->required();
  c_report->add_flag("--plots", report.plots, "Also write SVG plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadInput;
  }
  g.jobs_set = app.get_option("--jobs")->count() > 0;

  try {
    if (c_ingest->parsed()) return cmd_ingest(ingest);
    if (c_train->parsed()) return cmd_train(train);
    if (c_predict->parsed()) return cmd_predict(predict);
    if (c_eval->parsed()) return cmd_evaluate(evaluate);
    if (c_audit->parsed()) return cmd_audit(audit);
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_report->parsed()) return cmd_report(report);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
