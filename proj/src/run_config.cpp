#include "mpseq/run_config.hpp"

#include <fstream>

#include "mpseq/error.hpp"
#include "mpseq/labels.hpp"

namespace mpseq {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& m) { throw Error(ErrorKind::InvalidConfig, m); }

std::optional<fs::path> optional_path(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  return fs::path(get_field<std::string>(j, key, "paths"));
}

fs::path anchored(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : (base / p).lexically_normal(); }

}  // namespace

void RunConfig::validate() const {
  const LabelSet& set = LabelSet::by_id(label_set);
  if (k < 1) bad("'k' must be >= 1");
  if (jobs < 1) bad("'jobs' must be >= 1");
  preprocess.validate();
  model.validate();
  train.validate();
  split.validate();
  if (static_cast<std::size_t>(model.num_classes) != set.size()) {
    bad("'model.num_classes' is " + std::to_string(model.num_classes) + " but label set '" + label_set + "' has " +
        std::to_string(set.size()) + " classes");
  }
  const auto& s = preprocess.target_shape;  // (X, Y, Z)
  const auto& in = model.input_shape;       // (Z, Y, X)
  if (in[0] != s[2] || in[1] != s[1] || in[2] != s[0]) {
    bad("'model.input_shape' must be preprocess.target_shape reversed to (Z, Y, X)");
  }
  if (model.in_channels != 1) bad("'model.in_channels' must be 1 (one volume per series)");
}

void RunConfig::set_seed(std::uint64_t seed) {
  split.seed = seed;
  model.seed = seed;
  train.seed = seed;
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["label_set"] = label_set;
  j["k"] = k;
  j["jobs"] = jobs;
  ordered_json p = ordered_json::object();
  if (paths.data_root) p["data_root"] = paths.data_root->string();
  if (paths.manifest) p["manifest"] = paths.manifest->string();
  p["run_dir"] = paths.run_dir.string();
  if (paths.label_rules) p["label_rules"] = paths.label_rules->string();
  j["paths"] = p;
  j["preprocess"] = preprocess.to_json();
  j["model"] = model.to_json();
  j["train"] = train.to_json();
  j["split"] = split.to_json();
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"label_set", "k", "jobs", "paths", "preprocess", "model", "train", "split"}, "");
  RunConfig c;
  if (j.contains("label_set")) c.label_set = get_field<std::string>(j, "label_set", "");
  if (j.contains("k")) c.k = get_field<std::size_t>(j, "k", "");
  if (j.contains("jobs")) c.jobs = get_field<unsigned>(j, "jobs", "");
  if (!j.contains("paths")) bad("missing key 'paths'");
  const auto& p = j.at("paths");
  reject_unknown_keys(p, {"data_root", "manifest", "run_dir", "label_rules"}, "paths");
  c.paths.data_root = optional_path(p, "data_root");
  c.paths.manifest = optional_path(p, "manifest");
  if (p.contains("run_dir")) c.paths.run_dir = get_field<std::string>(p, "run_dir", "paths");
  c.paths.label_rules = optional_path(p, "label_rules");
  if (j.contains("preprocess")) c.preprocess = PreprocessConfig::from_json(j.at("preprocess"), "preprocess");
  if (j.contains("model")) c.model = nn::ModelConfig::from_json(j.at("model"), "model");
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"), "train");
  if (j.contains("split")) c.split = SplitSpec::from_json(j.at("split"), "split");
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::UnreadableFile, "cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    bad("config " + path.string() + ": " + e.what());
  }
  RunConfig c = from_json(j);
  const fs::path base = path.parent_path();
  if (c.paths.data_root) c.paths.data_root = anchored(base, *c.paths.data_root);
  if (c.paths.manifest) c.paths.manifest = anchored(base, *c.paths.manifest);
  c.paths.run_dir = anchored(base, c.paths.run_dir);
  if (c.paths.label_rules) c.paths.label_rules = anchored(base, *c.paths.label_rules);
  return c;
}

}  // namespace mpseq
