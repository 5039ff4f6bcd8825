#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mpseq/json_util.hpp"
#include "mpseq/nn/model.hpp"
#include "mpseq/preprocess.hpp"
#include "mpseq/training.hpp"

namespace mpseq {

/// Everything a training run needs, read from one JSON file.
///
///   {"label_set": "body", "k": 5, "jobs": 1,
///    "paths": {"data_root": ..., "manifest": ..., "run_dir": ..., "label_rules": ...},
///    "preprocess": {...}, "model": {...}, "train": {...}, "split": {...}}
///
/// Unknown keys anywhere are rejected. Relative paths are resolved against
/// the config file's directory by load().
struct RunConfig {
  std::string label_set = "body";
  std::size_t k = 5;
  unsigned jobs = 1;

  struct Paths {
    std::optional<std::filesystem::path> data_root;
    std::optional<std::filesystem::path> manifest;  // default <data_root>/manifest.jsonl
    std::filesystem::path run_dir = "run";
    std::optional<std::filesystem::path> label_rules;

    friend bool operator==(const Paths&, const Paths&) = default;
  } paths;

  PreprocessConfig preprocess;
  nn::ModelConfig model;
  TrainConfig train;
  SplitSpec split;

  void validate() const;
  /// Same seed for the split, the model initialization and training.
  void set_seed(std::uint64_t seed);

  ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace mpseq
