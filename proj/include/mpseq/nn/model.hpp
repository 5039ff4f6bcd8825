#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mpseq/json_util.hpp"
#include "mpseq/nn/layers.hpp"

namespace mpseq::nn {

enum class Family { DenseNet, ResNet };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct ModelConfig {
  Family family = Family::DenseNet;
  std::vector<int> block_layers{6, 12, 24, 16};
  int growth_rate = 32;  // DenseNet only
  int init_features = 64;
  int num_classes = 5;
  int in_channels = 1;
  std::array<std::size_t, 3> input_shape{36, 256, 256};  // (Z, Y, X)
  std::uint64_t seed = 0;
  /// When a stride-2 stage would shrink Z below 1, that stage uses stride 1
  /// (kernel 1 for pooling) along Z. X/Y collapse is always an error.
  bool adapt_z_stride = true;

  static ModelConfig densenet121(int num_classes = 5);
  static ModelConfig resnet50(int num_classes = 5);
  static ModelConfig resnet101(int num_classes = 5);
  /// DenseNet blocks (2,2), growth 4, 8 initial features, 16x32x32 input.
  static ModelConfig micro_densenet(int num_classes = 5);
  /// ResNet stages (1,1), 8 initial features, 16x32x32 input.
  static ModelConfig micro_resnet(int num_classes = 5);
  /// densenet121 | resnet50 | resnet101 | micro_densenet | micro_resnet.
  static ModelConfig preset(const std::string& name, int num_classes = 5);

  void validate() const;
  ordered_json to_json() const;
  /// Strict. An optional "preset" key selects the starting point; other keys
  /// override it. Without "preset" the defaults are the densenet121 values.
  static ModelConfig from_json(const nlohmann::json& j, const std::string& context = "model");
  /// Architecture fingerprint; excludes the initialization seed.
  std::string fingerprint() const;
};

/// Built network: stem, stages, global average pool, linear head.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }

  /// Pure inference with running normalization statistics. Safe to call
  /// concurrently on one model.
  Tensor infer(const Tensor& batch) const;
  /// Training forward; batch_stats = false freezes normalization statistics.
  Tensor forward(const Tensor& batch, bool batch_stats = true);
  /// Backpropagate dL/dlogits; accumulates parameter gradients.
  void backward(const Tensor& grad_logits);
  void zero_grad();

  /// All state tensors (trainable and buffers) in a fixed order.
  std::vector<Parameter*> state();
  std::vector<const Parameter*> state() const;
  std::vector<Parameter*> trainable();
  /// Number of trainable scalars.
  std::size_t parameter_count() const;
  /// Dense layers per block (DenseNet) or bottlenecks per stage (ResNet).
  const std::vector<std::size_t>& stage_sizes() const noexcept { return stage_sizes_; }
  /// FNV-1a over every state value.
  std::uint64_t checksum() const;

  /// Flat copy of the state in state() order.
  std::vector<double> export_state() const;
  void import_state(const std::vector<double>& flat);

 private:
  void check_input(const Tensor& batch) const;

  ModelConfig cfg_;
  std::unique_ptr<Sequential> net_;
  std::vector<std::size_t> stage_sizes_;
};

Model build_model(const ModelConfig& cfg);

/// Numerically stable row softmax of (N, C) logits.
std::vector<std::vector<double>> softmax_rows(const Tensor& logits);

struct CheckpointMeta {
  ModelConfig model;
  int fold_id = 0;
  int best_epoch = 0;
  double best_validation_accuracy = 0.0;
  std::string label_set_id;
  std::string preprocess_fingerprint;
  ordered_json preprocess;  // full preprocessing config, for prediction
  ordered_json extra;       // training config and other provenance
};

/// Layout (all integers little endian):
///   8  bytes  magic "MPSQCKPT"
///   4  bytes  format version (u32, currently 1)
///   8  bytes  metadata length L (u64)
///   L  bytes  UTF-8 JSON metadata
///   8  bytes  payload length P (u64), a multiple of 8
///   P  bytes  float64 state values in the metadata "tensors" order
///   8  bytes  FNV-1a 64 of metadata bytes followed by payload bytes
void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

/// Throws CorruptCheckpoint on any structural problem.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Also throws FingerprintMismatch when the stored architecture differs from `expected`.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace mpseq::nn
