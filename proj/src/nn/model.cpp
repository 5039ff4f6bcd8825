#include "mpseq/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mpseq/error.hpp"

namespace mpseq::nn {

std::string to_string(Family f) { return f == Family::DenseNet ? "densenet" : "resnet"; }

Family family_from_string(const std::string& s) {
  if (s == "densenet") return Family::DenseNet;
  if (s == "resnet") return Family::ResNet;
  throw Error(ErrorKind::InvalidConfig, "unknown model family '" + s + "' (densenet | resnet)");
}

// ---------------------------------------------------------------- config

ModelConfig ModelConfig::densenet121(int num_classes) {
  ModelConfig c;
  c.num_classes = num_classes;
  return c;
}

ModelConfig ModelConfig::resnet50(int num_classes) {
  ModelConfig c;
  c.family = Family::ResNet;
  c.block_layers = {3, 4, 6, 3};
  c.num_classes = num_classes;
  return c;
}

ModelConfig ModelConfig::resnet101(int num_classes) {
  ModelConfig c = resnet50(num_classes);
  c.block_layers = {3, 4, 23, 3};
  return c;
}

ModelConfig ModelConfig::micro_densenet(int num_classes) {
  ModelConfig c;
  c.block_layers = {2, 2};
  c.growth_rate = 4;
  c.init_features = 8;
  c.num_classes = num_classes;
  c.input_shape = {16, 32, 32};
  return c;
}

ModelConfig ModelConfig::micro_resnet(int num_classes) {
  ModelConfig c = resnet50(num_classes);
  c.block_layers = {1, 1};
  c.init_features = 8;
  c.input_shape = {16, 32, 32};
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name, int num_classes) {
  if (name == "densenet121") return densenet121(num_classes);
  if (name == "resnet50") return resnet50(num_classes);
  if (name == "resnet101") return resnet101(num_classes);
  if (name == "micro_densenet") return micro_densenet(num_classes);
  if (name == "micro_resnet") return micro_resnet(num_classes);
  throw Error(ErrorKind::InvalidConfig, "unknown model preset '" + name + "'");
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, "model: " + m); };
  if (num_classes < 2) bad("num_classes must be >= 2");
  if (block_layers.empty()) bad("block_layers must be non-empty");
  for (int b : block_layers)
    if (b < 1) bad("block_layers entries must be >= 1");
  if (init_features < 1) bad("init_features must be >= 1");
  if (in_channels < 1) bad("in_channels must be >= 1");
  if (family == Family::DenseNet && growth_rate < 1) bad("growth_rate must be >= 1");
  for (auto n : input_shape)
    if (n < 1) bad("input_shape entries must be >= 1");
}

ordered_json ModelConfig::to_json() const {
  ordered_json j;
  j["family"] = to_string(family);
  j["block_layers"] = block_layers;
  j["growth_rate"] = growth_rate;
  j["init_features"] = init_features;
  j["num_classes"] = num_classes;
  j["in_channels"] = in_channels;
  j["input_shape"] = input_shape;
  j["seed"] = seed;
  j["adapt_z_stride"] = adapt_z_stride;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, const std::string& context) {
  reject_unknown_keys(j,
                      {"preset", "family", "block_layers", "growth_rate", "init_features", "num_classes",
                       "in_channels", "input_shape", "seed", "adapt_z_stride"},
                      context);
  ModelConfig c;
  if (j.contains("preset")) c = preset(get_field<std::string>(j, "preset", context));
  if (j.contains("family")) c.family = family_from_string(get_field<std::string>(j, "family", context));
  if (j.contains("block_layers")) c.block_layers = get_field<std::vector<int>>(j, "block_layers", context);
  if (j.contains("growth_rate")) c.growth_rate = get_field<int>(j, "growth_rate", context);
  if (j.contains("init_features")) c.init_features = get_field<int>(j, "init_features", context);
  if (j.contains("num_classes")) c.num_classes = get_field<int>(j, "num_classes", context);
  if (j.contains("in_channels")) c.in_channels = get_field<int>(j, "in_channels", context);
  if (j.contains("input_shape")) c.input_shape = get_field<std::array<std::size_t, 3>>(j, "input_shape", context);
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", context);
  if (j.contains("adapt_z_stride")) c.adapt_z_stride = get_field<bool>(j, "adapt_z_stride", context);
  c.validate();
  return c;
}

std::string ModelConfig::fingerprint() const {
  ordered_json j = to_json();
  j.erase("seed");
  return mpseq::fingerprint(j);
}

// --------------------------------------------------------------- builder

namespace {

struct Window {
  Int3 kernel, stride, pad;
};

// Tracks the (Z, Y, X) extent through the network and applies the Z stride rule.
class Planner {
 public:
  Planner(const ModelConfig& cfg) : dims_(cfg.input_shape), adapt_z_(cfg.adapt_z_stride) {}

  // Window with kernel k, stride 2, padding p on every axis, adjusted for Z.
  Window downsample(std::size_t k, std::size_t p, const std::string& where) {
    Window w{{k, k, k}, {2, 2, 2}, {p, p, p}};
    for (std::size_t a = 0; a < 3; ++a) {
      if (window_extent(dims_[a], k, 2, p) >= 1) continue;
      if (a == 0 && adapt_z_) {
        w.stride[0] = 1;
        if (window_extent(dims_[0], k, 1, p) < 1) {
          w.kernel[0] = 1;
          w.pad[0] = 0;
        }
        continue;
      }
      static const char* names[] = {"Z", "Y", "X"};
      throw Error(ErrorKind::InvalidConfig, std::string("model: input_shape too small, axis ") + names[a] +
                                                " collapses at " + where);
    }
    apply(w);
    return w;
  }

  void apply(const Window& w) {
    for (std::size_t a = 0; a < 3; ++a) dims_[a] = window_extent(dims_[a], w.kernel[a], w.stride[a], w.pad[a]);
  }

 private:
  std::array<std::size_t, 3> dims_;
  bool adapt_z_;
};

constexpr std::size_t kBottleneckWidth = 4;  // DenseNet 1x1 conv width factor
constexpr std::size_t kExpansion = 4;        // ResNet bottleneck expansion

const Int3 k1{1, 1, 1}, s1{1, 1, 1}, p0{0, 0, 0};
const Int3 k3{3, 3, 3}, p1{1, 1, 1};

void stem(Sequential& net, const std::string& conv, const std::string& norm, std::size_t in, std::size_t out,
          Planner& plan, Rng& rng) {
  const Window w = plan.downsample(7, 3, "stem convolution");
  auto& c = net.emplace<Conv3d>(conv, in, out, w.kernel, w.stride, w.pad, false, rng);
  c.set_input_grad(false);
  net.emplace<BatchNorm3d>(norm, out);
  net.emplace<ReLU>();
  const Window mp = plan.downsample(3, 1, "stem pooling");
  net.emplace<MaxPool3d>(mp.kernel, mp.stride, mp.pad);
}

std::size_t build_densenet(Sequential& net, const ModelConfig& cfg, Planner& plan, Rng& rng,
                           std::vector<std::size_t>& stages) {
  std::size_t c = static_cast<std::size_t>(cfg.init_features);
  const auto growth = static_cast<std::size_t>(cfg.growth_rate);
  stem(net, "features.conv0", "features.norm0", static_cast<std::size_t>(cfg.in_channels), c, plan, rng);
  for (std::size_t b = 0; b < cfg.block_layers.size(); ++b) {
    auto block = std::make_unique<DenseBlock>(growth);
    const std::string bname = "features.denseblock" + std::to_string(b + 1);
    for (int l = 0; l < cfg.block_layers[b]; ++l) {
      const std::string name = bname + ".denselayer" + std::to_string(l + 1);
      auto layer = std::make_unique<Sequential>();
      layer->emplace<BatchNorm3d>(name + ".norm1", c);
      layer->emplace<ReLU>();
      layer->emplace<Conv3d>(name + ".conv1", c, kBottleneckWidth * growth, k1, s1, p0, false, rng);
      layer->emplace<BatchNorm3d>(name + ".norm2", kBottleneckWidth * growth);
      layer->emplace<ReLU>();
      layer->emplace<Conv3d>(name + ".conv2", kBottleneckWidth * growth, growth, k3, s1, p1, false, rng);
      block->add_layer(std::move(layer));
      c += growth;
    }
    stages.push_back(block->size());
    net.add(std::move(block));
    if (b + 1 < cfg.block_layers.size()) {
      const std::string tname = "features.transition" + std::to_string(b + 1);
      const std::size_t out = c / 2;
      net.emplace<BatchNorm3d>(tname + ".norm", c);
      net.emplace<ReLU>();
      net.emplace<Conv3d>(tname + ".conv", c, out, k1, s1, p0, false, rng);
      const Window w = plan.downsample(2, 0, tname);
      net.emplace<AvgPool3d>(w.kernel, w.stride);
      c = out;
    }
  }
  net.emplace<BatchNorm3d>("features.norm5", c);
  net.emplace<ReLU>();
  return c;
}

std::size_t build_resnet(Sequential& net, const ModelConfig& cfg, Planner& plan, Rng& rng,
                         std::vector<std::size_t>& stages) {
  std::size_t inplanes = static_cast<std::size_t>(cfg.init_features);
  stem(net, "conv1", "bn1", static_cast<std::size_t>(cfg.in_channels), inplanes, plan, rng);
  for (std::size_t s = 0; s < cfg.block_layers.size(); ++s) {
    const std::size_t planes = static_cast<std::size_t>(cfg.init_features) << s;
    const std::string sname = "layer" + std::to_string(s + 1);
    for (int b = 0; b < cfg.block_layers[s]; ++b) {
      const std::string name = sname + "." + std::to_string(b);
      Window w{k3, s1, p1};
      if (s > 0 && b == 0) w = plan.downsample(3, 1, name);
      const bool project = w.stride != s1 || inplanes != planes * kExpansion;
      auto main = std::make_unique<Sequential>();
      main->emplace<Conv3d>(name + ".conv1", inplanes, planes, k1, s1, p0, false, rng);
      main->emplace<BatchNorm3d>(name + ".bn1", planes);
      main->emplace<ReLU>();
      main->emplace<Conv3d>(name + ".conv2", planes, planes, w.kernel, w.stride, w.pad, false, rng);
      main->emplace<BatchNorm3d>(name + ".bn2", planes);
      main->emplace<ReLU>();
      main->emplace<Conv3d>(name + ".conv3", planes, planes * kExpansion, k1, s1, p0, false, rng);
      main->emplace<BatchNorm3d>(name + ".bn3", planes * kExpansion);
      LayerPtr shortcut;
      if (project) {
        auto sc = std::make_unique<Sequential>();
        sc->emplace<Conv3d>(name + ".downsample.0", inplanes, planes * kExpansion, k1, w.stride, p0, false, rng);
        sc->emplace<BatchNorm3d>(name + ".downsample.1", planes * kExpansion);
        shortcut = std::move(sc);
      }
      net.emplace<Residual>(std::move(main), std::move(shortcut));
      inplanes = planes * kExpansion;
    }
    stages.push_back(static_cast<std::size_t>(cfg.block_layers[s]));
  }
  return inplanes;
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg), net_(std::make_unique<Sequential>()) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  Planner plan(cfg_);
  const std::size_t features = cfg_.family == Family::DenseNet ? build_densenet(*net_, cfg_, plan, rng, stage_sizes_)
                                                               : build_resnet(*net_, cfg_, plan, rng, stage_sizes_);
  net_->emplace<GlobalAvgPool>();
  const std::string head = cfg_.family == Family::DenseNet ? "classifier" : "fc";
  net_->emplace<Linear>(head, features, static_cast<std::size_t>(cfg_.num_classes), rng);
}

Model build_model(const ModelConfig& cfg) { return Model(cfg); }

void Model::check_input(const Tensor& batch) const {
  const std::array<std::size_t, 5> want{batch.n(), static_cast<std::size_t>(cfg_.in_channels), cfg_.input_shape[0],
                                        cfg_.input_shape[1], cfg_.input_shape[2]};
  if (batch.n() == 0 || batch.shape != want || batch.data.size() != batch.n() * batch.sample_size()) {
    throw Error(ErrorKind::ShapeMismatch, "model input " + shape_string(batch.shape) + ", expected " +
                                              shape_string(want));
  }
}

Tensor Model::infer(const Tensor& batch) const {
  check_input(batch);
  return net_->infer(batch);
}

Tensor Model::forward(const Tensor& batch, bool batch_stats) {
  check_input(batch);
  return net_->forward(batch, batch_stats);
}

void Model::backward(const Tensor& grad_logits) { net_->backward(grad_logits); }

void Model::zero_grad() {
  for (auto* p : trainable()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

std::vector<Parameter*> Model::state() {
  std::vector<Parameter*> out;
  net_->collect(out);
  return out;
}

std::vector<const Parameter*> Model::state() const {
  std::vector<const Parameter*> out;
  std::as_const(*net_).collect(out);
  return out;
}

std::vector<Parameter*> Model::trainable() {
  std::vector<Parameter*> out;
  for (auto* p : state())
    if (p->trainable) out.push_back(p);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : state())
    if (p->trainable) n += p->size();
  return n;
}

std::uint64_t Model::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : state()) h = fnv1a64(p->value.data(), p->value.size() * sizeof(double), h);
  return h;
}

std::vector<double> Model::export_state() const {
  std::vector<double> flat;
  for (const auto* p : state()) flat.insert(flat.end(), p->value.begin(), p->value.end());
  return flat;
}

void Model::import_state(const std::vector<double>& flat) {
  auto params = state();
  std::size_t total = 0;
  for (auto* p : params) total += p->size();
  if (total != flat.size()) throw Error(ErrorKind::ShapeMismatch, "state size mismatch");
  std::size_t at = 0;
  for (auto* p : params) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at), flat.begin() + static_cast<std::ptrdiff_t>(at + p->size()),
              p->value.begin());
    at += p->size();
  }
}

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
  std::vector<std::vector<double>> out(logits.n(), std::vector<double>(logits.c()));
  for (std::size_t i = 0; i < logits.n(); ++i) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < logits.c(); ++j) m = std::max(m, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < logits.c(); ++j) z += (out[i][j] = std::exp(logits.at(i, j) - m));
    for (auto& v : out[i]) v /= z;
  }
  return out;
}

// ------------------------------------------------------------ checkpoint

namespace {

constexpr char kMagic[8] = {'M', 'P', 'S', 'Q', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return static_cast<T>(v);
}

[[noreturn]] void corrupt(const std::filesystem::path& p, const std::string& why) {
  throw Error(ErrorKind::CorruptCheckpoint, p.string() + ": " + why);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointMeta& meta) {
  ordered_json j;
  j["format"] = "mpseq-checkpoint";
  j["model"] = model.config().to_json();
  j["model_fingerprint"] = model.config().fingerprint();
  j["fold_id"] = meta.fold_id;
  j["best_epoch"] = meta.best_epoch;
  j["best_validation_accuracy"] = meta.best_validation_accuracy;
  j["label_set_id"] = meta.label_set_id;
  j["preprocess_fingerprint"] = meta.preprocess_fingerprint;
  j["preprocess"] = meta.preprocess;
  j["extra"] = meta.extra;
  ordered_json tensors = ordered_json::array();
  std::size_t offset = 0;
  for (const auto* p : model.state()) {
    tensors.push_back({{"name", p->name}, {"shape", p->shape}, {"offset", offset}, {"count", p->size()}});
    offset += p->size();
  }
  j["tensors"] = std::move(tensors);
  const std::string meta_bytes = j.dump();

  std::string payload;
  payload.reserve(offset * 8);
  for (const auto* p : model.state()) {
    for (double v : p->value) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_le<std::uint64_t>(payload, bits);
    }
  }
  std::uint64_t sum = fnv1a64(meta_bytes.data(), meta_bytes.size());
  sum = fnv1a64(payload.data(), payload.size(), sum);

  std::string out(kMagic, 8);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, meta_bytes.size());
  out += meta_bytes;
  put_le<std::uint64_t>(out, payload.size());
  out += payload;
  put_le<std::uint64_t>(out, sum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::Unwritable, "cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error(ErrorKind::Unwritable, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::UnreadableFile, "cannot open " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (in.size() < 20 || std::memcmp(in.data(), kMagic, 8) != 0) corrupt(path, "bad magic");
  const auto version = get_le<std::uint32_t>(in, 8);
  if (version != kCheckpointVersion) corrupt(path, "unsupported version " + std::to_string(version));
  const auto meta_len = get_le<std::uint64_t>(in, 12);
  std::size_t at = 20;
  if (meta_len > in.size() - at) corrupt(path, "truncated metadata");
  const std::string meta_bytes = in.substr(at, meta_len);
  at += meta_len;
  if (in.size() - at < 8) corrupt(path, "truncated payload header");
  const auto payload_len = get_le<std::uint64_t>(in, at);
  at += 8;
  if (payload_len % 8 != 0 || payload_len > in.size() - at || in.size() - at - payload_len != 8) {
    corrupt(path, "truncated or oversized payload");
  }
  const std::string payload = in.substr(at, payload_len);
  at += payload_len;
  std::uint64_t sum = fnv1a64(meta_bytes.data(), meta_bytes.size());
  sum = fnv1a64(payload.data(), payload.size(), sum);
  if (get_le<std::uint64_t>(in, at) != sum) corrupt(path, "checksum mismatch");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta_bytes);
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("metadata: ") + e.what());
  }

  try {
    CheckpointMeta meta;
    meta.model = ModelConfig::from_json(j.at("model"));
    if (j.at("model_fingerprint").get<std::string>() != meta.model.fingerprint()) {
      corrupt(path, "stored fingerprint does not match stored model config");
    }
    meta.fold_id = j.at("fold_id").get<int>();
    meta.best_epoch = j.at("best_epoch").get<int>();
    meta.best_validation_accuracy = j.at("best_validation_accuracy").get<double>();
    meta.label_set_id = j.at("label_set_id").get<std::string>();
    meta.preprocess_fingerprint = j.at("preprocess_fingerprint").get<std::string>();
    meta.preprocess = j.at("preprocess");
    meta.extra = j.at("extra");

    Model model(meta.model);
    auto params = model.state();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != params.size()) corrupt(path, "tensor directory does not match the architecture");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = tensors[i];
      if (t.at("name").get<std::string>() != params[i]->name ||
          t.at("shape").get<std::vector<std::size_t>>() != params[i]->shape ||
          t.at("count").get<std::size_t>() != params[i]->size() || t.at("offset").get<std::size_t>() != offset) {
        corrupt(path, "tensor directory entry " + std::to_string(i) + " does not match the architecture");
      }
      offset += params[i]->size();
    }
    if (offset * 8 != payload.size()) corrupt(path, "payload size does not match tensor directory");
    std::size_t k = 0;
    for (auto* p : params) {
      for (auto& v : p->value) {
        const auto bits = get_le<std::uint64_t>(payload, 8 * k++);
        std::memcpy(&v, &bits, 8);
      }
    }
    return LoadedCheckpoint{std::move(model), std::move(meta)};
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("metadata: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptCheckpoint) throw;
    corrupt(path, e.what());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  LoadedCheckpoint ck = load_checkpoint(path);
  if (ck.meta.model.fingerprint() != expected.fingerprint()) {
    throw Error(ErrorKind::FingerprintMismatch, path.string() + ": checkpoint model " + ck.meta.model.fingerprint() +
                                                    " != configured model " + expected.fingerprint());
  }
  return ck;
}

}  // namespace mpseq::nn
