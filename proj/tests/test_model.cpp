#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mpseq/error.hpp"
#include "mpseq/nn/model.hpp"
#include "mpseq/random.hpp"
#include "mpseq/training.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mpseq;
using namespace mpseq::nn;

namespace {

Tensor random_batch(std::size_t n, const ModelConfig& cfg, std::uint64_t seed) {
  Tensor x({n, static_cast<std::size_t>(cfg.in_channels), cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]});
  Rng rng(seed);
  for (auto& v : x.data) v = rng.uniform();
  return x;
}

ModelConfig small_densenet() {
  ModelConfig c = ModelConfig::micro_densenet(5);
  c.input_shape = {6, 8, 8};
  c.seed = 3;
  return c;
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

double gradient_check(Model& m, const Tensor& x, const std::vector<std::size_t>& labels, bool batch_stats,
                      int samples, std::uint64_t seed) {
  gradcheck::move_off_kinks(m, seed + 1000);
  const auto r = gradcheck::run(m, x, labels, batch_stats, samples, seed);
  REQUIRE(r.checked == samples);
  return r.worst;
}

}  // namespace

TEST_CASE("micro densenet parameter count matches the layer-by-layer sum") {
  const auto cfg = ModelConfig::micro_densenet(5);
  CHECK(cfg.block_layers == std::vector<int>{2, 2});
  CHECK(cfg.growth_rate == 4);
  CHECK(cfg.init_features == 8);
  CHECK(cfg.input_shape == std::array<std::size_t, 3>{16, 32, 32});
  const Model m(cfg);
  CHECK(m.parameter_count() == oracle::densenet_parameters({2, 2}, 4, 8, 1, 5));
  CHECK(m.parameter_count() == 10797);

  ModelConfig wide = cfg;
  wide.growth_rate = 16;
  wide.init_features = 32;
  wide.block_layers = {2, 3, 2};
  wide.input_shape = {8, 16, 16};
  CHECK(Model(wide).parameter_count() == oracle::densenet_parameters({2, 3, 2}, 16, 32, 1, 5));
}

TEST_CASE("micro models produce (B, classes) logits") {
  for (auto cfg : {ModelConfig::micro_densenet(5), ModelConfig::micro_resnet(4)}) {
    cfg.seed = 1;
    const Model m(cfg);
    const auto y = m.infer(random_batch(2, cfg, 9));
    CHECK(y.shape == std::array<std::size_t, 5>{2, static_cast<std::size_t>(cfg.num_classes), 1, 1, 1});
    for (double v : y.data) CHECK(std::isfinite(v));
  }
  CHECK(Model(ModelConfig::micro_resnet(5)).stage_sizes() == std::vector<std::size_t>{1, 1});
}

TEST_CASE("preset stage layouts") {
  CHECK(ModelConfig::densenet121().block_layers == std::vector<int>{6, 12, 24, 16});
  CHECK(ModelConfig::resnet50().block_layers == std::vector<int>{3, 4, 6, 3});
  CHECK(ModelConfig::resnet101().block_layers == std::vector<int>{3, 4, 23, 3});
  CHECK(ModelConfig::densenet121().input_shape == std::array<std::size_t, 3>{36, 256, 256});
  CHECK(ModelConfig::preset("micro_resnet").family == Family::ResNet);
  CHECK(kind_of([] { ModelConfig::preset("vgg"); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("input that collapses below one voxel is rejected") {
  ModelConfig c = ModelConfig::densenet121(5);
  c.input_shape = {2, 8, 8};
  CHECK(kind_of([&] { Model m(c); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("thin slabs keep their Z extent instead of collapsing") {
  ModelConfig c = ModelConfig::micro_densenet(5);
  c.input_shape = {2, 32, 32};
  const Model m(c);
  CHECK(m.infer(random_batch(1, c, 2)).shape[1] == 5);
  c.adapt_z_stride = false;
  CHECK(kind_of([&] { Model bad(c); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("inference is row-independent and rejects wrong shapes") {
  const auto cfg = small_densenet();
  const Model m(cfg);
  auto x = random_batch(1, cfg, 4);
  Tensor two({2, 1, 6, 8, 8});
  std::copy(x.data.begin(), x.data.end(), two.data.begin());
  std::copy(x.data.begin(), x.data.end(), two.data.begin() + static_cast<std::ptrdiff_t>(x.data.size()));
  const auto y = m.infer(two);
  for (std::size_t c = 0; c < 5; ++c) CHECK(y.at(0, c) == y.at(1, c));

  Tensor rgb({1, 3, 6, 8, 8});
  CHECK(kind_of([&] { m.infer(rgb); }) == ErrorKind::ShapeMismatch);
  Tensor small({1, 1, 6, 8, 7});
  CHECK(kind_of([&] { m.infer(small); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("same seed, same weights; different seed, different weights") {
  auto cfg = small_densenet();
  CHECK(Model(cfg).checksum() == Model(cfg).checksum());
  auto other = cfg;
  other.seed = 4;
  CHECK(Model(cfg).checksum() != Model(other).checksum());
  CHECK(cfg.fingerprint() == other.fingerprint());
  other.growth_rate = 5;
  CHECK(cfg.fingerprint() != other.fingerprint());
}

TEST_CASE("analytic gradients agree with finite differences") {
  auto cfg = small_densenet();
  Model m(cfg);
  const auto x = random_batch(2, cfg, 5);
  CHECK(gradient_check(m, x, {1, 3}, false, 25, 11) < 1e-3);
  CHECK(gradient_check(m, x, {0, 4}, true, 25, 12) < 1e-3);

  auto rcfg = ModelConfig::micro_resnet(5);
  rcfg.input_shape = {6, 8, 8};
  Model r(rcfg);
  CHECK(gradient_check(r, random_batch(2, rcfg, 6), {2, 0}, false, 25, 13) < 1e-3);
}

TEST_CASE("softmax rows are normalized and stable") {
  Tensor logits({2, 3, 1, 1, 1});
  logits.data = {1000.0, 1000.0, 1000.0, 2.0, 1.0, 0.0};
  const auto p = softmax_rows(logits);
  CHECK(p[0][0] == doctest::Approx(1.0 / 3));
  double s = 0;
  for (double v : p[1]) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("model config JSON round trip and strictness") {
  auto cfg = ModelConfig::micro_resnet(5);
  cfg.seed = 99;
  const auto back = ModelConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
  CHECK(back.to_json() == cfg.to_json());
  CHECK(kind_of([] { ModelConfig::from_json({{"depth", 3}}); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { ModelConfig::from_json({{"growth_rate", "big"}}); }) == ErrorKind::InvalidConfig);
  const auto micro = ModelConfig::from_json({{"preset", "micro_densenet"}, {"growth_rate", 16}});
  CHECK(micro.growth_rate == 16);
  CHECK(micro.block_layers == std::vector<int>{2, 2});
}

TEST_CASE("checkpoint round trip gives bitwise-equal logits") {
  testutil::TempDir dir("ckpt");
  auto cfg = small_densenet();
  Model m(cfg);
  // Move the running statistics away from their initial values.
  m.forward(random_batch(2, cfg, 7), true);
  CheckpointMeta meta;
  meta.model = cfg;
  meta.fold_id = 2;
  meta.best_epoch = 4;
  meta.best_validation_accuracy = 0.75;
  meta.label_set_id = "body";
  meta.preprocess_fingerprint = "abc";
  meta.preprocess = {{"k", 1}};
  save_checkpoint(dir / "m.ckpt", m, meta);
  CHECK_FALSE(std::filesystem::exists(dir / "m.ckpt.partial"));

  const auto probe = random_batch(3, cfg, 8);
  const auto loaded = load_checkpoint(dir / "m.ckpt", cfg);
  const auto a = m.infer(probe), b = loaded.model.infer(probe);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);
  CHECK(loaded.meta.fold_id == 2);
  CHECK(loaded.meta.best_epoch == 4);
  CHECK(loaded.meta.best_validation_accuracy == 0.75);
  CHECK(loaded.meta.preprocess == meta.preprocess);
  CHECK(loaded.model.checksum() == m.checksum());

  auto four = cfg;
  four.num_classes = 4;
  CHECK(kind_of([&] { load_checkpoint(dir / "m.ckpt", four); }) == ErrorKind::FingerprintMismatch);

  const auto size = std::filesystem::file_size(dir / "m.ckpt");
  std::filesystem::copy_file(dir / "m.ckpt", dir / "cut.ckpt");
  std::filesystem::resize_file(dir / "cut.ckpt", size - 100);
  CHECK(kind_of([&] { load_checkpoint(dir / "cut.ckpt"); }) == ErrorKind::CorruptCheckpoint);

  // One flipped payload byte fails the checksum.
  std::filesystem::copy_file(dir / "m.ckpt", dir / "flip.ckpt");
  {
    std::fstream f(dir / "flip.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size - 64));
    char c = 0;
    f.read(&c, 1);
    f.seekp(static_cast<std::streamoff>(size - 64));
    c = static_cast<char>(c ^ 0x10);
    f.write(&c, 1);
  }
  CHECK(kind_of([&] { load_checkpoint(dir / "flip.ckpt"); }) == ErrorKind::CorruptCheckpoint);
  CHECK(kind_of([&] { load_checkpoint(dir / "none.ckpt"); }) == ErrorKind::UnreadableFile);
}

TEST_CASE("full-size densenet121 maps (2, 1, 36, 256, 256) to (2, 5)" * doctest::test_suite("full_size")) {
  const auto cfg = ModelConfig::densenet121(5);
  const Model m(cfg);
  CHECK(m.parameter_count() == oracle::densenet_parameters({6, 12, 24, 16}, 32, 64, 1, 5));
  Tensor x({2, 1, 36, 256, 256});
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = static_cast<double>(i % 97) / 97.0;
  const auto y = m.infer(x);
  CHECK(y.shape == std::array<std::size_t, 5>{2, 5, 1, 1, 1});
  for (double v : y.data) CHECK(std::isfinite(v));
}
