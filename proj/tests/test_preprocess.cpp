#include <doctest.h>

#include <algorithm>
#include <cstring>

#include "mpseq/error.hpp"
#include "mpseq/preprocess.hpp"
#include "mpseq/random.hpp"
#include "oracles.hpp"

using namespace mpseq;

namespace {

SeriesVolume random_volume(Rng& rng, Shape3 shape, Vec3 spacing) {
  SeriesVolume v(shape, spacing);
  for (auto& x : v.voxels) x = rng.uniform(-1.0, 1.0);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("resampled_extent rounds the covered length") {
  CHECK(resampled_extent(512, 0.75, 1.5) == 256);
  CHECK(resampled_extent(36, 7.8, 7.8) == 36);
  CHECK(resampled_extent(3, 1.0, 10.0) == 1);
}

TEST_CASE("resample at equal spacing is the identity") {
  Rng rng(1);
  const auto v = random_volume(rng, {7, 5, 4}, {0.9, 1.1, 5.0});
  const auto r = resample(v, v.spacing);
  CHECK(r.shape == v.shape);
  CHECK(r.voxels == v.voxels);
  CHECK(r.origin == v.origin);
  CHECK(resample(v, v.spacing, Interpolation::Nearest).voxels == v.voxels);

  // Spacings where (o + 0.5) * s / s is not exactly o + 0.5 in floating point.
  for (const Vec3 sp : {Vec3{0.628394, 1.0119, 5.14474}, Vec3{2.75557, 2.54519, 4.18597}}) {
    const auto w = random_volume(rng, {8, 10, 8}, sp);
    CHECK(resample(w, sp).voxels == w.voxels);
  }
}

TEST_CASE("resample 4^3 at 1 mm to 2 mm matches the corner-sum oracle") {
  Rng rng(2);
  const auto v = random_volume(rng, {4, 4, 4}, {1, 1, 1});
  const auto r = resample(v, {2, 2, 2});
  REQUIRE(r.shape == Shape3{2, 2, 2});
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t i = 0; i < 2; ++i) {
        const double want = oracle::trilinear(v, oracle::source_index(i, 1, 2), oracle::source_index(j, 1, 2),
                                              oracle::source_index(k, 1, 2));
        CHECK(std::abs(r.at(i, j, k) - want) <= 1e-5);
      }
}

TEST_CASE("resample matches the oracle on random small volumes") {
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const Shape3 shape{static_cast<std::size_t>(rng.integer(1, 8)), static_cast<std::size_t>(rng.integer(1, 8)),
                       static_cast<std::size_t>(rng.integer(1, 8))};
    const Vec3 sp{rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 6)};
    const Vec3 target{rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 6)};
    const auto v = random_volume(rng, shape, sp);
    const auto r = resample(v, target);
    double err = 0.0;
    for (std::size_t k = 0; k < r.shape.nz; ++k)
      for (std::size_t j = 0; j < r.shape.ny; ++j)
        for (std::size_t i = 0; i < r.shape.nx; ++i) {
          const double want =
              oracle::trilinear(v, oracle::source_index(i, sp[0], target[0]),
                                oracle::source_index(j, sp[1], target[1]), oracle::source_index(k, sp[2], target[2]));
          err = std::max(err, std::abs(r.at(i, j, k) - want));
        }
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("resample keeps the field-of-view corner") {
  SeriesVolume v({8, 8, 4}, {1, 1, 2});
  v.origin = {10, -5, 3};
  const auto r = resample(v, {2, 2, 4});
  for (int a = 0; a < 3; ++a) {
    CHECK(r.origin[a] - 0.5 * r.spacing[a] == doctest::Approx(v.origin[a] - 0.5 * v.spacing[a]));
  }
}

TEST_CASE("crop and pad offsets") {
  CHECK(crop_pad_offsets({300, 300, 40}, {256, 256, 36}) == std::array<long long, 3>{22, 22, 2});
  CHECK(crop_pad_offsets({200, 200, 30}, {256, 256, 36}) == std::array<long long, 3>{-28, -28, -3});
  CHECK(crop_pad_offsets({256, 256, 36}, {256, 256, 36}) == std::array<long long, 3>{0, 0, 0});
  // Odd remainders go to the trailing side.
  CHECK(crop_pad_offsets({5, 4, 4}, {2, 7, 4}) == std::array<long long, 3>{1, -1, 0});
}

TEST_CASE("crop_or_pad moves voxels by the offsets") {
  Rng rng(4);
  const auto v = random_volume(rng, {6, 3, 2}, {1, 1, 1});
  const auto r = crop_or_pad(v, {4, 5, 2}, -7.0);
  REQUIRE(r.shape == Shape3{4, 5, 2});
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t i = 0; i < 4; ++i) {
        const long long sj = static_cast<long long>(j) - 1;  // one pad row in front
        const std::size_t si = i + 1;                        // one column cropped in front
        const double want = (sj < 0 || sj >= 3) ? -7.0 : v.at(si, static_cast<std::size_t>(sj), k);
        CHECK(r.at(i, j, k) == want);
      }
  CHECK(crop_or_pad(v, v.shape).voxels == v.voxels);
}

TEST_CASE("percentile normalization") {
  SeriesVolume constant({3, 3, 3}, {1, 1, 1}, 7.0);
  const auto z = normalize_percentile(constant, 1, 99);
  for (double x : z.voxels) CHECK(x == 0.0);

  SeriesVolume binary({2, 2, 2}, {1, 1, 1});
  for (std::size_t i = 0; i < 8; ++i) binary.voxels[i] = static_cast<double>(i % 2);
  CHECK(normalize_percentile(binary, 0, 100).voxels == binary.voxels);

  SeriesVolume ramp({10, 10, 10}, {1, 1, 1});
  for (std::size_t i = 0; i < 1000; ++i) ramp.voxels[i] = static_cast<double>(1000 - i);  // 1..1000, reversed
  const double a = oracle::percentile(ramp.voxels, 1);
  const double b = oracle::percentile(ramp.voxels, 99);
  CHECK(std::abs(percentile(ramp.voxels, 1) - a) <= 1e-9);
  CHECK(std::abs(percentile(ramp.voxels, 99) - b) <= 1e-9);
  CHECK(a == doctest::Approx(10.99));
  CHECK(b == doctest::Approx(990.01));
  const auto n = normalize_percentile(ramp, 1, 99);
  for (std::size_t i : {0u, 5u, 500u, 990u, 999u}) {
    const double want = std::clamp((ramp.voxels[i] - a) / (b - a), 0.0, 1.0);
    CHECK(std::abs(n.voxels[i] - want) <= 1e-9);
  }
}

TEST_CASE("percentile agrees with the sort oracle on random data") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(rng.integer(1, 300)));
    for (auto& x : v) x = rng.normal(0, 10);
    const double p = rng.uniform(0, 100);
    CHECK(std::abs(percentile(v, p) - oracle::percentile(v, p)) <= 1e-9);
  }
}

TEST_CASE("pipeline emits the configured tensor shape") {
  Rng rng(6);
  PreprocessConfig cfg;
  const auto v = random_volume(rng, {320, 300, 24}, {0.8, 0.8, 9.0});
  const auto in = preprocess_pipeline(v, cfg);
  CHECK(in.shape == std::array<std::size_t, 4>{1, 36, 256, 256});
  CHECK(in.values.size() == 36u * 256 * 256);
  const auto [lo, hi] = std::minmax_element(in.values.begin(), in.values.end());
  CHECK(*lo >= 0.0);
  CHECK(*hi <= 1.0);
}

TEST_CASE("pipeline is the identity on already-prepared inputs") {
  PreprocessConfig cfg;
  cfg.target_spacing = {2, 2, 3};
  cfg.target_shape = {6, 5, 4};
  cfg.p_low = 0;
  cfg.p_high = 100;
  Rng rng(7);
  auto v = random_volume(rng, {6, 5, 4}, {2, 2, 3});
  for (auto& x : v.voxels) x = 0.5 * (x + 1.0);
  v.voxels[0] = 0.0;
  v.voxels[1] = 1.0;
  const auto in = preprocess_pipeline(v, cfg);
  CHECK(in.shape == std::array<std::size_t, 4>{1, 4, 5, 6});
  CHECK(max_abs_diff(in.values, v.voxels) <= 1e-12);
}

TEST_CASE("pipeline output is deterministic to the byte") {
  Rng rng(8);
  PreprocessConfig cfg;
  cfg.target_spacing = {1.5, 1.5, 4};
  cfg.target_shape = {24, 24, 10};
  const auto v = random_volume(rng, {40, 30, 12}, {1.0, 1.2, 3.3});
  const auto a = preprocess_pipeline(v, cfg);
  const auto b = preprocess_pipeline(v, cfg);
  REQUIRE(a.values.size() == b.values.size());
  CHECK(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0);
}

TEST_CASE("preprocess config JSON is strict and round trips") {
  PreprocessConfig cfg;
  cfg.interpolation = Interpolation::Nearest;
  cfg.target_shape = {32, 32, 16};
  const auto j = cfg.to_json();
  const auto back = PreprocessConfig::from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.to_json() == j);
  CHECK(back.fingerprint() == cfg.fingerprint());

  auto extra = nlohmann::json::parse(j.dump());
  extra["gamma"] = 1;
  CHECK_THROWS_AS(PreprocessConfig::from_json(extra), Error);
  auto bad = nlohmann::json::parse(j.dump());
  bad["percentile_window"] = {99, 1};
  CHECK_THROWS_AS(PreprocessConfig::from_json(bad), Error);
}
