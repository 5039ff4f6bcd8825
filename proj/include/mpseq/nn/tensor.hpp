#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace mpseq::nn {

/// Dense float64 tensor in (N, C, D, H, W) layout, W fastest. Matrices such
/// as logits use (N, C, 1, 1, 1).
struct Tensor {
  std::array<std::size_t, 5> shape{0, 0, 1, 1, 1};
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::array<std::size_t, 5> s, double fill = 0.0)
      : shape(s), data(s[0] * s[1] * s[2] * s[3] * s[4], fill) {}

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols, 1, 1, 1}, fill);
  }

  std::size_t n() const noexcept { return shape[0]; }
  std::size_t c() const noexcept { return shape[1]; }
  std::size_t d() const noexcept { return shape[2]; }
  std::size_t h() const noexcept { return shape[3]; }
  std::size_t w() const noexcept { return shape[4]; }
  std::size_t spatial() const noexcept { return shape[2] * shape[3] * shape[4]; }
  std::size_t sample_size() const noexcept { return shape[1] * spatial(); }
  std::size_t numel() const noexcept { return data.size(); }

  double* sample(std::size_t i) noexcept { return data.data() + i * sample_size(); }
  const double* sample(std::size_t i) const noexcept { return data.data() + i * sample_size(); }
  double& at(std::size_t i, std::size_t j) noexcept { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const noexcept { return data[i * shape[1] + j]; }
};

std::string shape_string(const std::array<std::size_t, 5>& s);

/// Named learnable tensor (or persistent buffer when !trainable).
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> s, bool learn = true);
  std::size_t size() const noexcept { return value.size(); }
};

}  // namespace mpseq::nn
