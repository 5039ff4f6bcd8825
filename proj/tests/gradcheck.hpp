#pragma once

#include <algorithm>
#include <cmath>

#include "mpseq/nn/model.hpp"
#include "mpseq/random.hpp"
#include "mpseq/training.hpp"

namespace gradcheck {

struct Result {
  double worst = 0.0;  // largest relative error seen
  int checked = 0;
};

// Freshly initialized networks sit on ReLU and max-pool kinks: BN biases and
// running means start at zero, so every zero activation maps to exactly zero.
// Finite differences across a kink measure nothing useful, so checks run at a
// nearby generic point instead.
inline void move_off_kinks(mpseq::nn::Model& m, std::uint64_t seed, double scale = 0.05) {
  mpseq::Rng rng(seed);
  for (auto* p : m.trainable())
    for (auto& v : p->value) v += rng.normal(0.0, scale);
}

// Analytic gradients of the cross-entropy loss against central differences on
// `samples` randomly chosen trainable scalars. Scalars with a gradient below
// 1e-5 are skipped; their relative error is dominated by rounding in the loss.
inline Result run(mpseq::nn::Model& m, const mpseq::nn::Tensor& x, const std::vector<std::size_t>& labels,
                  bool batch_stats, int samples, std::uint64_t seed) {
  m.zero_grad();
  mpseq::nn::Tensor grad;
  mpseq::compute_loss(m.forward(x, batch_stats), labels, grad);
  m.backward(grad);
  auto loss = [&] { return mpseq::compute_loss(m.forward(x, batch_stats), labels); };
  auto params = m.trainable();
  mpseq::Rng rng(seed);
  Result r;
  for (int attempt = 0; attempt < 50 * samples && r.checked < samples; ++attempt) {
    auto* p = params[rng.index(params.size())];
    const std::size_t i = rng.index(p->value.size());
    const double analytic = p->grad[i];
    if (std::abs(analytic) < 1e-5) continue;
    const double old = p->value[i];
    const double h = 1e-6;
    p->value[i] = old + h;
    const double up = loss();
    p->value[i] = old - h;
    const double down = loss();
    p->value[i] = old;
    const double numeric = (up - down) / (2 * h);
    r.worst = std::max(r.worst, std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric)));
    ++r.checked;
  }
  return r;
}

}  // namespace gradcheck
