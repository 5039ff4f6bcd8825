#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

namespace mpseq {

/// Platform-stable random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The conversions below are written out by hand because the
/// standard distributions are implementation-defined:
///   uniform()      = (u64 >> 11) * 2^-53, in [0, 1)
///   normal()       = Box-Muller on two uniforms, cosine branch only
///   index(n)       = rejection sampling on u64 % n with an unbiased threshold
///   shuffle(v)     = Fisher-Yates from the back, j = index(i + 1)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t index(std::uint64_t n);
  /// Uniform integer in [lo, hi] (inclusive).
  long long integer(long long lo, long long hi);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Deterministically combine a base seed with a list of integers.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept;

/// FNV-1a 64-bit hash; used for config fingerprints and payload checksums.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

}  // namespace mpseq
