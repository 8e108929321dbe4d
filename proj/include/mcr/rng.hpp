#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mcr {

/// Deterministic random source: mt19937_64 with hand-rolled output
/// transforms, so the stream is fixed by the seed and this file alone
/// (std::*_distribution is implementation-defined and avoided).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1) from the top 53 bits of one engine draw.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  /// Uniform integer in [0, bound) by rejection, bias-free.
  std::uint64_t below(std::uint64_t bound);

  /// Fisher-Yates shuffle, descending index order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Identity permutation of length n, shuffled.
  std::vector<std::size_t> permutation(std::size_t n);

  /// Independent child generator; advances this stream by one draw.
  Rng split() { return Rng(engine_()); }

 private:
  std::mt19937_64 engine_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

/// SplitMix64 finalizer; used to fan a master seed out into per-job seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace mcr
