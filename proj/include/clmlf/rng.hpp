#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>

namespace clmlf {

/// Mixes a base seed with stream coordinates (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Seedable random source used everywhere randomness is consumed.
/// Single-threaded; derive child streams with `fork` for parallel work.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Normal resampled until it falls within two standard deviations.
  double truncated_normal(double stddev);
  /// +1 or -1 with equal probability.
  int sign() { return bernoulli(0.5) ? 1 : -1; }

  Rng fork(std::uint64_t stream) { return Rng(derive_seed(next_u64(), stream)); }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[below(i)]);
    }
  }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace clmlf
