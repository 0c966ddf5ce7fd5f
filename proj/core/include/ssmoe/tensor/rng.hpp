#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace ssmoe {

/// splitmix64 finalizer; derives independent seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded generator whose output sequence is fixed by the standard
/// (mt19937_64) and by the conversions below, so runs reproduce across
/// platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [lo, hi).
  std::int64_t randint(std::int64_t lo, std::int64_t hi);

  template <class T>
  void shuffle(std::span<T> xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(randint(0, static_cast<std::int64_t>(i)));
      std::swap(xs[i - 1], xs[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ssmoe
