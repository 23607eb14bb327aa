#pragma once

#include <cstdint>
#include <random>

#include "cbodd/tensor.hpp"

namespace cbodd {

/// Seeded engine used for every stochastic choice in the library.
/// Streams derived with `fork` are independent of how many draws the parent
/// has made, so adding a consumer never perturbs the others.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  Rng fork(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }
  std::mt19937_64& engine() { return engine_; }

  /// splitmix64 finalizer over (a, b).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Trainable leaf with values uniform in (-sqrt(1/fan_in), +sqrt(1/fan_in)).
Tensor init_uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace cbodd
