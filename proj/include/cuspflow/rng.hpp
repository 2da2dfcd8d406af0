#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cuspflow {

/// One SplitMix64 output; advances `state`.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed of stream `index` under `master`. `salt` separates experiments
/// that share a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                 std::uint64_t salt = 0) noexcept {
  std::uint64_t s = master ^ (0xD1B54A32D192ED03ULL * (salt + 1));
  splitmix64(s);
  s ^= index * 0x9E3779B97F4A7C15ULL;
  return splitmix64(s);
}

/// mt19937_64 with distribution transforms written out, so streams are
/// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open_zero() { return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53; }

  double exponential(double mean) { return -mean * std::log(uniform_open_zero()); }

  /// Pareto (Lomax-shifted) gap with tail index `shape` > 1 and given mean.
  double pareto(double mean, double shape) {
    const double scale = mean * (shape - 1.0) / shape;
    return scale * std::pow(uniform_open_zero(), -1.0 / shape);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace cuspflow
