#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace l2calib {

/// Deterministic random source. All variates are derived from the raw
/// 64-bit stream, so a (seed, stream) pair gives bit-identical draws on
/// every platform and under any thread schedule.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// splitmix64 mix of (master, stream), used to derive independent
  /// per-replicate seeds from one master seed.
  static std::uint64_t derive(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  double exponential(double rate) {
    return -std::log1p(-uniform01()) / rate;
  }

  double normal() {
    // Box-Muller, one value per call (the pair mate is cached).
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(6.283185307179586477 * u2);
    have_spare_ = true;
    return r * std::cos(6.283185307179586477 * u2);
  }

  /// Exact Poisson sampling by counting unit-exponential arrivals.
  /// O(mean) per draw, which is fine for the count scales used here.
  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    long k = 0;
    double t = exponential(1.0);
    while (t < mean) {
      ++k;
      t += exponential(1.0);
    }
    return k;
  }

  /// Marsaglia-Tsang, shape >= 0 with the usual boost for shape < 1.
  double gamma(double shape, double scale) {
    if (shape < 1.0) {
      double u = uniform01();
      while (u <= 0.0) u = uniform01();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v * scale;
    }
  }

  /// Negative binomial as a gamma-Poisson mixture with mean `mean` and
  /// variance `mean * var_factor` (var_factor > 1).
  long neg_binomial(double mean, double var_factor) {
    double shape = mean / (var_factor - 1.0);
    double lam = gamma(shape, var_factor - 1.0);
    return poisson(lam);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace l2calib
