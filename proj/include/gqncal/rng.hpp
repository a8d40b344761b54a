#pragma once

#include "gqncal/common.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace gqncal {

/// Deterministic random stream. The engine state evolution is pinned by the
/// standard (mt19937_64) and every transformation below is hand-rolled, so a
/// given seed yields the same draws on any conforming platform. Standard
/// library distributions are implementation-defined and must not be used here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform on the open interval (0, 1), 52-bit resolution.
  double uniform() {
    return (static_cast<double>(eng_() >> 12) + 0.5) * 0x1.0p-52;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// log-uniform on [lo, hi], lo > 0.
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Unbiased integer on [0, n).
  std::uint64_t integer(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / n * n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (cosine branch only, two uniforms per draw).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// log of a Gamma(shape, 1) draw. Stable down to very small shapes, where a
  /// linear-scale draw would underflow: for shape < 1 the boost
  ///   log G(a) = log G(a+1) + log(U)/a
  /// is applied in log space.
  double log_gamma(double shape) {
    if (!(shape > 0.0)) throw SpecError("log_gamma: shape must be positive");
    if (shape < 1.0) {
      return log_gamma(shape + 1.0) + std::log(uniform()) / shape;
    }
    // Marsaglia-Tsang squeeze
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v);
    }
  }

  /// Gamma(shape, rate) draw on the linear scale.
  double gamma(double shape, double rate) {
    return std::exp(log_gamma(shape) - std::log(rate));
  }

  /// Poisson(lambda) count: product-of-uniforms for small means, transformed
  /// rejection (Hormann's PTRS) for large ones.
  long long poisson(double lambda) {
    if (lambda == 0.0) return 0;
    if (!(lambda > 0.0)) throw SpecError("poisson: mean must be nonnegative");
    if (lambda < 30.0) {
      const double limit = std::exp(-lambda);
      long long k = 0;
      double p = 1.0;
      do {
        ++k;
        p *= uniform();
      } while (p > limit);
      return k - 1;
    }
    const double b = 0.931 + 2.53 * std::sqrt(lambda);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_lambda = std::log(lambda);
    for (;;) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::abs(u);
      const double kf = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
      if (us >= 0.07 && v <= v_r) return static_cast<long long>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
          kf * log_lambda - lambda - std::lgamma(kf + 1.0))
        return static_cast<long long>(kf);
    }
  }

  /// logit of a Beta(a, b) draw, via the two-gamma representation
  /// logit(X/(X+Y)) = log X - log Y. Stable for tiny shapes.
  double logit_beta(double a, double b) { return log_gamma(a) - log_gamma(b); }

  double beta(double a, double b) {
    const double t = logit_beta(a, b);
    return 1.0 / (1.0 + std::exp(-t));
  }

  /// Fills v with i.i.d. standard normals.
  void fill_normal(Eigen::Ref<Vector> v) {
    for (Index i = 0; i < v.size(); ++i) v[i] = normal();
  }

 private:
  std::mt19937_64 eng_;
};

/// Closed range for one scalar parameter, sampled uniformly (or log-uniformly)
/// per draw. lo == hi pins the parameter and consumes no randomness.
struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;
  bool log_scale = false;

  static ParamRange fixed(double v) { return {v, v, false}; }

  double draw(Rng& rng) const {
    if (!(hi >= lo)) throw SpecError("parameter range: hi < lo");
    if (lo == hi) return lo;
    if (log_scale) {
      if (!(lo > 0.0)) throw SpecError("parameter range: log scale needs lo > 0");
      return rng.log_uniform(lo, hi);
    }
    return rng.uniform(lo, hi);
  }
};

}  // namespace gqncal
