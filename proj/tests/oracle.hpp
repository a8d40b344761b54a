#pragma once

// Reference implementations used only by the test suite. Each is written
// independently of the library code paths it checks: different algorithm,
// different accumulation order, no shared helpers beyond the standard library.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double digamma(double x) {
  double s = 0.0;
  while (x < 6.0) {
    s -= 1.0 / x;
    x += 1.0;
  }
  const double t = 1.0 / (x * x);
  const double r = std::log(x) - 0.5 / x -
                   t * (1.0 / 12 - t * (1.0 / 120 - t * (1.0 / 252 - t * (1.0 / 240 - t / 132))));
  return s + r;
}

inline double norm_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Closed-form CRPS of a N(mean, sd^2) forecast against outcome y.
inline double crps_normal(double mean, double sd, double y) {
  const double z = (y - mean) / sd;
  return sd * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) -
               1.0 / std::sqrt(std::numbers::pi));
}

/// CRPS of an empirical ensemble by the literal all-pairs double loop.
inline double crps_ensemble_naive(const std::vector<double>& x, double y) {
  const std::size_t k = x.size();
  double t1 = 0.0;
  for (double v : x) t1 += std::abs(v - y);
  t1 /= static_cast<double>(k);
  double t2 = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) t2 += std::abs(x[i] - x[j]);
  t2 /= static_cast<double>(k) * static_cast<double>(k);
  return t1 - 0.5 * t2;
}

/// WAIC by a plain two-pass formula: max-shifted log-mean-exp for lppd and a
/// textbook two-pass sample variance (denominator R-1) for the penalty.
inline double waic_two_pass(const Eigen::MatrixXd& loglik) {
  const Eigen::Index n = loglik.rows(), R = loglik.cols();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = loglik.row(i).maxCoeff();
    double acc = 0.0;
    for (Eigen::Index r = 0; r < R; ++r) acc += std::exp(loglik(i, r) - m);
    const double lppd_i = m + std::log(acc / static_cast<double>(R));
    const double mean = loglik.row(i).mean();
    double v = 0.0;
    for (Eigen::Index r = 0; r < R; ++r) {
      const double d = loglik(i, r) - mean;
      v += d * d;
    }
    v /= static_cast<double>(R - 1);
    total += lppd_i - v;
  }
  return -2.0 * total;
}

/// AUC by exhaustive pair enumeration with half credit for ties.
inline double auc_enumerate(const std::vector<double>& score, const std::vector<int>& label) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (label[i] != 1) continue;
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (label[j] != 0) continue;
      ++pairs;
      if (score[i] > score[j]) wins += 1.0;
      else if (score[i] == score[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

/// Minimizes ||G K G' - S||_F^2 over symmetric K by projected gradient descent
/// with exact line search. Independent numerical check of the closed-form
/// matched covariance. The objective is a convex quadratic in K, so descent
/// with the optimal step along -grad converges to the unique minimizer
/// whenever G has full column rank.
inline Eigen::MatrixXd frobenius_min_numeric(const Eigen::MatrixXd& S, const Eigen::MatrixXd& G,
                                             int max_iter = 200000, double rel_tol = 1e-13) {
  const Eigen::Index r = G.cols();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(r, r);
  double g0 = -1.0;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd resid = G * K * G.transpose() - S;
    Eigen::MatrixXd grad = 2.0 * G.transpose() * resid * G;
    grad = 0.5 * (grad + grad.transpose());  // keep the iterate symmetric
    const double gnorm = grad.norm();
    if (g0 < 0.0) g0 = gnorm;
    if (gnorm <= rel_tol * g0 || gnorm == 0.0) break;
    const Eigen::MatrixXd gproj = G * grad * G.transpose();
    const double denom = 2.0 * gproj.squaredNorm();
    if (denom == 0.0) break;
    const double step = grad.squaredNorm() / denom;
    K -= step * grad;
  }
  return 0.5 * (K + K.transpose());
}

/// Mean of the density proportional to exp(a w - b e^w) by Simpson's rule.
/// The mode sits at log(a/b); the window below covers the support to far
/// beyond double precision in both directions.
inline double dy_log_gamma_mean_quadrature(double a, double b) {
  const double mode = std::log(a / b);
  const double lo = mode - 60.0 / std::min(a, 1.0);
  const double hi = mode + 40.0;
  const int segments = 200000;  // even
  const double h = (hi - lo) / segments;
  const double log_peak = a * mode - b * std::exp(mode);
  double mass = 0.0, moment = 0.0;
  for (int i = 0; i <= segments; ++i) {
    const double w = lo + h * i;
    const double f = std::exp(a * w - b * std::exp(w) - log_peak);
    const double coef = (i == 0 || i == segments) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    mass += coef * f;
    moment += coef * f * w;
  }
  return moment / mass;
}

/// Crossing-number inside test written against the determinant form, kept
/// deliberately separate from the library's parity implementation.
inline bool inside_rings(const std::vector<std::vector<Eigen::Vector2d>>& rings, double x0,
                         double y0) {
  int counter = 0;
  for (const auto& ring : rings) {
    for (std::size_t j = 0, i = 1; i < ring.size(); j = i++) {
      double x1 = ring[j].x(), y1 = ring[j].y();
      double x2 = ring[i].x(), y2 = ring[i].y();
      if (y1 > y2) {
        std::swap(x1, x2);
        std::swap(y1, y2);
      }
      if (y0 < y1 || y0 > y2 || y1 == y2) continue;
      const double det = x1 * y2 - x2 * y1 - x0 * y2 + x2 * y0 + x0 * y1 - x1 * y0;
      if (det > 0.0) ++counter;
    }
  }
  return counter % 2 == 1;
}

/// Deterministic change-of-support reference: midpoint-rule average of the
/// bisquare over a fine grid of the polygon's bounding box, restricted to
/// interior points.
inline double cos_grid_quadrature(const std::vector<std::vector<Eigen::Vector2d>>& rings,
                                  double xmin, double ymin, double xmax, double ymax, double t,
                                  const Eigen::Vector2d& knot_s, double knot_t, double gamma,
                                  int cells = 200) {
  double acc = 0.0;
  long count = 0;
  for (int iy = 0; iy < cells; ++iy) {
    const double y = ymin + (ymax - ymin) * (iy + 0.5) / cells;
    for (int ix = 0; ix < cells; ++ix) {
      const double x = xmin + (xmax - xmin) * (ix + 0.5) / cells;
      if (!inside_rings(rings, x, y)) continue;
      const double dt = t - knot_t;
      const double dx = x - knot_s.x(), dy = y - knot_s.y();
      const double d2 = dx * dx + dy * dy + dt * dt;
      const double g2 = gamma * gamma;
      if (d2 <= g2) {
        const double w = 1.0 - d2 / g2;
        acc += w * w;
      }
      ++count;
    }
  }
  return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

}  // namespace oracle
