#pragma once

#include "gqncal/common.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace gqncal {

inline double mspe(const Vector& pred, const Vector& truth) {
  if (pred.size() != truth.size()) throw SpecError("mspe: length mismatch");
  if (pred.size() < 1) throw SpecError("mspe: needs at least one element");
  return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

/// Empirical CRPS, mean|X - y| - 0.5 mean|X - X'| over all ordered pairs.
/// The pair sum collapses to a weighted sum over the sorted sample:
/// sum_{i<j} (x_(j) - x_(i)) = sum_m (2m + 1 - k) x_(m).
inline double crps_ensemble(std::vector<double> draws, double truth) {
  const std::size_t k = draws.size();
  if (k < 2) throw SpecError("crps_ensemble: needs at least two draws");
  double t1 = 0.0;
  for (double v : draws) t1 += std::abs(v - truth);
  t1 /= static_cast<double>(k);
  std::sort(draws.begin(), draws.end());
  double pair_sum = 0.0;
  for (std::size_t m = 0; m < k; ++m)
    pair_sum += (2.0 * static_cast<double>(m) + 1.0 - static_cast<double>(k)) * draws[m];
  const double t2 = 2.0 * pair_sum / (static_cast<double>(k) * static_cast<double>(k));
  return t1 - 0.5 * t2;
}

inline double crps_ensemble(const Vector& draws, double truth) {
  return crps_ensemble(std::vector<double>(draws.data(), draws.data() + draws.size()), truth);
}

/// WAIC = -2 sum_i [log mean_r exp(l_ir) - var_r(l_ir)], log-mean-exp shifted
/// by the row maximum, variance accumulated by Welford's recurrence.
inline double waic(const Matrix& loglik) {
  const Index n = loglik.rows(), R = loglik.cols();
  if (n < 1 || R < 2) throw SpecError("waic: needs at least one row and two replicates");
  if (!loglik.allFinite()) throw SpecError("waic: non-finite log-likelihood input");
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double shift = loglik.row(i).maxCoeff();
    double acc = 0.0;
    double mean = 0.0, m2 = 0.0;
    for (Index r = 0; r < R; ++r) {
      const double l = loglik(i, r);
      acc += std::exp(l - shift);
      const double d = l - mean;
      mean += d / static_cast<double>(r + 1);
      m2 += d * (l - mean);
    }
    const double lppd = shift + std::log(acc / static_cast<double>(R));
    const double penalty = m2 / static_cast<double>(R - 1);
    total += lppd - penalty;
  }
  return -2.0 * total;
}

/// Mann-Whitney AUC with midranks, equal to P(score_pos > score_neg) plus
/// half the tie probability.
inline double auc(const Vector& scores, const std::vector<int>& labels) {
  const Index m = scores.size();
  if (static_cast<Index>(labels.size()) != m) throw SpecError("auc: length mismatch");
  Index n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw SpecError("auc: labels must be 0 or 1");
    n_pos += l;
  }
  const Index n_neg = m - n_pos;
  if (n_pos == 0 || n_neg == 0) throw SpecError("auc: both classes must be present");

  std::vector<Index> order(m);
  for (Index i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  Index i = 0;
  while (i < m) {
    Index j = i;
    while (j < m && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j + 1);  // 1-based average rank
    for (Index t = i; t < j; ++t)
      if (labels[order[t]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

inline Vector residuals(const Vector& pred, const Vector& truth) {
  if (pred.size() != truth.size()) throw SpecError("residuals: length mismatch");
  return pred - truth;
}

/// Scores for one fitted run; fields stay empty when the family or the
/// holdout/forecast configuration makes them inapplicable.
struct ScoreReport {
  std::optional<double> forecast_error;
  std::optional<double> in_sample_mspe;
  std::optional<double> out_of_sample_mspe;
  std::optional<double> beta_mse;
  std::optional<double> crps;
  std::optional<double> waic;
  std::optional<double> auc;
  std::optional<double> cpu_seconds;
};

inline void validate(const ScoreReport& report) {
  const auto nonneg = [](const std::optional<double>& v, const char* name) {
    if (v && !(*v >= 0.0)) throw SpecError(std::string("score report: ") + name + " is negative");
  };
  nonneg(report.forecast_error, "forecast_error");
  nonneg(report.in_sample_mspe, "in_sample_mspe");
  nonneg(report.out_of_sample_mspe, "out_of_sample_mspe");
  nonneg(report.beta_mse, "beta_mse");
  nonneg(report.crps, "crps");
  nonneg(report.cpu_seconds, "cpu_seconds");
  if (report.auc && !(*report.auc >= 0.0 && *report.auc <= 1.0))
    throw SpecError("score report: auc outside [0, 1]");
}

}  // namespace gqncal
