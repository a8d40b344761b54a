#pragma once

#include "gqncal/basis.hpp"
#include "gqncal/common.hpp"
#include "gqncal/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace gqncal {

enum class Family { gaussian, poisson, bernoulli };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::poisson: return "poisson";
    default: return "bernoulli";
  }
}

/// Observed responses with their regression design. For the gaussian family
/// sigma2 may pin a per-row observation variance; left empty, the scale is a
/// hyperparameter drawn per replicate. holdout_mask flags rows the fit must
/// not see (the pipeline splits on it before building a design).
struct Dataset {
  Vector z;
  Matrix X;
  Family family = Family::gaussian;
  Vector sigma2;               // gaussian only; empty means drawn from the hyperprior
  std::vector<RowKey> rows;    // (site/area id, time) per row, may be empty
  std::vector<char> holdout_mask;  // per row, may be empty

  Index n() const { return z.size(); }
};

inline void validate(const Dataset& data) {
  const Index n = data.z.size();
  if (data.X.rows() != n) throw SpecError("dataset: X rows disagree with z");
  if (!data.rows.empty() && static_cast<Index>(data.rows.size()) != n)
    throw SpecError("dataset: row labels disagree with z");
  if (!data.holdout_mask.empty() && static_cast<Index>(data.holdout_mask.size()) != n)
    throw SpecError("dataset: holdout mask disagrees with z");
  switch (data.family) {
    case Family::gaussian:
      if (data.sigma2.size() != 0) {
        if (data.sigma2.size() != n) throw SpecError("dataset: sigma2 length disagrees with z");
        for (Index i = 0; i < n; ++i)
          if (!(data.sigma2[i] > 0.0))
            throw SpecError("dataset: gaussian variance must be positive at row " +
                            std::to_string(i));
      }
      break;
    case Family::poisson:
      for (Index i = 0; i < n; ++i)
        if (!(data.z[i] >= 0.0) || data.z[i] != std::floor(data.z[i]))
          throw SpecError("dataset: poisson response must be a nonnegative integer at row " +
                          std::to_string(i));
      break;
    case Family::bernoulli:
      for (Index i = 0; i < n; ++i)
        if (data.z[i] != 0.0 && data.z[i] != 1.0)
          throw SpecError("dataset: bernoulli response must be 0 or 1 at row " +
                          std::to_string(i));
      break;
  }
}

/// One hyperparameter: either a sampling range or an explicit grid of values
/// picked uniformly. Defaults to the wide log-uniform variance prior.
struct HyperParam {
  ParamRange range{1e-3, 1e2, true};
  std::vector<double> grid;  // non-empty overrides range

  static HyperParam fixed(double v) { return {ParamRange::fixed(v), {}}; }

  double draw(Rng& rng) const {
    if (!grid.empty()) {
      if (grid.size() == 1) return grid[0];
      return grid[rng.integer(grid.size())];
    }
    return range.draw(rng);
  }
};

struct EprHyper {
  HyperParam sigma2_beta;
  HyperParam sigma2_eta;
  HyperParam sigma2_xi;
  HyperParam sigma2_z;       // gaussian data scale, used when Dataset.sigma2 is empty
  double alpha_xi = 0.001;   // count/binary regularizer, must stay positive for zero counts
};

/// H = [[I, X, L], [0, I, 0], [0, 0, I], [I, 0, 0]], shape (2n+p+r) x (n+p+r).
inline Matrix build_H(Index n, Index p, Index r, const Matrix& X, const Matrix& L) {
  if (X.rows() != n || X.cols() != p) throw SpecError("build_H: X must be n x p");
  if (L.rows() != n || L.cols() != r) throw SpecError("build_H: L must be n x r");
  Matrix H = Matrix::Zero(2 * n + p + r, n + p + r);
  H.topLeftCorner(n, n).setIdentity();
  H.block(0, n, n, p) = X;
  H.block(0, n + p, n, r) = L;
  H.block(n, n, p + r, p + r).setIdentity();
  H.block(n + p + r, 0, n, n).setIdentity();
  return H;
}

namespace detail {

/// Orthonormal basis of null([I W; 0 I; I 0]') from the structural basis
/// N = [I; -W'; -I], whose product with H' cancels exactly. Two rounds of
/// Cholesky-based orthonormalization (the Gram matrix 2I + WW' is at least
/// 2I, so the first factorization never breaks down and the second round
/// polishes Q to machine orthonormality).
inline Matrix structural_null_q(const Matrix& W) {
  const Index n = W.rows();
  const Index k = W.cols();
  Matrix N(2 * n + k, n);
  N.topRows(n) = Matrix::Identity(n, n);
  N.middleRows(n, k) = -W.transpose();
  N.bottomRows(n) = -Matrix::Identity(n, n);
  Matrix gram = 2.0 * Matrix::Identity(n, n) + W * W.transpose();
  for (int round = 0; round < 2; ++round) {
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success)
      throw NumericError("build_Q: Gram matrix factorization failed");
    llt.matrixU().template solveInPlace<Eigen::OnTheRight>(N);
    if (round == 0) gram = N.transpose() * N;
  }
  return N;
}

}  // namespace detail

/// Orthonormal basis of the null space of H'. The block layout produced by
/// build_H is recognized and handled by the structural route above; anything
/// else falls back to a Householder factorization of H.
inline Matrix build_Q(const Matrix& H) {
  const Index rows = H.rows();
  const Index m = H.cols();
  if (rows <= m) throw SpecError("build_Q: H must have more rows than columns");
  const Index n = rows - m;
  const Index k = m - n;
  if (k >= 0) {
    const bool canonical =
        (H.topLeftCorner(n, n) - Matrix::Identity(n, n)).isZero(0.0) &&
        H.block(n, 0, k, n).isZero(0.0) &&
        (H.block(n, n, k, k) - Matrix::Identity(k, k)).isZero(0.0) &&
        (H.block(n + k, 0, n, n) - Matrix::Identity(n, n)).isZero(0.0) &&
        H.block(n + k, n, n, k).isZero(0.0);
    if (canonical) return detail::structural_null_q(H.topRightCorner(n, k));
  }
  Eigen::HouseholderQR<Matrix> qr(H);
  const Vector diag = qr.matrixQR().diagonal().head(m).cwiseAbs();
  if (!(diag.minCoeff() > 1e-10 * diag.maxCoeff()))
    throw NumericError("build_Q: H is rank deficient");
  Matrix tail = Matrix::Zero(rows, n);
  tail.bottomRows(n).setIdentity();
  return qr.householderQ() * tail;
}

/// Expanded design for one fit. The factored solve pieces (W = [X L] and the
/// Cholesky of I + W'W/2, the Schur complement of the normal matrix) are
/// computed once and reused across every replicate.
struct EprDesign {
  Matrix H;  // (2n+p+r) x (n+p+r)
  Matrix Q;  // (2n+p+r) x n, orthonormal columns spanning null(H')
  Matrix X;  // n x p
  Matrix L;  // n x r
  EprHyper hyper;
  Matrix W;                  // [X L]
  Eigen::LLT<Matrix> S_llt;  // I + W'W/2
  Index n = 0, p = 0, r = 0;
};

inline EprDesign build_design(const Matrix& X, const Matrix& L, const EprHyper& hyper) {
  if (X.rows() != L.rows()) throw SpecError("build_design: X and L row counts differ");
  EprDesign d;
  d.n = X.rows();
  d.p = X.cols();
  d.r = L.cols();
  d.X = X;
  d.L = L;
  d.hyper = hyper;
  d.H = build_H(d.n, d.p, d.r, X, L);
  d.Q = detail::structural_null_q(d.H.topRightCorner(d.n, d.p + d.r));
  d.W.resize(d.n, d.p + d.r);
  d.W << X, L;
  const Matrix S =
      Matrix::Identity(d.p + d.r, d.p + d.r) + 0.5 * d.W.transpose() * d.W;
  d.S_llt.compute(S);
  if (d.S_llt.info() != Eigen::Success)
    throw NumericError("build_design: Schur complement factorization failed");
  return d;
}

/// One conjugate-family draw from the density proportional to
/// exp(a w - b psi(w)): normal for the quadratic psi, log-gamma for the
/// exponential psi, logit-beta for the logistic psi.
inline double dy_sample(Family family, double a, double b, Rng& rng, Index row = -1) {
  const auto at_row = [row]() {
    return row >= 0 ? " at row " + std::to_string(row) : std::string();
  };
  switch (family) {
    case Family::gaussian:
      if (!(b > 0.0)) throw SpecError("dy_sample: gaussian needs b > 0" + at_row());
      return a / (2.0 * b) + std::sqrt(0.5 / b) * rng.normal();
    case Family::poisson:
      if (!(a > 0.0))
        throw SpecError("dy_sample: poisson needs a > 0" + at_row() +
                        " (zero counts require alpha_xi > 0)");
      if (!(b > 0.0)) throw SpecError("dy_sample: poisson needs b > 0" + at_row());
      return rng.log_gamma(a) - std::log(b);
    default:
      if (!(a > 0.0) || !(b > a))
        throw SpecError("dy_sample: bernoulli needs b > a > 0" + at_row());
      return rng.logit_beta(a, b - a);
  }
}

inline double dy_sample(Family family, double a, double b, std::uint64_t seed) {
  Rng rng(seed);
  return dy_sample(family, a, b, rng);
}

/// Independent posterior replicates. theta rows follow theta_names; tau_y is
/// the first block of -Q q, stored explicitly so predictions at the fitted
/// rows can be reassembled without the stacked working vector.
struct PosteriorDraws {
  Matrix xi;       // n x n_reps
  Matrix beta;     // p x n_reps
  Matrix eta;      // r x n_reps
  Matrix q;        // n x n_reps
  Matrix y_rep;    // n x n_reps, the data-level replicate w_y
  Matrix tau_y;    // n x n_reps
  Matrix w_stack;  // (2n+p+r) x n_reps, the full working vector per replicate
  Matrix theta;    // hyperparameter draws, one row per name
  std::vector<std::string> theta_names;

  Index n_reps() const { return xi.cols(); }
};

/// Samples n_reps independent replicates of (xi, beta, eta, q). Each
/// replicate draws its own hyperparameters, its own data-level variate per
/// row, and its own prior noise; the deterministic solve
///   (xi, beta, eta) = (H'H)^{-1} H' w,  q = Q' w
/// is batched across replicates through the cached Schur factorization.
inline PosteriorDraws posterior_replicates(const Dataset& data, const EprDesign& design,
                                           Index n_reps, std::uint64_t seed, int threads = 1) {
  validate(data);
  const Index n = design.n, p = design.p, r = design.r;
  if (data.z.size() != n || data.X.cols() != p)
    throw SpecError("posterior_replicates: dataset does not match design");
  if (n_reps < 1) throw SpecError("posterior_replicates: needs n_reps >= 1");
  if (data.family == Family::poisson && !(design.hyper.alpha_xi > 0.0)) {
    for (Index i = 0; i < n; ++i)
      if (data.z[i] == 0.0)
        throw SpecError("posterior_replicates: poisson row " + std::to_string(i) +
                        " has z = 0; set alpha_xi > 0");
  }
  const bool draw_scale = data.family == Family::gaussian && data.sigma2.size() == 0;

  PosteriorDraws out;
  out.theta_names = {"sigma2_beta", "sigma2_eta", "sigma2_xi"};
  if (draw_scale) out.theta_names.push_back("sigma2_z");
  const Index n_theta = static_cast<Index>(out.theta_names.size());

  Matrix w(2 * n + p + r, n_reps);
  Matrix theta(n_theta, n_reps);
  const double alpha_xi = design.hyper.alpha_xi;
  parallel_for(n_reps, threads, [&](Index rep) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
    const double s2_beta = design.hyper.sigma2_beta.draw(rng);
    const double s2_eta = design.hyper.sigma2_eta.draw(rng);
    const double s2_xi = design.hyper.sigma2_xi.draw(rng);
    theta(0, rep) = s2_beta;
    theta(1, rep) = s2_eta;
    theta(2, rep) = s2_xi;
    double s2_z = 0.0;
    if (draw_scale) {
      s2_z = design.hyper.sigma2_z.draw(rng);
      theta(3, rep) = s2_z;
    }
    auto col = w.col(rep);
    for (Index i = 0; i < n; ++i) {
      double a = 0.0, b = 0.0;
      switch (data.family) {
        case Family::gaussian: {
          const double s2 = data.sigma2.size() != 0 ? data.sigma2[i] : s2_z;
          a = data.z[i] / s2;
          b = 0.5 / s2;
          break;
        }
        case Family::poisson:
          a = data.z[i] + alpha_xi;
          b = 1.0;
          break;
        case Family::bernoulli:
          a = data.z[i] + alpha_xi;
          b = 1.0 + 2.0 * alpha_xi;
          break;
      }
      col[i] = dy_sample(data.family, a, b, rng, i);
    }
    const double sd_beta = std::sqrt(s2_beta);
    for (Index j = 0; j < p; ++j) col[n + j] = sd_beta * rng.normal();
    const double sd_eta = std::sqrt(s2_eta);
    for (Index j = 0; j < r; ++j) col[n + p + j] = sd_eta * rng.normal();
    const double sd_xi = std::sqrt(s2_xi);
    for (Index i = 0; i < n; ++i) col[n + p + r + i] = sd_xi * rng.normal();
  });

  const auto w_y = w.topRows(n);
  const Matrix c1 = w_y + w.bottomRows(n);
  Matrix c2(p + r, n_reps);
  c2.topRows(p) = design.X.transpose() * w_y + w.middleRows(n, p);
  c2.bottomRows(r) = design.L.transpose() * w_y + w.middleRows(n + p, r);
  const Matrix z2 = design.S_llt.solve(c2 - 0.5 * design.W.transpose() * c1);
  out.xi = 0.5 * (c1 - design.W * z2);
  out.beta = z2.topRows(p);
  out.eta = z2.bottomRows(r);
  out.q = design.Q.transpose() * w;
  out.y_rep = w_y;
  out.tau_y = out.xi + design.X * out.beta + design.L * out.eta - out.y_rep;
  out.w_stack = std::move(w);
  out.theta = std::move(theta);
  return out;
}

/// Latent-scale predictions, one column per replicate. Fitted rows add the
/// row-bound pieces xi - tau_y; new rows (held-out sites or forecast times)
/// carry only the smooth part X beta + L eta.
inline Matrix latent_predict(const PosteriorDraws& draws, const Matrix& X_rows,
                             const Matrix& L_rows, bool include_xi) {
  if (X_rows.rows() != L_rows.rows())
    throw SpecError("latent_predict: X and L row counts differ");
  if (X_rows.cols() != draws.beta.rows() || L_rows.cols() != draws.eta.rows())
    throw SpecError("latent_predict: covariate columns do not match the draws");
  if (!X_rows.allFinite() || !L_rows.allFinite())
    throw SpecError("latent_predict: prediction rows carry missing covariate values");
  Matrix pred = X_rows * draws.beta + L_rows * draws.eta;
  if (include_xi) {
    if (X_rows.rows() != draws.xi.rows())
      throw SpecError("latent_predict: include_xi needs exactly the fitted rows");
    pred += draws.xi - draws.tau_y;
  }
  return pred;
}

/// Data-model mean function: identity, exp, or logistic.
inline double apply_link(Family family, double u) {
  switch (family) {
    case Family::gaussian: return u;
    case Family::poisson: return std::exp(u);
    default:
      return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
  }
}

inline Matrix apply_link(Family family, Matrix latent) {
  if (family == Family::gaussian) return latent;
  for (Index j = 0; j < latent.cols(); ++j)
    for (Index i = 0; i < latent.rows(); ++i) latent(i, j) = apply_link(family, latent(i, j));
  return latent;
}

/// Log density of each observation under each replicate's latent value, the
/// input to WAIC. Gaussian scale comes from the per-row variances when the
/// dataset pins them, otherwise from each replicate's drawn sigma2_z.
inline Matrix pointwise_loglik(const Dataset& data, const Matrix& latent,
                               const PosteriorDraws& draws) {
  const Index n = data.z.size();
  const Index reps = latent.cols();
  if (latent.rows() != n) throw SpecError("pointwise_loglik: latent rows disagree with z");
  Matrix ll(n, reps);
  Index scale_row = -1;
  if (data.family == Family::gaussian && data.sigma2.size() == 0) {
    for (std::size_t k = 0; k < draws.theta_names.size(); ++k)
      if (draws.theta_names[k] == "sigma2_z") scale_row = static_cast<Index>(k);
    if (scale_row < 0 || draws.theta.cols() != reps)
      throw SpecError("pointwise_loglik: gaussian scale unavailable");
  }
  constexpr double log_two_pi = 1.8378770664093453;
  for (Index rep = 0; rep < reps; ++rep) {
    for (Index i = 0; i < n; ++i) {
      const double u = latent(i, rep);
      switch (data.family) {
        case Family::gaussian: {
          const double s2 = data.sigma2.size() != 0 ? data.sigma2[i] : draws.theta(scale_row, rep);
          const double d = data.z[i] - u;
          ll(i, rep) = -0.5 * (log_two_pi + std::log(s2)) - 0.5 * d * d / s2;
          break;
        }
        case Family::poisson:
          ll(i, rep) = data.z[i] * u - std::exp(u) - std::lgamma(data.z[i] + 1.0);
          break;
        case Family::bernoulli: {
          // z*u - log(1 + e^u), evaluated on the stable side
          const double softplus = u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
          ll(i, rep) = data.z[i] * u - softplus;
          break;
        }
      }
    }
  }
  return ll;
}

/// Block-expands X so each time level gets its own coefficient column: row
/// with the t-th distinct time holds its covariates in column block t and
/// zeros elsewhere. Output is n x (p * n_times).
inline Matrix expand_time_varying(const Matrix& X, const std::vector<RowKey>& rows) {
  const Index n = X.rows();
  if (static_cast<Index>(rows.size()) != n)
    throw SpecError("expand_time_varying: row labels disagree with X");
  std::vector<double> times;
  for (const RowKey& k : rows) times.push_back(k.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const Index p = X.cols();
  Matrix out = Matrix::Zero(n, p * static_cast<Index>(times.size()));
  for (Index i = 0; i < n; ++i) {
    const auto it = std::lower_bound(times.begin(), times.end(), rows[i].time);
    const Index block = it - times.begin();
    out.block(i, block * p, 1, p) = X.row(i);
  }
  return out;
}

}  // namespace gqncal
