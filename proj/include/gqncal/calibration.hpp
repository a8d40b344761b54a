#pragma once

#include "gqncal/common.hpp"
#include "gqncal/domain.hpp"
#include "gqncal/dynamics.hpp"
#include "gqncal/rng.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstring>
#include <vector>

namespace gqncal {

enum class BStructure { diagonal, neighborhood };

/// Declarative sampling table for the process parameters: each replicate of
/// the ensemble draws one value per range, then rebuilds the propagator, the
/// quadratic tensor (with fresh Bernoulli thinning), and the covariances.
struct GqnPriorSpec {
  ParamRange delta_self;            // propagator weight at distance zero
  ParamRange delta_neighbor;        // propagator weight for 0 < d < rho
  ParamRange nu;                    // quadratic coefficient
  ParamRange gamma0 = ParamRange::fixed(0.0);
  ParamRange gamma1 = ParamRange::fixed(1.0);
  ParamRange sigma2_eta = ParamRange::fixed(0.0);
  ParamRange phi_eta = ParamRange::fixed(1.0);
  ParamRange sigma2_0 = ParamRange::fixed(0.0);
  ParamRange phi_0 = ParamRange::fixed(1.0);
  double p_a = 1.0;                 // keep-probability for neighbor propagator entries
  double p_b = 1.0;                 // keep-probability for quadratic entries
  double rho = 1.5;                 // neighborhood radius (strict)
  BStructure b_structure = BStructure::neighborhood;
  GKind g = GKind::exponential;
  bool linear_only = false;         // drop the quadratic tensor entirely

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the raw bytes
    const auto mix = [&h](const void* p, std::size_t len) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < len; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    const auto mixr = [&](const ParamRange& r) {
      mix(&r.lo, sizeof r.lo);
      mix(&r.hi, sizeof r.hi);
      const char c = r.log_scale ? 1 : 0;
      mix(&c, 1);
    };
    for (const ParamRange* r :
         {&delta_self, &delta_neighbor, &nu, &gamma0, &gamma1, &sigma2_eta, &phi_eta, &sigma2_0,
          &phi_0})
      mixr(*r);
    mix(&p_a, sizeof p_a);
    mix(&p_b, sizeof p_b);
    mix(&rho, sizeof rho);
    const char tags[3] = {static_cast<char>(b_structure), static_cast<char>(g),
                          static_cast<char>(linear_only)};
    mix(tags, 3);
    return h;
  }
};

/// Realizes one process specification from the prior: parameter draws first
/// (fixed order), then the propagator thinning mask, then the quadratic mask.
inline DynamicsSpec draw_gqn_spec(const GqnPriorSpec& prior, const SpatialDomain& domain,
                                  Rng& rng) {
  const Index n = domain.n();
  if (domain.kind == SpatialDomain::Kind::areal)
    throw SpecError("draw_gqn_spec: process simulation needs point or lattice sites");
  const double d_self = prior.delta_self.draw(rng);
  const double d_nbr = prior.delta_neighbor.draw(rng);
  const double nu = prior.nu.draw(rng);
  const double gamma0 = prior.gamma0.draw(rng);
  const double gamma1 = prior.gamma1.draw(rng);
  const double s2_eta = prior.sigma2_eta.draw(rng);
  const double phi_eta = prior.phi_eta.draw(rng);
  const double s2_0 = prior.sigma2_0.draw(rng);
  const double phi_0 = prior.phi_0.draw(rng);
  if (!(gamma1 > 0.0)) throw SpecError("draw_gqn_spec: gamma1 must be positive");

  const Matrix dist = pairwise_distances(domain.coords);

  DynamicsSpec spec;
  spec.domain = domain;
  std::vector<Eigen::Triplet<double>> trips;
  for (Index i = 0; i < n; ++i) {
    if (d_self != 0.0)
      trips.emplace_back(static_cast<int>(i), static_cast<int>(i), d_self);
    for (Index j = 0; j < n; ++j) {
      if (j == i || dist(i, j) >= prior.rho) continue;
      if (prior.p_a >= 1.0 || rng.bernoulli(prior.p_a)) {
        if (d_nbr != 0.0)
          trips.emplace_back(static_cast<int>(i), static_cast<int>(j), d_nbr);
      }
    }
  }
  spec.A.resize(n, n);
  spec.A.setFromTriplets(trips.begin(), trips.end());
  spec.A.makeCompressed();

  if (!prior.linear_only && nu != 0.0) {
    if (prior.b_structure == BStructure::diagonal) {
      for (Index i = 0; i < n; ++i)
        if (prior.p_b >= 1.0 || rng.bernoulli(prior.p_b)) spec.B.push_back({i, i, i, nu});
    } else {
      std::vector<Index> nbr;
      for (Index i = 0; i < n; ++i) {
        nbr.clear();
        for (Index k = 0; k < n; ++k)
          if (dist(i, k) < prior.rho) nbr.push_back(k);
        for (Index k : nbr)
          for (Index l : nbr)
            if (prior.p_b >= 1.0 || rng.bernoulli(prior.p_b)) spec.B.push_back({i, k, l, nu});
      }
    }
  }

  spec.reaction = {gamma0, gamma1, prior.g};
  spec.sigma_eta = exp_cov(domain.coords, s2_eta, phi_eta);
  spec.sigma0 = exp_cov(domain.coords, s2_0, phi_0);
  return spec;
}

/// Ensemble summary kept in factored form: the centered replicate matrix C
/// gives the covariance as C C'/R without ever materializing an nT x nT
/// matrix unless a caller explicitly asks for it.
struct EnsembleCovariance {
  Matrix centered;  // nT x R, column r holds replicate r minus the mean
  Vector mu;        // nT
  Index R = 0;
  GqnPriorSpec prior;

  Matrix sigma() const { return centered * centered.transpose() / static_cast<double>(R); }
};

inline EnsembleCovariance ensemble_covariance(const GqnPriorSpec& prior,
                                              const SpatialDomain& domain, Index T, Index R,
                                              std::uint64_t seed, int threads = 1) {
  if (R < 2) throw SpecError("ensemble_covariance: needs R >= 2 replicates");
  const Index n = domain.n();
  const Index nT = n * T;
  Matrix U(nT, R);
  parallel_for(R, threads, [&](Index rep) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(rep)));
    const DynamicsSpec spec = draw_gqn_spec(prior, domain, rng);
    const FieldSeries f = simulate_series(spec, T, rng);
    U.col(rep) = Eigen::Map<const Vector>(f.values.data(), nT);
  });
  EnsembleCovariance out;
  out.mu = U.rowwise().mean();
  out.centered = U.colwise() - out.mu;
  out.R = R;
  out.prior = prior;
  return out;
}

/// The unique minimizer of ||G K G' - S||_F over symmetric K for a
/// full-column-rank G: K = (G'G)^{-1} G' S G (G'G)^{-1}.
inline Matrix frobenius_match(const Matrix& sigma_hat, const Matrix& G) {
  if (sigma_hat.rows() != sigma_hat.cols() || sigma_hat.rows() != G.rows())
    throw SpecError("frobenius_match: dimension mismatch");
  Eigen::BDCSVD<Matrix> svd(G);
  const double smax = svd.singularValues()[0];
  const double smin = svd.singularValues()[svd.singularValues().size() - 1];
  if (!(smin > 1e-10 * smax))
    throw NumericError("frobenius_match: basis is rank deficient (smallest singular value " +
                       std::to_string(smin) + " vs largest " + std::to_string(smax) + ")");
  const Matrix W = G.transpose() * G;
  Eigen::LDLT<Matrix> ldlt(W);
  const Matrix inner = G.transpose() * sigma_hat * G;
  const Matrix half = ldlt.solve(inner);
  Matrix K = ldlt.solve(half.transpose()).transpose();
  return 0.5 * (K + K.transpose());
}

/// Covariance-free route: identical algebra through the centered replicates,
/// O(nT R r) instead of O((nT)^2 r).
inline Matrix frobenius_match_factored(const Matrix& centered, Index R, const Matrix& G) {
  if (centered.rows() != G.rows()) throw SpecError("frobenius_match: dimension mismatch");
  Eigen::BDCSVD<Matrix> svd(G);
  const double smax = svd.singularValues()[0];
  const double smin = svd.singularValues()[svd.singularValues().size() - 1];
  if (!(smin > 1e-10 * smax))
    throw NumericError("frobenius_match: basis is rank deficient (smallest singular value " +
                       std::to_string(smin) + " vs largest " + std::to_string(smax) + ")");
  const Matrix P = G.transpose() * centered;  // r x R
  const Matrix W = G.transpose() * G;
  Eigen::LDLT<Matrix> ldlt(W);
  const Matrix inner = P * P.transpose() / static_cast<double>(R);
  const Matrix half = ldlt.solve(inner);
  Matrix K = ldlt.solve(half.transpose()).transpose();
  return 0.5 * (K + K.transpose());
}

/// Symmetric PSD square root with eigenvalues below 1e-12 * max clipped to 0.
inline Matrix psd_sqrt(const Matrix& K) {
  if (K.rows() != K.cols()) throw SpecError("psd_sqrt: matrix must be square");
  const double scale = K.cwiseAbs().maxCoeff();
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(scale, 1e-300))
    throw SpecError("psd_sqrt: matrix is not symmetric within tolerance");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (K + K.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("psd_sqrt: eigendecomposition failed");
  const Vector& ev = es.eigenvalues();
  const double max_ev = ev[ev.size() - 1];
  if (!(max_ev > 0.0)) throw NumericError("psd_sqrt: covariance collapsed (max eigenvalue <= 0)");
  Vector root = ev;
  for (Index i = 0; i < root.size(); ++i)
    root[i] = ev[i] < 1e-12 * max_ev ? 0.0 : std::sqrt(ev[i]);
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

struct CalibratedCovariance {
  Matrix K;
  Matrix K_sqrt;
  Matrix L;  // G * K_sqrt
  double frobenius_residual = 0.0;
};

inline CalibratedCovariance calibrate(const Matrix& sigma_hat, const Matrix& G) {
  CalibratedCovariance out;
  out.K = frobenius_match(sigma_hat, G);
  out.K_sqrt = psd_sqrt(out.K);
  out.L = G * out.K_sqrt;
  out.frobenius_residual = (G * out.K * G.transpose() - sigma_hat).norm();
  return out;
}

/// Calibration against an ensemble held in factored form. The residual uses
///   ||GKG' - CC'/R||_F^2 = tr(KWKW) - 2 tr(K P P')/R + ||C'C||_F^2 / R^2
/// with W = G'G and P = G'C, so the nT x nT covariance never exists.
inline CalibratedCovariance calibrate(const EnsembleCovariance& ens, const Matrix& G) {
  CalibratedCovariance out;
  out.K = frobenius_match_factored(ens.centered, ens.R, G);
  out.K_sqrt = psd_sqrt(out.K);
  out.L = G * out.K_sqrt;
  const double R = static_cast<double>(ens.R);
  const Matrix W = G.transpose() * G;
  const Matrix KW = out.K * W;
  const double term1 = KW.cwiseProduct(KW.transpose()).sum();
  const Matrix P = G.transpose() * ens.centered;
  const double term2 = 2.0 / R * out.K.cwiseProduct(P * P.transpose()).sum();
  const double term3 = (ens.centered.transpose() * ens.centered).squaredNorm() / (R * R);
  out.frobenius_residual = std::sqrt(std::max(0.0, term1 - term2 + term3));
  return out;
}

}  // namespace gqncal
