#pragma once

#include "gqncal/common.hpp"
#include "gqncal/domain.hpp"
#include "gqncal/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include <cmath>
#include <vector>

namespace gqncal {

using SparseMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// One stored entry of the quadratic-interaction tensor: row i picks up
/// value * u[k] * g(u[l]).
struct BTriple {
  Index i, k, l;
  double value;
};

enum class GKind { exponential, identity };

/// Growth/saturation transform applied to the second factor of each quadratic
/// term. The exponential form is the default; the identity form is what the
/// PDE-operator assembly uses (its quadratic coefficient already carries the
/// saturation constant).
struct Reaction {
  double gamma0 = 0.0;
  double gamma1 = 1.0;
  GKind g = GKind::exponential;
};

inline double g_eval(const Reaction& rx, double x) {
  return rx.g == GKind::exponential ? rx.gamma0 * std::exp(1.0 - x / rx.gamma1) : x;
}

struct DynamicsSpec {
  SpatialDomain domain;
  SparseMat A;                  // n x n linear propagator
  std::vector<BTriple> B;      // sparse quadratic tensor, coordinate list
  Reaction reaction;
  Matrix sigma_eta;             // n x n innovation covariance
  Matrix sigma0;                // n x n initial covariance
  double dt = 1.0;

  Index n() const { return A.rows(); }
};

struct FieldSeries {
  Matrix values;  // n x T, column t is the field at times[t]
  SpatialDomain domain;
  std::vector<int> times;
};

inline Vector var1_step(const Vector& u_prev, const SparseMat& A, const Vector& eta) {
  if (A.rows() != A.cols() || A.cols() != u_prev.size() || eta.size() != u_prev.size())
    throw SpecError("var1_step: dimension mismatch");
  Vector out = A * u_prev;
  out += eta;
  return out;
}

inline Vector gqn_step(const Vector& u_prev, const DynamicsSpec& spec, const Vector& eta) {
  if (spec.A.rows() != spec.A.cols() || spec.A.cols() != u_prev.size() ||
      eta.size() != u_prev.size())
    throw SpecError("gqn_step: dimension mismatch");
  if (!(spec.reaction.gamma1 > 0.0)) throw SpecError("gqn_step: gamma1 must be positive");
  Vector out = spec.A * u_prev;
  if (!spec.B.empty()) {
    Vector gu(u_prev.size());
    for (Index l = 0; l < u_prev.size(); ++l) gu[l] = g_eval(spec.reaction, u_prev[l]);
    for (const BTriple& t : spec.B) out[t.i] += t.value * u_prev[t.k] * gu[t.l];
  }
  out += eta;
  return out;
}

/// Square factor F with F F' = M for a symmetric PSD M. Cholesky first; if M
/// is only semi-definite, falls back to a symmetric eigendecomposition with
/// eigenvalues below 1e-12 * max clipped to zero. Eigenvalues below
/// -1e-10 * max|eig| are a hard error.
inline Matrix psd_factor(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw SpecError(std::string(what) + ": covariance must be square");
  if (m.isZero(0.0)) return Matrix::Zero(m.rows(), m.cols());
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigendecomposition failed");
  const Vector& ev = es.eigenvalues();
  const double max_abs = ev.cwiseAbs().maxCoeff();
  if (ev.minCoeff() < -1e-10 * max_abs)
    throw NumericError(std::string(what) + ": covariance is not PSD (min eigenvalue " +
                       std::to_string(ev.minCoeff()) + ", max " + std::to_string(max_abs) + ")");
  Vector root = ev;
  for (Index i = 0; i < root.size(); ++i)
    root[i] = ev[i] < 1e-12 * max_abs ? 0.0 : std::sqrt(ev[i]);
  return es.eigenvectors() * root.asDiagonal();
}

/// Runs the process forward: column 0 holds the initial field drawn from
/// sigma0, each later column applies one quadratic step with fresh innovation
/// noise. T columns total, time labels 0..T-1. Same seed, same series.
inline FieldSeries simulate_series(const DynamicsSpec& spec, Index T, Rng& rng) {
  if (T < 1) throw SpecError("simulate_series: T must be >= 1");
  const Index n = spec.n();
  if (spec.sigma0.rows() != n || spec.sigma_eta.rows() != n)
    throw SpecError("simulate_series: covariance dimensions disagree with A");
  const Matrix f0 = psd_factor(spec.sigma0, "simulate_series sigma0");
  const Matrix feta = psd_factor(spec.sigma_eta, "simulate_series sigma_eta");

  FieldSeries out;
  out.domain = spec.domain;
  out.values.resize(n, T);
  out.times.resize(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) out.times[static_cast<std::size_t>(t)] = static_cast<int>(t);

  Vector z(n);
  rng.fill_normal(z);
  out.values.col(0) = f0 * z;
  for (Index t = 1; t < T; ++t) {
    rng.fill_normal(z);
    const Vector eta = feta * z;
    out.values.col(t) = gqn_step(out.values.col(t - 1), spec, eta);
  }
  return out;
}

inline FieldSeries simulate_series(const DynamicsSpec& spec, Index T, std::uint64_t seed) {
  Rng rng(seed);
  return simulate_series(spec, T, rng);
}

/// Assembles the lattice operator of a reaction-diffusion equation with
/// spatially varying diffusion delta(s) and logistic growth (gamma0, gamma1):
/// the linear part (diffusion plus gamma0 growth) lands in A as a five-point
/// stencil, the quadratic saturation lands in B as one (i,i,i) entry per row
/// with the identity g. Off-lattice neighbor terms at the boundary are
/// dropped without rebalancing the self-coefficient (zero-flux truncation);
/// delta lookups outside the lattice clamp to the nearest edge site.
inline DynamicsSpec build_reaction_diffusion(const SpatialDomain& domain, const Vector& delta,
                                             double gamma0, double gamma1, double dt) {
  if (domain.kind != SpatialDomain::Kind::lattice)
    throw SpecError("build_reaction_diffusion: domain must be a lattice");
  if (!(dt > 0.0)) throw SpecError("build_reaction_diffusion: dt must be positive");
  if (!(gamma1 > 0.0)) throw SpecError("build_reaction_diffusion: gamma1 must be positive");
  const Index n = domain.n();
  if (delta.size() != n) throw SpecError("build_reaction_diffusion: delta length != lattice size");

  const int rows = domain.rows, cols = domain.cols;
  const double cx = dt / (domain.dx * domain.dx);
  const double cy = dt / (domain.dy * domain.dy);
  const auto at = [&](int r, int c) {
    r = std::max(0, std::min(rows - 1, r));
    c = std::max(0, std::min(cols - 1, c));
    return delta[static_cast<Index>(r) * cols + c];
  };

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n) * 5);
  DynamicsSpec spec;
  spec.B.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int i = r * cols + c;
      const double d = delta[i];
      const double grad1 = (at(r, c + 1) - at(r, c - 1)) / 4.0;
      const double grad2 = (at(r + 1, c) - at(r - 1, c)) / 4.0;
      trips.emplace_back(i, i, 1.0 - 2.0 * d * (cx + cy) + dt * gamma0);
      if (c + 1 < cols) trips.emplace_back(i, i + 1, cx * (d + grad1));
      if (c - 1 >= 0) trips.emplace_back(i, i - 1, cx * (d - grad1));
      if (r + 1 < rows) trips.emplace_back(i, i + cols, cy * (d + grad2));
      if (r - 1 >= 0) trips.emplace_back(i, i - cols, cy * (d - grad2));
      spec.B.push_back({i, i, i, -dt * gamma0 / gamma1});
    }
  }
  spec.domain = domain;
  spec.A.resize(n, n);
  spec.A.setFromTriplets(trips.begin(), trips.end());
  spec.A.makeCompressed();
  spec.reaction = {gamma0, gamma1, GKind::identity};
  spec.sigma_eta = Matrix::Zero(n, n);
  spec.sigma0 = Matrix::Zero(n, n);
  spec.dt = dt;
  return spec;
}

}  // namespace gqncal
