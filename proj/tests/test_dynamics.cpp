#include "gqncal/dynamics.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracle.hpp"

using namespace gqncal;

namespace {

SparseMat sparse_from(const Matrix& dense) {
  SparseMat a(dense.rows(), dense.cols());
  std::vector<Eigen::Triplet<double>> t;
  for (Index i = 0; i < dense.rows(); ++i)
    for (Index j = 0; j < dense.cols(); ++j)
      if (dense(i, j) != 0.0) t.emplace_back(static_cast<int>(i), static_cast<int>(j), dense(i, j));
  a.setFromTriplets(t.begin(), t.end());
  a.makeCompressed();
  return a;
}

DynamicsSpec zero_spec(Index n) {
  DynamicsSpec s;
  s.domain = SpatialDomain::lattice(1, static_cast<int>(n));
  s.A = SparseMat(n, n);
  s.A.makeCompressed();
  s.reaction = {0.05, 10.0, GKind::exponential};
  s.sigma_eta = Matrix::Zero(n, n);
  s.sigma0 = Matrix::Zero(n, n);
  return s;
}

}  // namespace

TEST_CASE("var1_step zero and identity operators", "[dynamics]") {
  const Index n = 4;
  SparseMat zero(n, n);
  zero.makeCompressed();
  Vector u = Vector::LinSpaced(n, -1.0, 2.0);
  CHECK(var1_step(u, zero, Vector::Zero(n)).isZero(0.0));

  SparseMat eye = sparse_from(Matrix::Identity(n, n));
  CHECK(var1_step(u, eye, Vector::Zero(n)) == u);
}

TEST_CASE("var1_step matches the hand summation", "[dynamics]") {
  Matrix a(2, 2);
  a << 0.5, 0.1, 0.0, 0.2;
  Vector u(2);
  u << 1.0, 2.0;
  const Vector out = var1_step(u, sparse_from(a), Vector::Zero(2));
  CHECK(out[0] == Catch::Approx(0.7).margin(1e-15));
  CHECK(out[1] == Catch::Approx(0.4).margin(1e-15));
}

TEST_CASE("var1_step rejects mismatched dimensions", "[dynamics]") {
  SparseMat a(3, 3);
  a.makeCompressed();
  CHECK_THROWS_AS(var1_step(Vector::Zero(2), a, Vector::Zero(3)), SpecError);
  CHECK_THROWS_AS(var1_step(Vector::Zero(3), a, Vector::Zero(2)), SpecError);
}

TEST_CASE("gqn_step zero operators give zero", "[dynamics]") {
  DynamicsSpec s = zero_spec(3);
  CHECK(gqn_step(Vector::Ones(3), s, Vector::Zero(3)).isZero(0.0));
}

TEST_CASE("gqn_step scalar quadratic term", "[dynamics]") {
  DynamicsSpec s = zero_spec(1);
  s.B.push_back({0, 0, 0, 1.0});
  s.reaction = {0.05, 10.0, GKind::exponential};
  Vector u(1);
  u << 2.0;
  const Vector out = gqn_step(u, s, Vector::Zero(1));
  // 2 * 0.05 * exp(1 - 2/10)
  CHECK(out[0] == Catch::Approx(0.2225540928492468).epsilon(1e-14));
}

TEST_CASE("gqn_step with empty quadratic tensor is bitwise var1_step", "[dynamics]") {
  Rng rng(424242);
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 1 + static_cast<Index>(rng.integer(12));
    Matrix dense = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        if (rng.bernoulli(0.4)) dense(i, j) = rng.normal();
    DynamicsSpec s = zero_spec(n);
    s.A = sparse_from(dense);
    Vector u(n), eta(n);
    rng.fill_normal(u);
    rng.fill_normal(eta);
    const Vector a = gqn_step(u, s, eta);
    const Vector b = var1_step(u, s.A, eta);
    REQUIRE(a.size() == b.size());
    for (Index i = 0; i < n; ++i) REQUIRE(a[i] == b[i]);
  }
}

TEST_CASE("gqn_step rejects non-positive gamma1", "[dynamics]") {
  DynamicsSpec s = zero_spec(2);
  s.reaction.gamma1 = 0.0;
  CHECK_THROWS_AS(gqn_step(Vector::Zero(2), s, Vector::Zero(2)), SpecError);
  s.reaction.gamma1 = -3.0;
  CHECK_THROWS_AS(gqn_step(Vector::Zero(2), s, Vector::Zero(2)), SpecError);
}

TEST_CASE("growth transform is decreasing and hits gamma0 at gamma1", "[dynamics]") {
  const Reaction rx{0.05, 10.0, GKind::exponential};
  double prev = g_eval(rx, -5.0);
  for (double x = -4.0; x <= 20.0; x += 1.0) {
    const double cur = g_eval(rx, x);
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK(g_eval(rx, 10.0) == 0.05);
  const Reaction ident{0.3, 7.0, GKind::identity};
  CHECK(g_eval(ident, 2.5) == 2.5);
}

TEST_CASE("simulate_series zero spec gives all zeros", "[dynamics]") {
  DynamicsSpec s = zero_spec(5);
  const FieldSeries f = simulate_series(s, 4, 99);
  CHECK(f.values.rows() == 5);
  CHECK(f.values.cols() == 4);
  CHECK(f.values.isZero(0.0));
  CHECK(f.times == std::vector<int>({0, 1, 2, 3}));
}

TEST_CASE("simulate_series is a pure function of seed", "[dynamics]") {
  DynamicsSpec s = zero_spec(6);
  s.sigma0 = exp_cov(s.domain.coords, 1.0, 10.0);
  s.sigma_eta = exp_cov(s.domain.coords, 0.5, 10.0);
  Matrix dense = Matrix::Zero(6, 6);
  dense.diagonal().setConstant(0.3);
  s.A = sparse_from(dense);
  s.B.push_back({2, 1, 3, 0.1});
  const FieldSeries a = simulate_series(s, 7, 1234);
  const FieldSeries b = simulate_series(s, 7, 1234);
  const FieldSeries c = simulate_series(s, 7, 1235);
  REQUIRE(a.values == b.values);
  CHECK(a.values != c.values);
}

TEST_CASE("simulate_series initial column has the sigma0 variance", "[dynamics]") {
  DynamicsSpec s = zero_spec(50);
  s.sigma0 = Matrix::Identity(50, 50);
  double sum = 0.0, sum2 = 0.0;
  const int seeds = 200;
  for (int k = 0; k < seeds; ++k) {
    const FieldSeries f = simulate_series(s, 2, 1000 + static_cast<std::uint64_t>(k));
    REQUIRE(f.values.col(1).isZero(0.0));  // A = B = 0, no innovation noise
    sum += f.values.col(0).sum();
    sum2 += f.values.col(0).squaredNorm();
  }
  const double n_draws = 50.0 * seeds;
  const double mean = sum / n_draws;
  const double var = sum2 / n_draws - mean * mean;
  CHECK(mean == Catch::Approx(0.0).margin(4.0 / std::sqrt(n_draws)));
  CHECK(var == Catch::Approx(1.0).margin(4.0 * std::sqrt(2.0 / n_draws)));
}

TEST_CASE("simulate_series rejects an indefinite covariance", "[dynamics]") {
  DynamicsSpec s = zero_spec(2);
  Matrix bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  s.sigma0 = bad;
  CHECK_THROWS_AS(simulate_series(s, 3, 7), NumericError);
}

TEST_CASE("simulate_series accepts a semi-definite covariance", "[dynamics]") {
  DynamicsSpec s = zero_spec(3);
  Vector v(3);
  v << 1.0, -2.0, 0.5;
  s.sigma0 = v * v.transpose();  // rank one
  const FieldSeries f = simulate_series(s, 1, 11);
  const Vector u0 = f.values.col(0);
  REQUIRE(u0[0] != 0.0);
  CHECK(u0[1] / u0[0] == Catch::Approx(-2.0).epsilon(1e-10));
  CHECK(u0[2] / u0[0] == Catch::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("reaction-diffusion interior stencil with constant diffusion", "[dynamics]") {
  const auto dom = SpatialDomain::lattice(5, 5);
  const DynamicsSpec s = build_reaction_diffusion(dom, Vector::Constant(25, 0.1), 0.0, 10.0, 1.0);
  const Matrix a = Matrix(s.A);
  const int i = 2 * 5 + 2;  // center site
  CHECK(a(i, i) == 0.6);
  CHECK(a(i, i + 1) == 0.1);
  CHECK(a(i, i - 1) == 0.1);
  CHECK(a(i, i + 5) == 0.1);
  CHECK(a(i, i - 5) == 0.1);
  // interior row count of nonzeros
  int nnz = 0;
  for (int j = 0; j < 25; ++j)
    if (a(i, j) != 0.0) ++nnz;
  CHECK(nnz == 5);
}

TEST_CASE("reaction-diffusion interior rows telescope to 1 + dt*gamma0", "[dynamics]") {
  const auto dom = SpatialDomain::lattice(6, 6);
  const double gamma0 = 0.05;
  const DynamicsSpec s = build_reaction_diffusion(dom, Vector::Constant(36, 0.07), gamma0, 10.0, 1.0);
  const Matrix a = Matrix(s.A);
  for (int r = 1; r < 5; ++r)
    for (int c = 1; c < 5; ++c) {
      const int i = r * 6 + c;
      CHECK(a.row(i).sum() == Catch::Approx(1.0 + gamma0).margin(1e-14));
    }
}

TEST_CASE("reaction-diffusion quadratic entries are -dt*gamma0/gamma1", "[dynamics]") {
  const auto dom = SpatialDomain::lattice(3, 4);
  const DynamicsSpec s = build_reaction_diffusion(dom, Vector::Constant(12, 0.2), 0.05, 10.0, 1.0);
  REQUIRE(s.B.size() == 12);
  for (const auto& t : s.B) {
    CHECK(t.i == t.k);
    CHECK(t.k == t.l);
    CHECK(t.value == -0.005);
  }
  CHECK(s.reaction.g == GKind::identity);
}

TEST_CASE("reaction-diffusion picks up the diffusion gradient", "[dynamics]") {
  // delta ramps along s1 with slope 0.03 per unit
  const auto dom = SpatialDomain::lattice(5, 7);
  Vector delta(35);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) delta[r * 7 + c] = 0.01 + 0.03 * c;
  const DynamicsSpec s = build_reaction_diffusion(dom, delta, 0.0, 10.0, 1.0);
  const Matrix a = Matrix(s.A);
  const int i = 2 * 7 + 3;
  CHECK(a(i, i + 1) == Catch::Approx(delta[i] + 0.015).margin(1e-15));  // east: + slope/2
  CHECK(a(i, i - 1) == Catch::Approx(delta[i] - 0.015).margin(1e-15));  // west: - slope/2
  CHECK(a(i, i + 7) == Catch::Approx(delta[i]).margin(1e-15));          // no ramp along s2
}

TEST_CASE("reaction-diffusion boundary rows drop off-lattice terms", "[dynamics]") {
  const auto dom = SpatialDomain::lattice(4, 4);
  const Vector delta = Vector::Constant(16, 0.1);
  const DynamicsSpec s = build_reaction_diffusion(dom, delta, 0.0, 5.0, 1.0);
  const Matrix a = Matrix(s.A);
  // corner (0,0): self + east + north only
  int nnz0 = 0;
  for (int j = 0; j < 16; ++j)
    if (a(0, j) != 0.0) ++nnz0;
  CHECK(nnz0 == 3);
  // self-coefficient keeps the interior formula (no rebalancing)
  CHECK(a(0, 0) == 1.0 - 2.0 * 0.1 * 2.0);
  // edge (0,2): self + east + west + north
  int nnz2 = 0;
  for (int j = 0; j < 16; ++j)
    if (a(2, j) != 0.0) ++nnz2;
  CHECK(nnz2 == 4);
}

TEST_CASE("reaction-diffusion rejects bad inputs", "[dynamics]") {
  const auto pts = SpatialDomain::points({{0.0, 0.0}, {1.0, 0.0}});
  CHECK_THROWS_AS(build_reaction_diffusion(pts, Vector::Zero(2), 0.0, 1.0, 1.0), SpecError);
  const auto dom = SpatialDomain::lattice(2, 2);
  CHECK_THROWS_AS(build_reaction_diffusion(dom, Vector::Zero(3), 0.0, 1.0, 1.0), SpecError);
  CHECK_THROWS_AS(build_reaction_diffusion(dom, Vector::Zero(4), 0.0, 1.0, 0.0), SpecError);
}

TEST_CASE("lattice domain orders sites row-major", "[dynamics]") {
  const auto dom = SpatialDomain::lattice(2, 3, 0.5, 2.0);
  REQUIRE(dom.n() == 6);
  CHECK(dom.coords[4] == Eigen::Vector2d(0.5, 2.0));  // r=1, c=1
  CHECK_THROWS_AS(SpatialDomain::lattice(0, 3), SpecError);
}

TEST_CASE("areal domain enforces ring closure", "[dynamics]") {
  AreaUnit open;
  open.id = "u1";
  open.rings = {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
  CHECK_THROWS_AS(SpatialDomain::areal({open}), SpecError);
  AreaUnit closed = open;
  closed.rings[0].push_back({0, 0});
  CHECK(SpatialDomain::areal({closed}).n() == 1);
}

TEST_CASE("point in polygon and area helpers", "[dynamics]") {
  AreaUnit sq;
  sq.id = "sq";
  sq.rings = {{{0, 0}, {2, 0}, {2, 2}, {0, 2}, {0, 0}}};
  CHECK(point_in_area(sq, 1.0, 1.0));
  CHECK_FALSE(point_in_area(sq, 3.0, 1.0));
  CHECK(area_measure(sq) == Catch::Approx(4.0));
  const auto bb = area_bbox(sq);
  CHECK(bb[0] == 0.0);
  CHECK(bb[3] == 2.0);

  // square with a unit hole in the middle
  AreaUnit holed = sq;
  holed.rings.push_back({{0.5, 0.5}, {0.5, 1.5}, {1.5, 1.5}, {1.5, 0.5}, {0.5, 0.5}});
  CHECK_FALSE(point_in_area(holed, 1.0, 1.0));
  CHECK(point_in_area(holed, 0.25, 0.25));
  CHECK(area_measure(holed) == Catch::Approx(3.0));
}
