#pragma once

#include "gqncal/common.hpp"
#include "gqncal/domain.hpp"
#include "gqncal/rng.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace gqncal {

/// Per-axis affine map onto [0,1]. Space and time carry different units, so
/// the stacked (s,t) norm is taken in standardized coordinates by default;
/// the switch is recorded in output metadata.
struct Standardizer {
  bool active = false;
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0, t0 = 0.0, t1 = 1.0;

  static double norm01(double v, double lo, double hi) {
    return hi > lo ? (v - lo) / (hi - lo) : 0.5;
  }
  double sx(double x) const { return active ? norm01(x, x0, x1) : x; }
  double sy(double y) const { return active ? norm01(y, y0, y1) : y; }
  double st(double t) const { return active ? norm01(t, t0, t1) : t; }
  Eigen::Vector2d space(const Eigen::Vector2d& s) const { return {sx(s.x()), sy(s.y())}; }
};

/// One regular spatial sub-grid shape (nx by ny knots over the bounding box).
struct SubGrid {
  int nx;
  int ny;
};

/// Tensor knot layout: spatial knots (a union of declared regular sub-grids,
/// each evenly spaced across the bounding box) crossed with evenly spaced
/// temporal knots. Knots are stored in working coordinates (standardized when
/// the standardizer is active). Column j of the resulting basis matrix pairs
/// spatial knot j % r_s with temporal knot j / r_s.
struct KnotGrid {
  std::vector<Eigen::Vector2d> spatial;
  std::vector<double> temporal;
  double bandwidth = 1.0;
  Standardizer std_map;
  std::vector<SubGrid> shapes;  // metadata: how `spatial` was laid out

  Index r_s() const { return static_cast<Index>(spatial.size()); }
  Index r_t() const { return static_cast<Index>(temporal.size()); }
  Index r() const { return r_s() * r_t(); }

  /// Evenly spaced positions over [lo, hi] in working coordinates; a single
  /// knot sits at the midpoint.
  static std::vector<double> even(int k, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(k));
    if (k == 1) {
      v[0] = 0.5 * (lo + hi);
      return v;
    }
    for (int i = 0; i < k; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (k - 1);
    return v;
  }

  /// Builds the layout. bandwidth <= 0 requests the default: 1.5 times the
  /// larger of the spatial and temporal knot spacings (working coordinates).
  static KnotGrid regular(const std::vector<SubGrid>& sub_grids, int n_temporal,
                          double x_lo, double x_hi, double y_lo, double y_hi,
                          double t_lo, double t_hi, bool standardize, double bandwidth) {
    if (sub_grids.empty()) throw SpecError("knot grid: needs at least one spatial sub-grid");
    if (n_temporal < 1) throw SpecError("knot grid: needs at least one temporal knot");
    if (!(x_hi >= x_lo) || !(y_hi >= y_lo) || !(t_hi >= t_lo))
      throw SpecError("knot grid: invalid bounding box");

    KnotGrid g;
    g.std_map = Standardizer{standardize, x_lo, x_hi, y_lo, y_hi, t_lo, t_hi};
    g.shapes = sub_grids;
    const double wx0 = g.std_map.sx(x_lo), wx1 = g.std_map.sx(x_hi);
    const double wy0 = g.std_map.sy(y_lo), wy1 = g.std_map.sy(y_hi);
    const double wt0 = g.std_map.st(t_lo), wt1 = g.std_map.st(t_hi);

    double spacing = 0.0;
    for (const SubGrid& sg : sub_grids) {
      if (sg.nx < 1 || sg.ny < 1) throw SpecError("knot grid: sub-grid shape must be >= 1x1");
      const auto xs = even(sg.nx, wx0, wx1);
      const auto ys = even(sg.ny, wy0, wy1);
      for (double y : ys)
        for (double x : xs) g.spatial.emplace_back(x, y);
      const double sx = sg.nx > 1 ? (wx1 - wx0) / (sg.nx - 1) : (wx1 - wx0);
      const double sy = sg.ny > 1 ? (wy1 - wy0) / (sg.ny - 1) : (wy1 - wy0);
      spacing = std::max({spacing, sx, sy});
    }
    g.temporal = even(n_temporal, wt0, wt1);
    const double ts =
        n_temporal > 1 ? (wt1 - wt0) / (n_temporal - 1) : (wt1 - wt0);
    spacing = std::max(spacing, ts);

    g.bandwidth = bandwidth > 0.0 ? bandwidth : 1.5 * spacing;
    if (!(g.bandwidth > 0.0))
      throw SpecError("knot grid: bandwidth fell to zero (degenerate bounding box); set it explicitly");
    return g;
  }
};

struct RowKey {
  std::string id;
  double time;
};

struct BasisMatrix {
  Matrix G;                      // (n sites/areas * n times) x r
  std::vector<RowKey> row_index;
  KnotGrid knot_grid;
  std::vector<Index> zero_rows;  // rows outside the range of every knot
};

/// Bisquare in the stacked (s,t) geometry: [1 - (d/gamma)^2]^2 inside radius
/// gamma, zero outside.
inline double bisquare_eval(const Eigen::Vector2d& s, double t, const Eigen::Vector2d& knot_s,
                            double knot_t, double gamma) {
  if (!(gamma > 0.0)) throw SpecError("bisquare_eval: gamma must be positive");
  const double dt = t - knot_t;
  const double d2 = (s - knot_s).squaredNorm() + dt * dt;
  const double g2 = gamma * gamma;
  if (d2 > g2) return 0.0;
  const double w = 1.0 - d2 / g2;
  return w * w;
}

/// Uniform points inside the polygon by bounding-box rejection. Samples
/// depend only on (polygon, n_mc, seed), so callers may cache them across
/// knots and times.
inline std::vector<Eigen::Vector2d> polygon_samples(const AreaUnit& area, Index n_mc,
                                                    std::uint64_t seed) {
  if (n_mc < 1) throw SpecError("polygon_samples: n_mc must be >= 1");
  const auto bb = area_bbox(area);
  if (!(bb[2] > bb[0]) || !(bb[3] > bb[1]) || !(area_measure(area) > 0.0))
    throw SpecError("degenerate polygon (area ~ 0): '" + area.id + "'");
  Rng rng(seed);
  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<std::size_t>(n_mc));
  std::uint64_t attempts = 0;
  constexpr std::uint64_t kCap = 10'000'000;
  while (out.size() < static_cast<std::size_t>(n_mc)) {
    if (++attempts > kCap)
      throw NumericError("polygon_samples: rejection cap (1e7) hit for polygon '" + area.id +
                         "'; polygon is degenerate relative to its bounding box");
    const double x = rng.uniform(bb[0], bb[2]);
    const double y = rng.uniform(bb[1], bb[3]);
    if (point_in_area(area, x, y)) out.emplace_back(x, y);
  }
  return out;
}

/// Change-of-support value of one basis function over a polygon: the mean of
/// the point-level bisquare over uniform samples. Deterministic given seed.
inline double integrate_basis_over_area(const AreaUnit& area, double t,
                                        const Eigen::Vector2d& knot_s, double knot_t,
                                        double gamma, Index n_mc, std::uint64_t seed) {
  const auto pts = polygon_samples(area, n_mc, seed);
  double acc = 0.0;
  for (const auto& p : pts) acc += bisquare_eval(p, t, knot_s, knot_t, gamma);
  return acc / static_cast<double>(pts.size());
}

/// Assembles G. Rows run over (site/area, time) pairs, sites fastest within
/// each time, matching the stacking order of simulated field series. Point
/// and lattice domains evaluate the bisquare at the site; areal domains
/// average it over cached polygon samples (one sample set per area, reused
/// across all knots and times). Rows with no positive entry are listed in
/// zero_rows; callers decide whether that deserves a warning.
inline BasisMatrix build_basis_matrix(const SpatialDomain& domain,
                                      const std::vector<double>& times, const KnotGrid& grid,
                                      Index n_mc, std::uint64_t seed) {
  if (times.empty()) throw SpecError("build_basis_matrix: no times requested");
  if (grid.r() == 0) throw SpecError("build_basis_matrix: empty knot grid");
  const Index n = domain.n();
  const Index rs = grid.r_s(), rt = grid.r_t();
  const Index n_rows = n * static_cast<Index>(times.size());

  BasisMatrix bm;
  bm.knot_grid = grid;
  bm.G.resize(n_rows, rs * rt);
  bm.row_index.reserve(static_cast<std::size_t>(n_rows));

  const bool areal = domain.kind == SpatialDomain::Kind::areal;
  std::vector<std::vector<Eigen::Vector2d>> cache;
  if (areal) {
    cache.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      auto raw = polygon_samples(domain.areas[static_cast<std::size_t>(i)], n_mc,
                                 derive_seed(seed, static_cast<std::uint64_t>(i)));
      for (auto& p : raw) p = grid.std_map.space(p);
      cache[static_cast<std::size_t>(i)] = std::move(raw);
    }
  }

  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    const double wt = grid.std_map.st(times[ti]);
    for (Index i = 0; i < n; ++i) {
      const Index row = static_cast<Index>(ti) * n + i;
      std::string id = areal ? domain.areas[static_cast<std::size_t>(i)].id
                             : std::to_string(i);
      bm.row_index.push_back({std::move(id), times[ti]});
      const Eigen::Vector2d ws =
          areal ? Eigen::Vector2d::Zero().eval()
                : grid.std_map.space(domain.coords[static_cast<std::size_t>(i)]);
      for (Index jt = 0; jt < rt; ++jt) {
        const double p = grid.temporal[static_cast<std::size_t>(jt)];
        for (Index js = 0; js < rs; ++js) {
          const auto& c = grid.spatial[static_cast<std::size_t>(js)];
          double v;
          if (areal) {
            double acc = 0.0;
            for (const auto& s : cache[static_cast<std::size_t>(i)])
              acc += bisquare_eval(s, wt, c, p, grid.bandwidth);
            v = acc / static_cast<double>(cache[static_cast<std::size_t>(i)].size());
          } else {
            v = bisquare_eval(ws, wt, c, p, grid.bandwidth);
          }
          bm.G(row, jt * rs + js) = v;
        }
      }
    }
  }
  for (Index row = 0; row < n_rows; ++row)
    if (bm.G.row(row).maxCoeff() <= 0.0) bm.zero_rows.push_back(row);
  return bm;
}

}  // namespace gqncal
