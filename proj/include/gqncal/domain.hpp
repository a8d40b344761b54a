#pragma once

#include "gqncal/common.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace gqncal {

/// One areal unit: an id plus one or more closed rings (outer boundaries and
/// holes together, even-odd rule). Ring vertices repeat the first point last.
struct AreaUnit {
  std::string id;
  std::vector<std::vector<Eigen::Vector2d>> rings;
};

/// Where the process lives: a regular lattice, scattered points, or polygons.
/// Lattice sites are ordered row-major: site i = r*cols + c sits at
/// (c*dx, r*dy); the s1 axis runs along columns, s2 along rows.
struct SpatialDomain {
  enum class Kind { lattice, point_set, areal };

  Kind kind = Kind::point_set;
  int rows = 0, cols = 0;
  double dx = 1.0, dy = 1.0;
  std::vector<Eigen::Vector2d> coords;  // site coordinates (lattice + point_set)
  std::vector<AreaUnit> areas;

  Index n() const {
    return kind == Kind::areal ? static_cast<Index>(areas.size())
                               : static_cast<Index>(coords.size());
  }

  static SpatialDomain lattice(int rows, int cols, double dx = 1.0, double dy = 1.0) {
    if (rows < 1 || cols < 1) throw SpecError("lattice: rows and cols must be >= 1");
    if (!(dx > 0.0) || !(dy > 0.0)) throw SpecError("lattice: spacings must be positive");
    SpatialDomain d;
    d.kind = Kind::lattice;
    d.rows = rows;
    d.cols = cols;
    d.dx = dx;
    d.dy = dy;
    d.coords.reserve(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) d.coords.emplace_back(c * dx, r * dy);
    return d;
  }

  static SpatialDomain points(std::vector<Eigen::Vector2d> coords) {
    if (coords.empty()) throw SpecError("point_set: needs at least one site");
    SpatialDomain d;
    d.kind = Kind::point_set;
    d.coords = std::move(coords);
    return d;
  }

  static SpatialDomain areal(std::vector<AreaUnit> units) {
    if (units.empty()) throw SpecError("areal: needs at least one unit");
    for (const auto& u : units) {
      if (u.rings.empty()) throw SpecError("areal: unit '" + u.id + "' has no rings");
      for (const auto& ring : u.rings) {
        if (ring.size() < 4) throw SpecError("areal: ring in unit '" + u.id + "' has fewer than 3 distinct vertices");
        if (ring.front() != ring.back())
          throw SpecError("areal: ring in unit '" + u.id + "' is not closed (first vertex must equal last)");
      }
    }
    SpatialDomain d;
    d.kind = Kind::areal;
    d.areas = std::move(units);
    return d;
  }
};

/// Even-odd (parity) point-in-polygon over all rings of an area unit, so holes
/// subtract naturally.
inline bool point_in_area(const AreaUnit& area, double x, double y) {
  int crossings = 0;
  for (const auto& ring : area.rings) {
    for (std::size_t j = 0, i = 1; i < ring.size(); j = i++) {
      const double x1 = ring[j].x(), y1 = ring[j].y();
      const double x2 = ring[i].x(), y2 = ring[i].y();
      if ((y1 > y) != (y2 > y)) {
        const double x_cross = x1 + (y - y1) / (y2 - y1) * (x2 - x1);
        if (x < x_cross) ++crossings;
      }
    }
  }
  return (crossings % 2) == 1;
}

/// Axis-aligned bounding box over all rings: (xmin, ymin, xmax, ymax).
inline std::array<double, 4> area_bbox(const AreaUnit& area) {
  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
  double xmax = -xmin, ymax = -xmin;
  for (const auto& ring : area.rings)
    for (const auto& v : ring) {
      xmin = std::min(xmin, v.x());
      xmax = std::max(xmax, v.x());
      ymin = std::min(ymin, v.y());
      ymax = std::max(ymax, v.y());
    }
  return {xmin, ymin, xmax, ymax};
}

/// Net enclosed area by the shoelace formula, holes subtracting (absolute
/// value of the signed sum across rings with consistent orientation handling).
inline double area_measure(const AreaUnit& area) {
  double outer = 0.0;
  for (const auto& ring : area.rings) {
    double s = 0.0;
    for (std::size_t j = 0, i = 1; i < ring.size(); j = i++)
      s += ring[j].x() * ring[i].y() - ring[i].x() * ring[j].y();
    outer += s / 2.0;
  }
  return std::abs(outer);
}

/// Area-weighted centroid over all rings (holes cancel through the signed
/// terms). Degenerate geometry falls back to the bounding-box center.
inline Eigen::Vector2d area_centroid(const AreaUnit& area) {
  double a = 0.0, cx = 0.0, cy = 0.0;
  for (const auto& ring : area.rings) {
    for (std::size_t j = 0, i = 1; i < ring.size(); j = i++) {
      const double cross = ring[j].x() * ring[i].y() - ring[i].x() * ring[j].y();
      a += cross;
      cx += (ring[j].x() + ring[i].x()) * cross;
      cy += (ring[j].y() + ring[i].y()) * cross;
    }
  }
  if (std::abs(a) < 1e-300) {
    const auto box = area_bbox(area);
    return {0.5 * (box[0] + box[2]), 0.5 * (box[1] + box[3])};
  }
  return {cx / (3.0 * a), cy / (3.0 * a)};
}

inline Matrix pairwise_distances(const std::vector<Eigen::Vector2d>& coords) {
  const Index n = static_cast<Index>(coords.size());
  Matrix d(n, n);
  for (Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Index j = i + 1; j < n; ++j) {
      const double v = (coords[static_cast<std::size_t>(i)] - coords[static_cast<std::size_t>(j)]).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

/// Exponential-decay covariance sigma2 * exp(-d/phi) over site coordinates.
inline Matrix exp_cov(const std::vector<Eigen::Vector2d>& coords, double sigma2, double phi) {
  if (!(sigma2 >= 0.0) || !(phi > 0.0)) throw SpecError("exp_cov: needs sigma2 >= 0 and phi > 0");
  Matrix d = pairwise_distances(coords);
  return sigma2 * (-d / phi).array().exp().matrix();
}

}  // namespace gqncal
