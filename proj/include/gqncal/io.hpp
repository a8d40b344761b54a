#pragma once

#include "gqncal/basis.hpp"
#include "gqncal/common.hpp"
#include "gqncal/domain.hpp"
#include "gqncal/dynamics.hpp"
#include "gqncal/epr.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace gqncal {

/// Shortest decimal string that round-trips the exact double. All numeric
/// artifact output goes through here, which is what makes rerun outputs
/// byte-identical across compilers.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw SpecError(what + ": cannot parse number '" + text + "'");
  return v;
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SpecError("cannot open for writing: " + path);
  out << content;
  if (!out) throw NumericError("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("file not found: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::string& path) {
  const std::string text = read_text(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw SpecError("malformed JSON: " + path);
  return j;
}

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// plain numeric matrices (no header)

inline void write_matrix_csv(const std::string& path, const Matrix& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.size()) * 12);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  write_text(path, out);
}

inline Matrix read_matrix_csv(const std::string& path) {
  const std::string text = read_text(path);
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.emplace_back();
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) rows.back().push_back(parse_double(cell, path));
    if (rows.size() > 1 && rows.back().size() != rows.front().size())
      throw SpecError(path + ": ragged rows");
  }
  if (rows.empty()) throw SpecError(path + ": empty matrix");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

// ---------------------------------------------------------------------------
// labeled tables

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

/// Long-format series export: site_id,time,value with one row per
/// (site, time) cell, time-major to match basis row ordering.
inline void write_field_series(const std::string& path, const FieldSeries& f) {
  std::string out = "site_id,time,value\n";
  const Index n = f.values.rows();
  for (std::size_t ti = 0; ti < f.times.size(); ++ti)
    for (Index i = 0; i < n; ++i) {
      out += std::to_string(i);
      out += ',';
      out += std::to_string(f.times[ti]);
      out += ',';
      out += format_double(f.values(i, static_cast<Index>(ti)));
      out += '\n';
    }
  write_text(path, out);
}

/// Observations with optional covariates. Rows carry (site_id, time) labels.
struct ObsTable {
  std::vector<RowKey> rows;
  Vector z;
  Matrix X;  // n x k covariates, k may be 0
  std::vector<std::string> covariate_names;

  Index n() const { return z.size(); }
};

inline void write_observations(const std::string& path, const ObsTable& obs) {
  std::string out = "site_id,time,value";
  for (const std::string& name : obs.covariate_names) out += "," + name;
  out += '\n';
  for (Index i = 0; i < obs.n(); ++i) {
    out += obs.rows[static_cast<std::size_t>(i)].id;
    out += ',';
    out += format_double(obs.rows[static_cast<std::size_t>(i)].time);
    out += ',';
    out += format_double(obs.z[i]);
    for (Index j = 0; j < obs.X.cols(); ++j) {
      out += ',';
      out += format_double(obs.X(i, j));
    }
    out += '\n';
  }
  write_text(path, out);
}

inline ObsTable read_observations(const std::string& path) {
  const std::string text = read_text(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw SpecError(path + ": empty file");
  const std::vector<std::string> header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "site_id" || header[1] != "time" ||
      header[2] != "value")
    throw SpecError(path + ": expected header site_id,time,value[,covariates...]");
  ObsTable obs;
  obs.covariate_names.assign(header.begin() + 3, header.end());
  std::vector<double> z;
  std::vector<std::vector<double>> xrows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) throw SpecError(path + ": ragged row");
    obs.rows.push_back({cells[0], parse_double(cells[1], path)});
    z.push_back(parse_double(cells[2], path));
    xrows.emplace_back();
    for (std::size_t j = 3; j < cells.size(); ++j)
      xrows.back().push_back(parse_double(cells[j], path));
  }
  obs.z = Eigen::Map<Vector>(z.data(), static_cast<Index>(z.size()));
  obs.X.resize(static_cast<Index>(xrows.size()), static_cast<Index>(obs.covariate_names.size()));
  for (Index i = 0; i < obs.X.rows(); ++i)
    for (Index j = 0; j < obs.X.cols(); ++j)
      obs.X(i, j) = xrows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return obs;
}

// ---------------------------------------------------------------------------
// posterior draws, long format

inline void write_draws_csv(const std::string& path, const PosteriorDraws& draws) {
  std::string out = "replicate,block,index,value\n";
  const auto emit = [&out](const char* block, const Matrix& m) {
    for (Index rep = 0; rep < m.cols(); ++rep)
      for (Index i = 0; i < m.rows(); ++i) {
        out += std::to_string(rep);
        out += ',';
        out += block;
        out += ',';
        out += std::to_string(i);
        out += ',';
        out += format_double(m(i, rep));
        out += '\n';
      }
  };
  emit("xi", draws.xi);
  emit("beta", draws.beta);
  emit("eta", draws.eta);
  emit("q", draws.q);
  emit("theta", draws.theta);
  write_text(path, out);
}

// ---------------------------------------------------------------------------
// GeoJSON polygons

inline std::vector<AreaUnit> read_geojson(const std::string& path) {
  const nlohmann::json j = read_json(path);
  if (!j.contains("features") || !j["features"].is_array())
    throw SpecError(path + ": expected a GeoJSON FeatureCollection");
  std::vector<AreaUnit> units;
  std::size_t idx = 0;
  const auto ring_from = [&](const nlohmann::json& coords) {
    std::vector<Eigen::Vector2d> ring;
    for (const auto& pt : coords) {
      if (!pt.is_array() || pt.size() < 2)
        throw SpecError(path + ": ring vertex must be [x, y]");
      ring.emplace_back(pt[0].get<double>(), pt[1].get<double>());
    }
    return ring;
  };
  for (const auto& feature : j["features"]) {
    AreaUnit unit;
    if (feature.contains("id") && feature["id"].is_string())
      unit.id = feature["id"].get<std::string>();
    else if (feature.contains("id") && feature["id"].is_number())
      unit.id = std::to_string(feature["id"].get<long long>());
    else if (feature.contains("properties") && feature["properties"].contains("id"))
      unit.id = feature["properties"]["id"].is_string()
                    ? feature["properties"]["id"].get<std::string>()
                    : std::to_string(feature["properties"]["id"].get<long long>());
    else if (feature.contains("properties") && feature["properties"].contains("name"))
      unit.id = feature["properties"]["name"].get<std::string>();
    else
      unit.id = std::to_string(idx);
    if (!feature.contains("geometry"))
      throw SpecError(path + ": feature without geometry");
    const auto& geom = feature["geometry"];
    const std::string type = geom.value("type", "");
    if (type == "Polygon") {
      for (const auto& ring : geom["coordinates"]) unit.rings.push_back(ring_from(ring));
    } else if (type == "MultiPolygon") {
      for (const auto& poly : geom["coordinates"])
        for (const auto& ring : poly) unit.rings.push_back(ring_from(ring));
    } else {
      throw SpecError(path + ": unsupported geometry type '" + type +
                      "' (Polygon and MultiPolygon only)");
    }
    units.push_back(std::move(unit));
    ++idx;
  }
  if (units.empty()) throw SpecError(path + ": no features");
  return units;
}

// ---------------------------------------------------------------------------
// basis artifact: matrix CSV plus a JSON sidecar with the row/knot layout

inline void write_basis(const std::string& csv_path, const std::string& meta_path,
                        const BasisMatrix& basis) {
  write_matrix_csv(csv_path, basis.G);
  nlohmann::json meta;
  meta["rows"] = basis.G.rows();
  meta["columns"] = basis.G.cols();
  meta["bandwidth"] = basis.knot_grid.bandwidth;
  nlohmann::json row_ids = nlohmann::json::array();
  for (const RowKey& k : basis.row_index)
    row_ids.push_back({{"id", k.id}, {"time", k.time}});
  meta["row_index"] = std::move(row_ids);
  nlohmann::json spatial = nlohmann::json::array();
  for (const auto& s : basis.knot_grid.spatial) spatial.push_back({s.x(), s.y()});
  meta["spatial_knots"] = std::move(spatial);
  meta["temporal_knots"] = basis.knot_grid.temporal;
  nlohmann::json zeros = nlohmann::json::array();
  for (Index i : basis.zero_rows) zeros.push_back(i);
  meta["zero_rows"] = std::move(zeros);
  write_json(meta_path, meta);
}

}  // namespace gqncal
