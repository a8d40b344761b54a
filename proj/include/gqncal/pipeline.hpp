#pragma once

#include "gqncal/basis.hpp"
#include "gqncal/calibration.hpp"
#include "gqncal/epr.hpp"
#include "gqncal/io.hpp"
#include "gqncal/metrics.hpp"
#include "gqncal/toml_lite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace gqncal {

inline constexpr const char* kPackageVersion = "0.1.0";

namespace detail {

inline std::string render_value(const TomlValue& val) {
  if (val.is_string()) return '"' + std::get<std::string>(val.v) + '"';
  if (val.is_bool()) return std::get<bool>(val.v) ? "true" : "false";
  if (val.is_number()) return format_double(std::get<double>(val.v));
  std::string out = "[";
  const auto& items = std::get<std::vector<TomlValue>>(val.v);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += render_value(items[i]);
  }
  return out + "]";
}

}  // namespace detail

/// A parsed run configuration. Every command takes one of these; the seed and
/// the output directory are mandatory so no run can fall back to wall-clock
/// seeding or scribble into the working directory by accident.
struct RunConfig {
  TomlTable toml;

  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {}) {
    RunConfig cfg{TomlTable::load(path)};
    for (const std::string& o : overrides) cfg.toml.set_override(o);
    return cfg;
  }

  static RunConfig from_text(const std::string& text) { return RunConfig{TomlTable::parse(text)}; }

  std::uint64_t seed() const {
    if (!toml.has("run", "seed"))
      throw SpecError("config: run.seed is required (runs never seed from the clock)");
    const long long s = toml.integer("run", "seed");
    if (s < 0) throw SpecError("config: run.seed must be >= 0");
    return static_cast<std::uint64_t>(s);
  }

  int threads() const {
    const long long t = toml.integer("run", "threads", 1);
    if (t < 1) throw SpecError("config: run.threads must be >= 1");
    return static_cast<int>(t);
  }

  std::string output_dir() const {
    if (!toml.has("run", "output_dir")) throw SpecError("config: run.output_dir is required");
    return toml.str("run", "output_dir");
  }

  /// Sorted section.key = value dump; the stable text behind config_hash and
  /// the manifest copy that makes a run reproducible from its artifacts.
  std::string canonical() const {
    std::string out;
    for (const auto& [sec, kv] : toml.sections())
      for (const auto& [key, val] : kv)
        out += sec + "." + key + " = " + detail::render_value(val) + "\n";
    return out;
  }

  std::string hash() const { return fnv1a_hex(canonical()); }
};

namespace detail {

/// Fixed sub-stream ids, so adding a consumer never shifts another one.
namespace seed_stream {
inline constexpr std::uint64_t process = 0;
inline constexpr std::uint64_t covariates = 1;
inline constexpr std::uint64_t observation = 2;
inline constexpr std::uint64_t holdout = 3;
inline constexpr std::uint64_t replicates = 4;
inline constexpr std::uint64_t basis_mc = 5;
inline constexpr std::uint64_t ensemble = 6;
}  // namespace seed_stream

inline const std::string* pick_section(const TomlTable& t, const std::string& primary,
                                       const std::string& fallback, const std::string& key) {
  if (t.has(primary, key)) return &primary;
  if (!fallback.empty() && t.has(fallback, key)) return &fallback;
  return nullptr;
}

/// A process parameter: a bare number pins it, [lo, hi] draws it uniformly
/// per ensemble replicate. `fallback` lets the calibration prior inherit the
/// generating values from the dynamics section.
inline ParamRange range_from(const TomlTable& t, const std::string& primary,
                             const std::string& fallback, const std::string& key,
                             std::optional<ParamRange> def = {}) {
  const std::string* sec = pick_section(t, primary, fallback, key);
  if (!sec) {
    if (def) return *def;
    throw SpecError("config: missing required key " + primary + "." + key);
  }
  const std::vector<double> v = t.number_array(*sec, key);
  if (v.size() == 1) return ParamRange::fixed(v[0]);
  if (v.size() == 2) return ParamRange{v[0], v[1], false};
  throw SpecError("config: " + *sec + "." + key + " must be a value or [lo, hi]");
}

inline double scalar_from(const TomlTable& t, const std::string& primary,
                          const std::string& fallback, const std::string& key, double def) {
  const std::string* sec = pick_section(t, primary, fallback, key);
  return sec ? t.number(*sec, key) : def;
}

inline std::string str_from(const TomlTable& t, const std::string& primary,
                            const std::string& fallback, const std::string& key,
                            const std::string& def) {
  const std::string* sec = pick_section(t, primary, fallback, key);
  return sec ? t.str(*sec, key) : def;
}

inline bool bool_from(const TomlTable& t, const std::string& primary, const std::string& fallback,
                      const std::string& key, bool def) {
  const std::string* sec = pick_section(t, primary, fallback, key);
  return sec ? t.boolean(*sec, key, def) : def;
}

inline std::vector<std::string> str_array(const TomlTable& t, const std::string& section,
                                          const std::string& key) {
  const TomlValue& v = t.at(section, key);
  if (!v.is_array()) throw SpecError("config: " + section + "." + key + " must be an array");
  std::vector<std::string> out;
  for (const TomlValue& item : std::get<std::vector<TomlValue>>(v.v)) {
    if (!item.is_string())
      throw SpecError("config: " + section + "." + key + " must hold strings");
    out.push_back(std::get<std::string>(item.v));
  }
  return out;
}

/// Hyperprior scale: absent keeps the default log-uniform range, one value
/// pins it, [lo, hi] narrows the range.
inline HyperParam hyper_from(const TomlTable& t, const std::string& section,
                             const std::string& key) {
  if (!t.has(section, key)) return HyperParam{};
  const std::vector<double> v = t.number_array(section, key);
  if (v.size() == 1) return HyperParam::fixed(v[0]);
  if (v.size() == 2) return HyperParam{ParamRange{v[0], v[1], true}, {}};
  throw SpecError("config: " + section + "." + key + " must be a value or [lo, hi]");
}

inline std::string row_lookup_key(const std::string& id, double time) {
  return id + '\x1f' + format_double(time);
}

inline std::string file_hash(const std::string& path) { return fnv1a_hex(read_text(path)); }

}  // namespace detail

inline SpatialDomain make_domain(const RunConfig& cfg) {
  const std::string kind = cfg.toml.str("domain", "kind", "lattice");
  if (kind == "lattice") {
    const long long rows = cfg.toml.integer("domain", "rows");
    const long long cols = cfg.toml.integer("domain", "cols");
    return SpatialDomain::lattice(static_cast<int>(rows), static_cast<int>(cols),
                                  cfg.toml.number("domain", "dx", 1.0),
                                  cfg.toml.number("domain", "dy", 1.0));
  }
  if (kind == "areal") return SpatialDomain::areal(read_geojson(cfg.toml.str("domain", "geojson")));
  throw SpecError("config: domain.kind must be \"lattice\" or \"areal\"");
}

inline std::vector<std::string> site_ids(const SpatialDomain& domain) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(domain.n()));
  if (domain.kind == SpatialDomain::Kind::areal)
    for (const auto& a : domain.areas) ids.push_back(a.id);
  else
    for (Index i = 0; i < domain.n(); ++i) ids.push_back(std::to_string(i));
  return ids;
}

/// Process dynamics need point sites; areal units contribute their centroids,
/// in unit order, so ensemble rows line up with the areal basis rows.
inline SpatialDomain process_sites(const SpatialDomain& domain) {
  if (domain.kind != SpatialDomain::Kind::areal) return domain;
  std::vector<Eigen::Vector2d> centroids;
  centroids.reserve(domain.areas.size());
  for (const auto& a : domain.areas) centroids.push_back(area_centroid(a));
  return SpatialDomain::points(std::move(centroids));
}

inline GqnPriorSpec prior_from_config(const TomlTable& t, const std::string& sec,
                                      const std::string& fb) {
  GqnPriorSpec p;
  p.delta_self = detail::range_from(t, sec, fb, "delta_self");
  p.delta_neighbor = detail::range_from(t, sec, fb, "delta_neighbor");
  p.nu = detail::range_from(t, sec, fb, "nu");
  p.gamma0 = detail::range_from(t, sec, fb, "gamma0", ParamRange::fixed(0.0));
  p.gamma1 = detail::range_from(t, sec, fb, "gamma1", ParamRange::fixed(1.0));
  p.sigma2_eta = detail::range_from(t, sec, fb, "sigma2_eta");
  p.phi_eta = detail::range_from(t, sec, fb, "phi_eta", ParamRange::fixed(1.0));
  p.sigma2_0 = detail::range_from(t, sec, fb, "sigma2_0");
  p.phi_0 = detail::range_from(t, sec, fb, "phi_0", ParamRange::fixed(1.0));
  p.p_a = detail::scalar_from(t, sec, fb, "p_a", 1.0);
  p.p_b = detail::scalar_from(t, sec, fb, "p_b", 1.0);
  p.rho = detail::scalar_from(t, sec, fb, "rho", 1.5);
  const std::string g = detail::str_from(t, sec, fb, "g", "exponential");
  if (g == "exponential") p.g = GKind::exponential;
  else if (g == "identity") p.g = GKind::identity;
  else throw SpecError("config: " + sec + ".g must be \"exponential\" or \"identity\"");
  const std::string bs = detail::str_from(t, sec, fb, "b_structure", "diagonal");
  if (bs == "diagonal") p.b_structure = BStructure::diagonal;
  else if (bs == "neighborhood") p.b_structure = BStructure::neighborhood;
  else throw SpecError("config: " + sec + ".b_structure must be \"diagonal\" or \"neighborhood\"");
  p.linear_only = detail::bool_from(t, sec, fb, "linear_only", false);
  return p;
}

inline Family family_from(const TomlTable& t) {
  const std::string f = t.str("observation", "family");
  if (f == "gaussian") return Family::gaussian;
  if (f == "poisson") return Family::poisson;
  if (f == "bernoulli") return Family::bernoulli;
  throw SpecError("config: observation.family must be gaussian, poisson, or bernoulli");
}

inline void write_manifest(const std::string& dir, const std::string& command,
                           const RunConfig& cfg, nlohmann::json details) {
  nlohmann::json m;
  m["command"] = command;
  m["version"] = kPackageVersion;
  m["config"] = cfg.canonical();
  m["config_hash"] = cfg.hash();
  m["seed"] = cfg.seed();
  for (auto& [k, v] : details.items()) m[k] = v;
  write_json(dir + "/manifest_" + command + ".json", m);
}

// ---------------------------------------------------------------------------
// simulate

struct SimulationProduct {
  ObsTable observations;   // times 0 .. T-1
  ObsTable forecast_truth; // times T .. T+horizon-1, empty when horizon = 0
  ObsTable latent;         // all times; value column holds the latent mean
  std::vector<std::string> ids;
  Index n = 0;
  Index T = 0;
  Index horizon = 0;
  Family family = Family::gaussian;
  std::vector<double> beta_true;
  std::uint64_t prior_hash = 0;
};

/// Draws one process from the dynamics section, pushes it through the
/// observation model, and splits the result into a training table, a
/// forecast-truth table, and the latent mean surface.
inline SimulationProduct simulate_experiment(const RunConfig& cfg) {
  const std::uint64_t seed = cfg.seed();
  const TomlTable& t = cfg.toml;

  const SpatialDomain domain = make_domain(cfg);
  const SpatialDomain sites = process_sites(domain);
  const std::vector<std::string> ids = site_ids(domain);
  const Index n = domain.n();

  const long long T = t.integer("dynamics", "T");
  const long long horizon = t.integer("dynamics", "horizon", 0);
  if (T < 1) throw SpecError("config: dynamics.T must be >= 1");
  if (horizon < 0) throw SpecError("config: dynamics.horizon must be >= 0");
  const Index T_total = static_cast<Index>(T + horizon);

  const Family family = family_from(t);
  const std::vector<double> beta = t.number_array("observation", "beta");
  if (beta.empty()) throw SpecError("config: observation.beta must list at least one coefficient");
  const Index p = static_cast<Index>(beta.size());
  double sigma2_z = 0.0;
  if (family == Family::gaussian) {
    sigma2_z = t.number("observation", "sigma2_z");
    if (!(sigma2_z > 0.0)) throw SpecError("config: observation.sigma2_z must be positive");
  }

  const GqnPriorSpec prior = prior_from_config(t, "dynamics", "");
  Rng rng_proc(derive_seed(seed, detail::seed_stream::process));
  const DynamicsSpec spec = draw_gqn_spec(prior, sites, rng_proc);
  const FieldSeries fs = simulate_series(spec, T_total, rng_proc);

  // Covariates: a leading intercept, then synthetic standardized columns so
  // multi-covariate studies run without external data.
  const Index n_rows = n * T_total;
  Matrix X = Matrix::Ones(n_rows, p);
  if (p > 1) {
    Rng rng_x(derive_seed(seed, detail::seed_stream::covariates));
    for (Index i = 0; i < n_rows; ++i)
      for (Index j = 1; j < p; ++j) X(i, j) = rng_x.normal();
  }

  Vector y(n_rows);  // latent observation-scale mean, stacked site-major per time
  for (Index tt = 0; tt < T_total; ++tt) y.segment(tt * n, n) = fs.values.col(tt);
  y += X * Eigen::Map<const Vector>(beta.data(), p);

  Vector z(n_rows);
  Rng rng_obs(derive_seed(seed, detail::seed_stream::observation));
  for (Index i = 0; i < n_rows; ++i) {
    switch (family) {
      case Family::gaussian:
        z[i] = y[i] + std::sqrt(sigma2_z) * rng_obs.normal();
        break;
      case Family::poisson: {
        const double lam = std::exp(y[i]);
        if (!(lam < 1e12))
          throw NumericError("simulate: poisson mean exp(latent) overflowed at stacked row " +
                             std::to_string(i));
        z[i] = static_cast<double>(rng_obs.poisson(lam));
        break;
      }
      case Family::bernoulli:
        z[i] = rng_obs.uniform() < 1.0 / (1.0 + std::exp(-y[i])) ? 1.0 : 0.0;
        break;
    }
  }

  std::vector<std::string> names;
  names.emplace_back("intercept");
  for (Index j = 1; j < p; ++j) names.push_back("x" + std::to_string(j));

  const auto slice = [&](Index t0, Index t1) {
    ObsTable tab;
    tab.covariate_names = names;
    const Index m = (t1 - t0) * n;
    tab.z.resize(m);
    tab.X.resize(m, p);
    tab.rows.reserve(static_cast<std::size_t>(m));
    Index k = 0;
    for (Index tt = t0; tt < t1; ++tt)
      for (Index i = 0; i < n; ++i, ++k) {
        tab.rows.push_back({ids[static_cast<std::size_t>(i)], static_cast<double>(tt)});
        tab.z[k] = z[tt * n + i];
        tab.X.row(k) = X.row(tt * n + i);
      }
    return tab;
  };

  SimulationProduct out;
  out.observations = slice(0, static_cast<Index>(T));
  if (horizon > 0) out.forecast_truth = slice(static_cast<Index>(T), T_total);
  out.latent.X.resize(n_rows, 0);
  out.latent.z = y;
  for (Index tt = 0; tt < T_total; ++tt)
    for (Index i = 0; i < n; ++i)
      out.latent.rows.push_back({ids[static_cast<std::size_t>(i)], static_cast<double>(tt)});
  out.ids = ids;
  out.n = n;
  out.T = static_cast<Index>(T);
  out.horizon = static_cast<Index>(horizon);
  out.family = family;
  out.beta_true = beta;
  out.prior_hash = prior.hash();
  return out;
}

inline void cmd_simulate(const RunConfig& cfg) {
  const std::string dir = cfg.output_dir();
  std::filesystem::create_directories(dir);
  const SimulationProduct sim = simulate_experiment(cfg);

  write_observations(dir + "/observations.csv", sim.observations);
  write_observations(dir + "/latent.csv", sim.latent);
  nlohmann::json outputs;
  outputs["observations.csv"] = detail::file_hash(dir + "/observations.csv");
  outputs["latent.csv"] = detail::file_hash(dir + "/latent.csv");
  if (sim.horizon > 0) {
    write_observations(dir + "/forecast_truth.csv", sim.forecast_truth);
    outputs["forecast_truth.csv"] = detail::file_hash(dir + "/forecast_truth.csv");
  }

  nlohmann::json details;
  details["family"] = family_name(sim.family);
  details["n_sites"] = sim.n;
  details["T"] = sim.T;
  details["horizon"] = sim.horizon;
  details["beta_true"] = sim.beta_true;
  details["prior_hash"] = sim.prior_hash;
  details["outputs"] = outputs;
  write_manifest(dir, "simulate", cfg, details);
}

// ---------------------------------------------------------------------------
// basis

inline BasisMatrix basis_experiment(const RunConfig& cfg) {
  const TomlTable& t = cfg.toml;
  const SpatialDomain domain = make_domain(cfg);

  std::vector<double> times;
  if (t.has("basis", "times")) {
    times = t.number_array("basis", "times");
  } else {
    long long n_times = t.integer("basis", "n_times", 0);
    if (n_times == 0)
      n_times = t.integer("dynamics", "T", 0) + t.integer("dynamics", "horizon", 0);
    if (n_times < 1)
      throw SpecError("config: set basis.times, basis.n_times, or dynamics.T");
    for (long long tt = 0; tt < n_times; ++tt) times.push_back(static_cast<double>(tt));
  }

  double x_lo, x_hi, y_lo, y_hi;
  if (domain.kind == SpatialDomain::Kind::areal) {
    x_lo = y_lo = std::numeric_limits<double>::infinity();
    x_hi = y_hi = -x_lo;
    for (const auto& a : domain.areas) {
      const auto box = area_bbox(a);
      x_lo = std::min(x_lo, box[0]);
      y_lo = std::min(y_lo, box[1]);
      x_hi = std::max(x_hi, box[2]);
      y_hi = std::max(y_hi, box[3]);
    }
  } else {
    x_lo = y_lo = std::numeric_limits<double>::infinity();
    x_hi = y_hi = -x_lo;
    for (const auto& c : domain.coords) {
      x_lo = std::min(x_lo, c.x());
      y_lo = std::min(y_lo, c.y());
      x_hi = std::max(x_hi, c.x());
      y_hi = std::max(y_hi, c.y());
    }
  }
  x_lo = t.number("basis", "x_lo", x_lo);
  x_hi = t.number("basis", "x_hi", x_hi);
  y_lo = t.number("basis", "y_lo", y_lo);
  y_hi = t.number("basis", "y_hi", y_hi);
  const double t_lo = t.number("basis", "t_lo", *std::min_element(times.begin(), times.end()));
  const double t_hi = t.number("basis", "t_hi", *std::max_element(times.begin(), times.end()));

  const std::vector<double> sg = t.number_array("basis", "sub_grids");
  if (sg.empty() || sg.size() % 2 != 0)
    throw SpecError("config: basis.sub_grids must list nx,ny pairs");
  std::vector<SubGrid> grids;
  for (std::size_t k = 0; k + 1 < sg.size(); k += 2) {
    if (sg[k] != std::floor(sg[k]) || sg[k + 1] != std::floor(sg[k + 1]) || sg[k] < 1 ||
        sg[k + 1] < 1)
      throw SpecError("config: basis.sub_grids entries must be positive integers");
    grids.push_back({static_cast<int>(sg[k]), static_cast<int>(sg[k + 1])});
  }

  const KnotGrid grid = KnotGrid::regular(
      grids, static_cast<int>(t.integer("basis", "n_temporal")), x_lo, x_hi, y_lo, y_hi, t_lo,
      t_hi, t.boolean("basis", "standardize", true), t.number("basis", "bandwidth", 0.0));
  return build_basis_matrix(domain, times, grid,
                            static_cast<Index>(t.integer("basis", "n_mc", 400)),
                            derive_seed(cfg.seed(), detail::seed_stream::basis_mc));
}

inline void cmd_basis(const RunConfig& cfg) {
  const std::string dir = cfg.output_dir();
  std::filesystem::create_directories(dir);
  const BasisMatrix bm = basis_experiment(cfg);
  write_basis(dir + "/basis.csv", dir + "/basis.json", bm);

  nlohmann::json details;
  details["rows"] = bm.G.rows();
  details["columns"] = bm.G.cols();
  details["r_s"] = bm.knot_grid.r_s();
  details["r_t"] = bm.knot_grid.r_t();
  details["bandwidth"] = bm.knot_grid.bandwidth;
  details["zero_rows"] = bm.zero_rows.size();
  nlohmann::json outputs;
  outputs["basis.csv"] = detail::file_hash(dir + "/basis.csv");
  outputs["basis.json"] = detail::file_hash(dir + "/basis.json");
  details["outputs"] = outputs;
  write_manifest(dir, "basis", cfg, details);
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrationProduct {
  CalibratedCovariance cal;
  std::string target;
  Index R = 0;
  std::uint64_t prior_hash = 0;
};

/// Simulates the declared process ensemble on the domain's sites and matches
/// the basis-expanded covariance to it. target = "var1" drops the quadratic
/// term, giving the linear comparison ensemble.
inline CalibrationProduct calibrate_experiment(const RunConfig& cfg, const Matrix& G) {
  const TomlTable& t = cfg.toml;
  const SpatialDomain domain = make_domain(cfg);
  const SpatialDomain sites = process_sites(domain);
  const Index n = domain.n();
  if (n == 0 || G.rows() % n != 0)
    throw SpecError("calibrate: basis rows are not a multiple of the site count");
  const Index T_ens = G.rows() / n;

  const long long R = t.integer("calibration", "R");
  if (R < 2) throw SpecError("config: calibration.R must be >= 2");
  const std::string target = t.str("calibration", "target", "gqn");
  if (target != "gqn" && target != "var1")
    throw SpecError("config: calibration.target must be \"gqn\" or \"var1\"");

  GqnPriorSpec prior = prior_from_config(t, "calibration", "dynamics");
  if (target == "var1") prior.linear_only = true;

  const EnsembleCovariance ens =
      ensemble_covariance(prior, sites, T_ens, static_cast<Index>(R),
                          derive_seed(cfg.seed(), detail::seed_stream::ensemble), cfg.threads());
  CalibrationProduct out;
  out.cal = calibrate(ens, G);
  out.target = target;
  out.R = static_cast<Index>(R);
  out.prior_hash = prior.hash();
  return out;
}

inline void cmd_calibrate(const RunConfig& cfg) {
  const std::string dir = cfg.output_dir();
  std::filesystem::create_directories(dir);
  const std::string basis_path = cfg.toml.str("calibration", "basis", dir + "/basis.csv");
  const Matrix G = read_matrix_csv(basis_path);
  const CalibrationProduct prod = calibrate_experiment(cfg, G);

  write_matrix_csv(dir + "/K.csv", prod.cal.K);
  write_matrix_csv(dir + "/K_sqrt.csv", prod.cal.K_sqrt);
  write_matrix_csv(dir + "/L.csv", prod.cal.L);

  nlohmann::json summary;
  summary["target"] = prod.target;
  summary["rows"] = G.rows();
  summary["r"] = G.cols();
  summary["R"] = prod.R;
  summary["frobenius_residual"] = prod.cal.frobenius_residual;
  summary["prior_hash"] = prod.prior_hash;
  summary["seed"] = cfg.seed();
  summary["config_hash"] = cfg.hash();
  write_json(dir + "/calibration.json", summary);

  nlohmann::json details;
  details["target"] = prod.target;
  details["R"] = prod.R;
  details["frobenius_residual"] = prod.cal.frobenius_residual;
  details["prior_hash"] = prod.prior_hash;
  nlohmann::json inputs;
  inputs[basis_path] = detail::file_hash(basis_path);
  details["inputs"] = inputs;
  nlohmann::json outputs;
  for (const char* f : {"K.csv", "K_sqrt.csv", "L.csv", "calibration.json"})
    outputs[f] = detail::file_hash(dir + "/" + f);
  details["outputs"] = outputs;
  write_manifest(dir, "calibrate", cfg, details);
}

// ---------------------------------------------------------------------------
// fit

struct FitInputs {
  ObsTable observations;
  std::vector<RowKey> basis_rows;  // keys aligned with the rows of L
  Matrix L;                        // basis-expanded loading matrix, one row per basis row
  ObsTable forecast;               // optional truth beyond the training window
  ObsTable latent;                 // optional latent-mean surface for scoring
  std::vector<double> beta_true;   // empty when unknown
  std::string label = "fit";
  std::string observations_hash;
};

struct FitProduct {
  PosteriorDraws draws;
  ScoreReport report;
  nlohmann::json report_json;
  std::vector<RowKey> fit_rows;
  Vector fit_z;
  Vector in_sample_mean;  // observation-scale posterior mean on the fit rows
};

namespace detail {

/// Re-blocks covariates for prediction rows against the training time layout.
/// Times past the training window reuse the final block (the forecast-year
/// convention: the last fitted coefficient carries forward).
inline Matrix expand_against(const Matrix& X, const std::vector<RowKey>& rows,
                             const std::vector<double>& train_times, bool clamp_future) {
  const Index p = X.cols();
  const Index k = static_cast<Index>(train_times.size());
  Matrix out = Matrix::Zero(X.rows(), p * k);
  for (Index i = 0; i < X.rows(); ++i) {
    const double ti = rows[static_cast<std::size_t>(i)].time;
    const auto it = std::lower_bound(train_times.begin(), train_times.end(), ti);
    Index block;
    if (it != train_times.end() && *it == ti)
      block = static_cast<Index>(it - train_times.begin());
    else if (clamp_future && !train_times.empty() && ti > train_times.back())
      block = k - 1;
    else
      throw SpecError("fit: time-varying coefficients have no block for time " +
                      format_double(ti));
    out.block(i, block * p, 1, p) = X.row(i);
  }
  return out;
}

struct GatheredRows {
  Vector z;
  Matrix X;
  Matrix L;
  std::vector<RowKey> labels;
};

inline GatheredRows gather_rows(const ObsTable& src, const std::vector<Index>& which,
                                const std::unordered_map<std::string, Index>& row_map,
                                const Matrix& L_full) {
  GatheredRows g;
  const Index m = static_cast<Index>(which.size());
  g.z.resize(m);
  g.X.resize(m, src.X.cols());
  g.L.resize(m, L_full.cols());
  g.labels.reserve(which.size());
  for (Index k = 0; k < m; ++k) {
    const Index i = which[static_cast<std::size_t>(k)];
    const RowKey& key = src.rows[static_cast<std::size_t>(i)];
    const auto it = row_map.find(row_lookup_key(key.id, key.time));
    if (it == row_map.end())
      throw SpecError("fit: no basis row for site '" + key.id + "' at time " +
                      format_double(key.time));
    g.z[k] = src.z[i];
    g.X.row(k) = src.X.row(i);
    g.L.row(k) = L_full.row(it->second);
    g.labels.push_back(key);
  }
  return g;
}

inline std::vector<Index> all_rows(const ObsTable& tab) {
  std::vector<Index> v(static_cast<std::size_t>(tab.n()));
  for (Index i = 0; i < tab.n(); ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

inline double mean_crps(const Matrix& draws_by_row, const Vector& truth) {
  double acc = 0.0;
  std::vector<double> row(static_cast<std::size_t>(draws_by_row.cols()));
  for (Index i = 0; i < draws_by_row.rows(); ++i) {
    for (Index r = 0; r < draws_by_row.cols(); ++r) row[static_cast<std::size_t>(r)] =
        draws_by_row(i, r);
    acc += crps_ensemble(row, truth[i]);
  }
  return acc / static_cast<double>(draws_by_row.rows());
}

}  // namespace detail

/// Fits the calibrated model and scores it. The scoring target is either the
/// observed values or, when a latent surface is supplied, the latent mean
/// pushed through the family link (the recover-the-surface view used for
/// simulated data).
inline FitProduct fit_experiment(const RunConfig& cfg, const FitInputs& in) {
  const std::uint64_t seed = cfg.seed();
  const TomlTable& t = cfg.toml;
  const Family family = family_from(t);
  const ObsTable& obs = in.observations;
  if (obs.n() == 0) throw SpecError("fit: observation table is empty");
  if (static_cast<Index>(in.basis_rows.size()) != in.L.rows())
    throw SpecError("fit: basis row keys and L row counts disagree");

  std::unordered_map<std::string, Index> row_map;
  row_map.reserve(in.basis_rows.size());
  for (Index i = 0; i < in.L.rows(); ++i) {
    const RowKey& k = in.basis_rows[static_cast<std::size_t>(i)];
    row_map[detail::row_lookup_key(k.id, k.time)] = i;
  }

  const bool have_latent = in.latent.n() > 0;
  const std::string scoring =
      t.str("fit", "scoring_target", have_latent ? "latent" : "observed");
  if (scoring != "latent" && scoring != "observed")
    throw SpecError("config: fit.scoring_target must be \"latent\" or \"observed\"");
  if (scoring == "latent" && !have_latent)
    throw SpecError("fit: scoring_target = latent needs a latent surface file");

  std::unordered_map<std::string, double> latent_map;
  if (scoring == "latent") {
    latent_map.reserve(static_cast<std::size_t>(in.latent.n()));
    for (Index i = 0; i < in.latent.n(); ++i) {
      const RowKey& k = in.latent.rows[static_cast<std::size_t>(i)];
      latent_map[detail::row_lookup_key(k.id, k.time)] = in.latent.z[i];
    }
  }
  const auto target_for = [&](const std::vector<RowKey>& labels, const Vector& z) {
    if (scoring == "observed") return z;
    Vector out(static_cast<Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto it = latent_map.find(detail::row_lookup_key(labels[i].id, labels[i].time));
      if (it == latent_map.end())
        throw SpecError("fit: latent surface has no value for site '" + labels[i].id +
                        "' at time " + format_double(labels[i].time));
      out[static_cast<Index>(i)] = apply_link(family, it->second);
    }
    return out;
  };

  const double holdout_fraction = t.number("fit", "holdout_fraction", 0.0);
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw SpecError("config: fit.holdout_fraction must be in [0, 1)");
  const bool time_varying = t.boolean("fit", "time_varying", false);
  const std::string predictor = t.str("fit", "predictor", "smooth");
  if (predictor != "smooth" && predictor != "full")
    throw SpecError("config: fit.predictor must be \"smooth\" or \"full\"");
  const long long n_reps = t.integer("fit", "n_reps", 500);
  if (n_reps < 2) throw SpecError("config: fit.n_reps must be >= 2");
  const double max_time =
      t.number("fit", "max_time", std::numeric_limits<double>::infinity());

  // Partition: observation rows past max_time join the forecast set.
  std::vector<Index> train_candidates;
  std::vector<Index> obs_overflow;
  for (Index i = 0; i < obs.n(); ++i)
    (obs.rows[static_cast<std::size_t>(i)].time <= max_time ? train_candidates : obs_overflow)
        .push_back(i);
  if (train_candidates.empty())
    throw SpecError("fit: no training rows at or before fit.max_time");

  ObsTable fc;
  fc.covariate_names = obs.covariate_names;
  {
    std::vector<const ObsTable*> sources;
    std::vector<std::vector<Index>> picks;
    if (in.forecast.n() > 0) {
      if (in.forecast.covariate_names != obs.covariate_names)
        throw SpecError("fit: forecast file covariates disagree with observations");
      sources.push_back(&in.forecast);
      picks.push_back(detail::all_rows(in.forecast));
    }
    if (!obs_overflow.empty()) {
      sources.push_back(&obs);
      picks.push_back(obs_overflow);
    }
    Index m = 0;
    for (const auto& v : picks) m += static_cast<Index>(v.size());
    fc.z.resize(m);
    fc.X.resize(m, obs.X.cols());
    Index k = 0;
    for (std::size_t s = 0; s < sources.size(); ++s)
      for (Index i : picks[s]) {
        fc.rows.push_back(sources[s]->rows[static_cast<std::size_t>(i)]);
        fc.z[k] = sources[s]->z[i];
        fc.X.row(k) = sources[s]->X.row(i);
        ++k;
      }
  }

  // Horizon: keep the first h distinct forecast times.
  std::vector<double> fc_times;
  for (const RowKey& k : fc.rows) fc_times.push_back(k.time);
  std::sort(fc_times.begin(), fc_times.end());
  fc_times.erase(std::unique(fc_times.begin(), fc_times.end()), fc_times.end());
  if (t.has("fit", "horizon")) {
    const long long h = t.integer("fit", "horizon");
    if (h < 0) throw SpecError("config: fit.horizon must be >= 0");
    if (h > static_cast<long long>(fc_times.size()))
      throw SpecError("fit: horizon exceeds the " + std::to_string(fc_times.size()) +
                      " available forecast times");
    fc_times.resize(static_cast<std::size_t>(h));
    std::vector<Index> keep;
    for (Index i = 0; i < fc.n(); ++i)
      if (std::binary_search(fc_times.begin(), fc_times.end(),
                             fc.rows[static_cast<std::size_t>(i)].time))
        keep.push_back(i);
    ObsTable cut;
    cut.covariate_names = fc.covariate_names;
    cut.z.resize(static_cast<Index>(keep.size()));
    cut.X.resize(static_cast<Index>(keep.size()), fc.X.cols());
    Index k = 0;
    for (Index i : keep) {
      cut.rows.push_back(fc.rows[static_cast<std::size_t>(i)]);
      cut.z[k] = fc.z[i];
      cut.X.row(k) = fc.X.row(i);
      ++k;
    }
    fc = std::move(cut);
  }
  double max_train_time = -std::numeric_limits<double>::infinity();
  for (Index i : train_candidates)
    max_train_time = std::max(max_train_time, obs.rows[static_cast<std::size_t>(i)].time);
  for (const double ft : fc_times)
    if (ft <= max_train_time)
      throw SpecError("fit: forecast time " + format_double(ft) +
                      " overlaps the training window");

  // Holdout: a seeded without-replacement draw per training time.
  std::vector<Index> fit_sel, hold_sel;
  if (holdout_fraction > 0.0) {
    std::map<double, std::vector<Index>> by_time;
    for (Index i : train_candidates)
      by_time[obs.rows[static_cast<std::size_t>(i)].time].push_back(i);
    Rng hrng(derive_seed(seed, detail::seed_stream::holdout));
    std::vector<char> is_hold(static_cast<std::size_t>(obs.n()), 0);
    for (auto& [time, group] : by_time) {
      const std::size_t k =
          static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(group.size())));
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t pick =
            j + static_cast<std::size_t>(hrng.integer(static_cast<std::uint64_t>(group.size() - j)));
        std::swap(group[j], group[pick]);
        is_hold[static_cast<std::size_t>(group[j])] = 1;
      }
    }
    for (Index i : train_candidates)
      (is_hold[static_cast<std::size_t>(i)] ? hold_sel : fit_sel).push_back(i);
  } else {
    fit_sel = train_candidates;
  }
  if (fit_sel.empty()) throw SpecError("fit: holdout removed every training row");

  detail::GatheredRows fit_g = detail::gather_rows(obs, fit_sel, row_map, in.L);
  detail::GatheredRows hold_g = detail::gather_rows(obs, hold_sel, row_map, in.L);
  detail::GatheredRows fc_g = detail::gather_rows(fc, detail::all_rows(fc), row_map, in.L);

  std::vector<double> train_times;
  for (const RowKey& k : fit_g.labels) train_times.push_back(k.time);
  std::sort(train_times.begin(), train_times.end());
  train_times.erase(std::unique(train_times.begin(), train_times.end()), train_times.end());
  if (time_varying) {
    fit_g.X = detail::expand_against(fit_g.X, fit_g.labels, train_times, false);
    if (hold_g.z.size() > 0)
      hold_g.X = detail::expand_against(hold_g.X, hold_g.labels, train_times, false);
    if (fc_g.z.size() > 0)
      fc_g.X = detail::expand_against(fc_g.X, fc_g.labels, train_times, true);
  }

  Dataset data;
  data.z = fit_g.z;
  data.X = fit_g.X;
  data.family = family;
  data.rows = fit_g.labels;
  if (t.has("fit", "sigma2_z")) {
    const double v = t.number("fit", "sigma2_z");
    if (!(v > 0.0)) throw SpecError("config: fit.sigma2_z must be positive");
    data.sigma2 = Vector::Constant(data.z.size(), v);
  }

  EprHyper hyper;
  hyper.sigma2_beta = detail::hyper_from(t, "fit", "sigma2_beta");
  hyper.sigma2_eta = detail::hyper_from(t, "fit", "sigma2_eta");
  hyper.sigma2_xi = detail::hyper_from(t, "fit", "sigma2_xi");
  hyper.sigma2_z = detail::hyper_from(t, "fit", "sigma2_z_prior");
  hyper.alpha_xi = t.number("fit", "alpha_xi", 0.001);

  const auto t0 = std::chrono::steady_clock::now();
  const EprDesign design = build_design(fit_g.X, fit_g.L, hyper);
  PosteriorDraws draws = posterior_replicates(
      data, design, static_cast<Index>(n_reps), derive_seed(seed, detail::seed_stream::replicates),
      cfg.threads());
  const double cpu_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // In-sample predictions and scores.
  const bool full_predictor = predictor == "full";
  const Matrix mu_in =
      apply_link(family, latent_predict(draws, fit_g.X, fit_g.L, full_predictor));
  const Vector pred_in = mu_in.rowwise().mean();
  const Vector target_in = target_for(fit_g.labels, fit_g.z);

  ScoreReport report;
  report.cpu_seconds = cpu_seconds;
  report.in_sample_mspe = mspe(pred_in, target_in);
  report.crps = detail::mean_crps(mu_in, target_in);
  report.waic = waic(pointwise_loglik(data, draws.y_rep, draws));
  if (family == Family::bernoulli) {
    std::vector<int> labels(static_cast<std::size_t>(fit_g.z.size()));
    for (Index i = 0; i < fit_g.z.size(); ++i)
      labels[static_cast<std::size_t>(i)] = static_cast<int>(fit_g.z[i]);
    report.auc = auc(pred_in, labels);
  }

  const Vector beta_mean = draws.beta.rowwise().mean();
  if (!time_varying && static_cast<Index>(in.beta_true.size()) == beta_mean.size() &&
      !in.beta_true.empty()) {
    double acc = 0.0;
    for (Index j = 0; j < beta_mean.size(); ++j) {
      const double d = beta_mean[j] - in.beta_true[static_cast<std::size_t>(j)];
      acc += d * d;
    }
    report.beta_mse = acc / static_cast<double>(beta_mean.size());
  }

  std::optional<double> holdout_crps;
  if (hold_g.z.size() > 0) {
    const Matrix mu = apply_link(family, latent_predict(draws, hold_g.X, hold_g.L, false));
    const Vector target = target_for(hold_g.labels, hold_g.z);
    report.out_of_sample_mspe = mspe(Vector(mu.rowwise().mean()), target);
    holdout_crps = detail::mean_crps(mu, target);
  }

  std::vector<double> forecast_by_step;
  if (fc_g.z.size() > 0) {
    const Matrix mu = apply_link(family, latent_predict(draws, fc_g.X, fc_g.L, false));
    const Vector pred = mu.rowwise().mean();
    const Vector target = target_for(fc_g.labels, fc_g.z);
    report.forecast_error = mspe(pred, target);
    for (const double ft : fc_times) {
      double acc = 0.0;
      Index cnt = 0;
      for (Index i = 0; i < fc_g.z.size(); ++i)
        if (fc_g.labels[static_cast<std::size_t>(i)].time == ft) {
          const double d = pred[i] - target[i];
          acc += d * d;
          ++cnt;
        }
      forecast_by_step.push_back(acc / static_cast<double>(cnt));
    }
  }
  validate(report);

  nlohmann::json rj;
  rj["label"] = in.label;
  rj["family"] = family_name(family);
  rj["seed"] = seed;
  rj["config_hash"] = cfg.hash();
  rj["observations_hash"] = in.observations_hash;
  rj["predictor"] = predictor;
  rj["scoring_target"] = scoring;
  rj["n_train"] = fit_g.z.size();
  rj["n_holdout"] = hold_g.z.size();
  rj["n_forecast"] = fc_g.z.size();
  rj["horizon"] = fc_times.size();
  rj["p"] = fit_g.X.cols();
  rj["r"] = fit_g.L.cols();
  rj["n_reps"] = n_reps;
  rj["beta_mean"] = std::vector<double>(beta_mean.data(), beta_mean.data() + beta_mean.size());
  if (!in.beta_true.empty()) rj["beta_true"] = in.beta_true;
  rj["in_sample_mspe"] = *report.in_sample_mspe;
  rj["crps"] = *report.crps;
  rj["waic"] = *report.waic;
  if (report.auc) rj["auc"] = *report.auc;
  if (report.beta_mse) rj["beta_mse"] = *report.beta_mse;
  if (report.out_of_sample_mspe) rj["out_of_sample_mspe"] = *report.out_of_sample_mspe;
  if (holdout_crps) rj["holdout_crps"] = *holdout_crps;
  if (report.forecast_error) {
    rj["forecast_error"] = *report.forecast_error;
    rj["forecast_by_step"] = forecast_by_step;
  }

  FitProduct out;
  out.draws = std::move(draws);
  out.report = report;
  out.report_json = std::move(rj);
  out.fit_rows = std::move(fit_g.labels);
  out.fit_z = std::move(fit_g.z);
  out.in_sample_mean = pred_in;
  return out;
}

inline void cmd_fit(const RunConfig& cfg) {
  const std::string dir = cfg.output_dir();
  std::filesystem::create_directories(dir);
  const TomlTable& t = cfg.toml;

  FitInputs in;
  const std::string obs_path = t.str("fit", "observations", dir + "/observations.csv");
  in.observations = read_observations(obs_path);
  in.observations_hash = detail::file_hash(obs_path);

  const std::string meta_path = t.str("fit", "basis_meta", dir + "/basis.json");
  const std::string l_path = t.str("fit", "l_matrix", dir + "/L.csv");
  const nlohmann::json meta = read_json(meta_path);
  in.L = read_matrix_csv(l_path);
  const auto& row_index = meta.at("row_index");
  if (static_cast<Index>(row_index.size()) != in.L.rows())
    throw SpecError("fit: basis metadata and L row counts disagree");
  in.basis_rows.reserve(row_index.size());
  for (const auto& r : row_index)
    in.basis_rows.push_back({r.at("id").get<std::string>(), r.at("time").get<double>()});

  std::string fc_path = t.str("fit", "forecast_file", "");
  if (fc_path.empty() && std::filesystem::exists(dir + "/forecast_truth.csv"))
    fc_path = dir + "/forecast_truth.csv";
  if (fc_path == "none") fc_path.clear();
  if (!fc_path.empty()) in.forecast = read_observations(fc_path);

  std::string latent_path = t.str("fit", "latent_file", "");
  if (latent_path.empty() && std::filesystem::exists(dir + "/latent.csv"))
    latent_path = dir + "/latent.csv";
  if (latent_path == "none") latent_path.clear();
  if (!latent_path.empty()) in.latent = read_observations(latent_path);

  if (t.has("observation", "beta")) in.beta_true = t.number_array("observation", "beta");

  std::string label = t.str("fit", "label", "");
  if (label.empty()) {
    const std::string cal_path = dir + "/calibration.json";
    label = std::filesystem::exists(cal_path)
                ? read_json(cal_path).at("target").get<std::string>()
                : "fit";
  }
  in.label = label;

  const FitProduct prod = fit_experiment(cfg, in);

  write_draws_csv(dir + "/draws.csv", prod.draws);
  write_json(dir + "/report.json", prod.report_json);
  {
    std::string res = "site_id,time,residual\n";
    for (Index i = 0; i < prod.fit_z.size(); ++i) {
      const RowKey& k = prod.fit_rows[static_cast<std::size_t>(i)];
      res += k.id + "," + format_double(k.time) + "," +
             format_double(prod.fit_z[i] - prod.in_sample_mean[i]) + "\n";
    }
    write_text(dir + "/residuals.csv", res);
  }
  // Wall time lives apart from the deterministic artifacts: every other file
  // must be byte-identical across reruns, a stopwatch can't be.
  {
    nlohmann::json timing;
    timing["command"] = "fit";
    timing["cpu_seconds"] = prod.report.cpu_seconds ? *prod.report.cpu_seconds : 0.0;
    write_json(dir + "/timing.json", timing);
  }

  nlohmann::json details;
  details["family"] = prod.report_json.at("family");
  details["label"] = in.label;
  nlohmann::json dims;
  dims["n_train"] = prod.report_json.at("n_train");
  dims["n_holdout"] = prod.report_json.at("n_holdout");
  dims["n_forecast"] = prod.report_json.at("n_forecast");
  dims["p"] = prod.report_json.at("p");
  dims["r"] = prod.report_json.at("r");
  dims["n_reps"] = prod.report_json.at("n_reps");
  details["dims"] = dims;
  nlohmann::json hyper;
  for (const char* key : {"sigma2_beta", "sigma2_eta", "sigma2_xi", "sigma2_z_prior"}) {
    const HyperParam h = detail::hyper_from(t, "fit", key);
    hyper[key] = {h.range.lo, h.range.hi};
  }
  hyper["alpha_xi"] = t.number("fit", "alpha_xi", 0.001);
  if (t.has("fit", "sigma2_z")) hyper["sigma2_z_fixed"] = t.number("fit", "sigma2_z");
  details["hyper"] = hyper;
  nlohmann::json inputs;
  inputs[obs_path] = in.observations_hash;
  inputs[meta_path] = detail::file_hash(meta_path);
  inputs[l_path] = detail::file_hash(l_path);
  if (!fc_path.empty()) inputs[fc_path] = detail::file_hash(fc_path);
  if (!latent_path.empty()) inputs[latent_path] = detail::file_hash(latent_path);
  details["inputs"] = inputs;
  nlohmann::json outputs;
  for (const char* f : {"draws.csv", "report.json", "residuals.csv"})
    outputs[f] = detail::file_hash(dir + "/" + f);
  details["outputs"] = outputs;
  write_manifest(dir, "fit", cfg, details);
}

// ---------------------------------------------------------------------------
// compare

/// Merges fitted runs into one table, one row per covariance label. Scalar
/// metrics come from the run with the shortest horizon (the longest training
/// window); each k-step forecast column comes from the run whose forecast
/// reaches step k with the most training data behind it.
inline std::string comparison_table(const std::vector<nlohmann::json>& reports,
                                    bool include_timing,
                                    const std::vector<double>& timings = {}) {
  if (reports.size() < 2) throw SpecError("compare: needs at least two fitted runs");
  const std::string family = reports[0].at("family").get<std::string>();
  const std::string data_hash = reports[0].value("observations_hash", "");
  for (const auto& r : reports) {
    if (r.at("family").get<std::string>() != family)
      throw SpecError("compare: runs mix observation families");
    if (r.value("observations_hash", "") != data_hash)
      throw SpecError("compare: runs were fit to different observation data");
  }

  struct Row {
    const nlohmann::json* scalar_source = nullptr;
    std::map<int, double> steps;
    std::map<long long, std::size_t> by_horizon;  // sorted, detects duplicates
    double cpu = 0.0;
  };
  std::vector<std::string> order;
  std::map<std::string, Row> rows;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string label = reports[i].at("label").get<std::string>();
    if (!rows.count(label)) order.push_back(label);
    Row& row = rows[label];
    const long long horizon = reports[i].at("horizon").get<long long>();
    if (row.by_horizon.count(horizon))
      throw SpecError("compare: label '" + label + "' has two runs with horizon " +
                      std::to_string(horizon));
    row.by_horizon[horizon] = i;
  }
  for (auto& [label, row] : rows) {
    // Ascending horizon: the run fit on the most data claims each step first.
    for (const auto& [horizon, i] : row.by_horizon) {
      const auto& r = reports[i];
      if (!row.scalar_source) {
        row.scalar_source = &r;
        row.cpu = include_timing && i < timings.size() ? timings[i] : 0.0;
      }
      if (!r.contains("forecast_by_step")) continue;
      const auto& steps = r.at("forecast_by_step");
      for (std::size_t s = 0; s < steps.size(); ++s)
        row.steps.emplace(static_cast<int>(s) + 1, steps[s].get<double>());
    }
  }

  int max_step = 0;
  for (const auto& [label, row] : rows)
    if (!row.steps.empty()) max_step = std::max(max_step, row.steps.rbegin()->first);

  const std::vector<std::string> scalar_cols = {"in_sample_mspe", "out_of_sample_mspe",
                                                "crps",           "waic",
                                                "auc",            "beta_mse"};
  std::string out = "label,family,n_train";
  for (const std::string& c : scalar_cols) out += "," + c;
  for (int s = 1; s <= max_step; ++s) out += "," + std::to_string(s) + "-step";
  if (include_timing) out += ",cpu_seconds";
  out += "\n";

  for (const std::string& label : order) {
    const Row& row = rows.at(label);
    const nlohmann::json& src = *row.scalar_source;
    out += label + "," + family + "," + std::to_string(src.at("n_train").get<long long>());
    for (const std::string& c : scalar_cols) {
      out += ",";
      if (src.contains(c)) out += format_double(src.at(c).get<double>());
    }
    for (int s = 1; s <= max_step; ++s) {
      out += ",";
      const auto it = row.steps.find(s);
      if (it != row.steps.end()) out += format_double(it->second);
    }
    if (include_timing) out += "," + format_double(row.cpu);
    out += "\n";
  }
  return out;
}

inline void cmd_compare(const RunConfig& cfg) {
  const std::string dir = cfg.output_dir();
  std::filesystem::create_directories(dir);
  const std::vector<std::string> runs = detail::str_array(cfg.toml, "compare", "runs");
  if (runs.size() < 2) throw SpecError("compare: compare.runs must list at least two run dirs");
  const bool include_timing = cfg.toml.boolean("compare", "include_timing", false);

  std::vector<nlohmann::json> reports;
  std::vector<double> timings;
  nlohmann::json inputs;
  for (const std::string& run : runs) {
    const std::string path = run + "/report.json";
    reports.push_back(read_json(path));
    inputs[path] = detail::file_hash(path);
    double cpu = 0.0;
    if (include_timing && std::filesystem::exists(run + "/timing.json"))
      cpu = read_json(run + "/timing.json").at("cpu_seconds").get<double>();
    timings.push_back(cpu);
  }

  const std::string table = comparison_table(reports, include_timing, timings);
  write_text(dir + "/comparison.csv", table);

  nlohmann::json details;
  details["runs"] = runs;
  details["inputs"] = inputs;
  nlohmann::json outputs;
  outputs["comparison.csv"] = detail::file_hash(dir + "/comparison.csv");
  details["outputs"] = outputs;
  write_manifest(dir, "compare", cfg, details);
}

/// Dispatch for the command-line driver. Unknown names are config errors.
inline void run_command(const std::string& name, const RunConfig& cfg) {
  if (name == "simulate") cmd_simulate(cfg);
  else if (name == "basis") cmd_basis(cfg);
  else if (name == "calibrate") cmd_calibrate(cfg);
  else if (name == "fit") cmd_fit(cfg);
  else if (name == "compare") cmd_compare(cfg);
  else throw SpecError("unknown command: " + name);
}

}  // namespace gqncal
