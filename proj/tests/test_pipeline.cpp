#include <gqncal/pipeline.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>
#include <string>
#include <vector>

using gqncal::RunConfig;
using gqncal::SpecError;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gqncal_pipeline_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// Small end-to-end setup: 4x4 lattice, 5 observed times, 2 forecast times.
std::string base_config(const std::string& dir, const std::string& extra = "") {
  return "[run]\n"
         "seed = 11\n"
         "output_dir = \"" + dir + "\"\n"
         "[domain]\n"
         "kind = \"lattice\"\n"
         "rows = 4\n"
         "cols = 4\n"
         "[dynamics]\n"
         "T = 5\n"
         "horizon = 2\n"
         "delta_self = 0.005\n"
         "delta_neighbor = 0.007\n"
         "nu = 0.028\n"
         "rho = 3.0\n"
         "gamma0 = 0.01\n"
         "gamma1 = 25.0\n"
         "sigma2_eta = 0.2\n"
         "phi_eta = 15.0\n"
         "sigma2_0 = 0.4\n"
         "phi_0 = 20.0\n"
         "b_structure = \"neighborhood\"\n"
         "[observation]\n"
         "family = \"gaussian\"\n"
         "beta = [1.0]\n"
         "sigma2_z = 0.03\n"
         "[basis]\n"
         "sub_grids = [2, 2]\n"
         "n_temporal = 2\n"
         "n_mc = 50\n"
         "[calibration]\n"
         "R = 20\n"
         "[fit]\n"
         "n_reps = 30\n"
         "sigma2_z = 0.03\n" +
         extra;
}

void run_chain(const RunConfig& cfg) {
  gqncal::cmd_simulate(cfg);
  gqncal::cmd_basis(cfg);
  gqncal::cmd_calibrate(cfg);
  gqncal::cmd_fit(cfg);
}

nlohmann::json report_stub(const std::string& label, int horizon,
                           const std::vector<double>& steps, double in_mspe) {
  nlohmann::json r;
  r["label"] = label;
  r["family"] = "gaussian";
  r["observations_hash"] = "feedc0de";
  r["horizon"] = horizon;
  r["n_train"] = 80;
  r["in_sample_mspe"] = in_mspe;
  r["crps"] = 0.2;
  r["waic"] = 10.0;
  if (!steps.empty()) {
    double total = 0.0;
    for (double s : steps) total += s;
    r["forecast_error"] = total / static_cast<double>(steps.size());
    r["forecast_by_step"] = steps;
  }
  return r;
}

}  // namespace

TEST_CASE("run config requires an explicit seed and output dir", "[pipeline]") {
  const RunConfig no_seed = RunConfig::from_text("[run]\noutput_dir = \"x\"\n");
  CHECK_THROWS_AS(no_seed.seed(), SpecError);
  const RunConfig neg = RunConfig::from_text("[run]\nseed = -4\noutput_dir = \"x\"\n");
  CHECK_THROWS_AS(neg.seed(), SpecError);
  const RunConfig no_dir = RunConfig::from_text("[run]\nseed = 3\n");
  CHECK_THROWS_AS(no_dir.output_dir(), SpecError);
  CHECK(no_dir.seed() == 3);
  CHECK(no_dir.threads() == 1);
}

TEST_CASE("canonical config text is sorted and hash-stable", "[pipeline]") {
  const RunConfig a = RunConfig::from_text("[run]\nseed = 1\n[domain]\nrows = 2\n");
  const RunConfig b = RunConfig::from_text("[domain]\nrows = 2\n[run]\nseed = 1\n");
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  RunConfig c = b;
  c.toml.set_override("run.seed=2");
  CHECK(a.hash() != c.hash());
  CHECK(a.canonical() == "domain.rows = 2\nrun.seed = 1\n");
}

TEST_CASE("simulate writes observation, forecast, and latent tables", "[pipeline]") {
  const std::string dir = scratch("simulate");
  const RunConfig cfg = RunConfig::from_text(base_config(dir));
  gqncal::cmd_simulate(cfg);

  const auto obs = gqncal::read_observations(dir + "/observations.csv");
  REQUIRE(obs.n() == 16 * 5);
  CHECK(obs.covariate_names == std::vector<std::string>{"intercept"});
  CHECK(obs.X.col(0).minCoeff() == 1.0);
  const auto fc = gqncal::read_observations(dir + "/forecast_truth.csv");
  REQUIRE(fc.n() == 16 * 2);
  CHECK(fc.rows.front().time == 5.0);
  CHECK(fc.rows.back().time == 6.0);
  const auto latent = gqncal::read_observations(dir + "/latent.csv");
  CHECK(latent.n() == 16 * 7);
  CHECK(latent.X.cols() == 0);

  const auto manifest = gqncal::read_json(dir + "/manifest_simulate.json");
  CHECK(manifest.at("command") == "simulate");
  CHECK(manifest.at("config_hash") == cfg.hash());
  CHECK(manifest.at("outputs").contains("observations.csv"));
}

TEST_CASE("simulate respects the observation family", "[pipeline]") {
  const std::string dir = scratch("simulate_family");
  RunConfig cfg = RunConfig::from_text(base_config(dir));
  cfg.toml.set_override("observation.family=\"poisson\"");
  cfg.toml.set_override("observation.beta=[0.5]");
  gqncal::cmd_simulate(cfg);
  const auto pois = gqncal::read_observations(dir + "/observations.csv");
  for (gqncal::Index i = 0; i < pois.n(); ++i) {
    CHECK(pois.z[i] >= 0.0);
    CHECK(pois.z[i] == std::floor(pois.z[i]));
  }

  cfg.toml.set_override("observation.family=\"bernoulli\"");
  gqncal::cmd_simulate(cfg);
  const auto bern = gqncal::read_observations(dir + "/observations.csv");
  std::set<double> values(bern.z.data(), bern.z.data() + bern.z.size());
  for (double v : values) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("the full command chain produces a scored report", "[pipeline]") {
  const std::string dir = scratch("chain");
  const RunConfig cfg =
      RunConfig::from_text(base_config(dir, "holdout_fraction = 0.25\n"));
  run_chain(cfg);

  const auto report = gqncal::read_json(dir + "/report.json");
  CHECK(report.at("label") == "gqn");  // picked up from calibration.json
  CHECK(report.at("family") == "gaussian");
  CHECK(report.at("scoring_target") == "latent");
  // floor(0.25 * 16) = 4 held-out sites at each of the 5 training times
  CHECK(report.at("n_train").get<int>() == 60);
  CHECK(report.at("n_holdout").get<int>() == 20);
  CHECK(report.at("n_forecast").get<int>() == 32);
  CHECK(report.at("horizon").get<int>() == 2);
  CHECK(report.at("forecast_by_step").size() == 2);
  CHECK(report.at("in_sample_mspe").get<double>() >= 0.0);
  CHECK(report.at("out_of_sample_mspe").get<double>() >= 0.0);
  CHECK(report.at("beta_mse").get<double>() >= 0.0);
  CHECK(report.at("beta_mean").size() == 1);
  CHECK_FALSE(report.contains("auc"));  // gaussian data

  const auto residuals = gqncal::read_text(dir + "/residuals.csv");
  CHECK(residuals.rfind("site_id,time,residual\n", 0) == 0);
  CHECK(std::count(residuals.begin(), residuals.end(), '\n') == 61);

  const auto draws = gqncal::read_text(dir + "/draws.csv");
  CHECK(draws.rfind("replicate,block,index,value\n", 0) == 0);
  CHECK(fs::exists(dir + "/timing.json"));
  CHECK(fs::exists(dir + "/manifest_fit.json"));
}

TEST_CASE("reruns with the same config are byte-identical", "[pipeline]") {
  const std::string dir = scratch("rerun");
  const RunConfig cfg = RunConfig::from_text(base_config(dir));
  run_chain(cfg);
  const std::vector<std::string> artifacts = {
      "observations.csv", "forecast_truth.csv", "latent.csv", "basis.csv", "basis.json",
      "K.csv",            "K_sqrt.csv",         "L.csv",      "draws.csv", "report.json",
      "residuals.csv",    "calibration.json",   "manifest_fit.json"};
  std::map<std::string, std::string> first;
  for (const auto& f : artifacts) first[f] = gqncal::read_text(dir + "/" + f);
  run_chain(cfg);
  for (const auto& f : artifacts) CHECK(first.at(f) == gqncal::read_text(dir + "/" + f));
}

TEST_CASE("changing the seed changes the data but not the schema", "[pipeline]") {
  const std::string dir = scratch("reseed");
  const RunConfig cfg = RunConfig::from_text(base_config(dir));
  gqncal::cmd_simulate(cfg);
  const std::string obs1 = gqncal::read_text(dir + "/observations.csv");
  RunConfig other = cfg;
  other.toml.set_override("run.seed=12");
  gqncal::cmd_simulate(other);
  const std::string obs2 = gqncal::read_text(dir + "/observations.csv");
  CHECK(obs1 != obs2);
  CHECK(obs1.substr(0, obs1.find('\n')) == obs2.substr(0, obs2.find('\n')));
}

TEST_CASE("fit horizon keeps only the first forecast steps", "[pipeline]") {
  const std::string dir = scratch("horizon");
  const RunConfig cfg = RunConfig::from_text(base_config(dir));
  gqncal::cmd_simulate(cfg);
  gqncal::cmd_basis(cfg);
  gqncal::cmd_calibrate(cfg);

  RunConfig one = cfg;
  one.toml.set_override("fit.horizon=1");
  gqncal::cmd_fit(one);
  const auto report = gqncal::read_json(dir + "/report.json");
  CHECK(report.at("horizon").get<int>() == 1);
  CHECK(report.at("n_forecast").get<int>() == 16);
  CHECK(report.at("forecast_by_step").size() == 1);

  RunConfig over = cfg;
  over.toml.set_override("fit.horizon=3");
  CHECK_THROWS_AS(gqncal::cmd_fit(over), SpecError);
}

TEST_CASE("max_time moves later observations into the forecast set", "[pipeline]") {
  const std::string dir = scratch("max_time");
  const RunConfig cfg = RunConfig::from_text(base_config(dir));
  gqncal::cmd_simulate(cfg);
  gqncal::cmd_basis(cfg);
  gqncal::cmd_calibrate(cfg);

  RunConfig split = cfg;
  split.toml.set_override("fit.max_time=2.0");
  gqncal::cmd_fit(split);
  const auto report = gqncal::read_json(dir + "/report.json");
  // times 0..2 train; observed 3,4 plus simulated forecast 5,6 are scored
  CHECK(report.at("n_train").get<int>() == 48);
  CHECK(report.at("n_forecast").get<int>() == 64);
  CHECK(report.at("horizon").get<int>() == 4);

  // pointing the forecast file at the training data must be rejected
  RunConfig overlap = cfg;
  overlap.toml.set_override("fit.forecast_file=\"" + dir + "/observations.csv\"");
  CHECK_THROWS_AS(gqncal::cmd_fit(overlap), SpecError);
}

TEST_CASE("time-varying fits expand one coefficient block per time", "[pipeline]") {
  const std::string dir = scratch("time_varying");
  const RunConfig base = RunConfig::from_text(base_config(dir, "time_varying = true\n"));
  gqncal::cmd_simulate(base);
  gqncal::cmd_basis(base);
  gqncal::cmd_calibrate(base);
  gqncal::cmd_fit(base);
  const auto report = gqncal::read_json(dir + "/report.json");
  CHECK(report.at("beta_mean").size() == 5);  // p=1 times 5 training times
  CHECK_FALSE(report.contains("beta_mse"));   // true beta has no per-time layout
  CHECK(report.at("forecast_by_step").size() == 2);  // future rows clamp to the last block
}

TEST_CASE("scoring falls back to observed values without a latent file", "[pipeline]") {
  const std::string dir = scratch("observed_scoring");
  const RunConfig cfg = RunConfig::from_text(base_config(dir));
  run_chain(cfg);
  const auto latent_report = gqncal::read_json(dir + "/report.json");
  CHECK(latent_report.at("scoring_target") == "latent");

  RunConfig observed = cfg;
  observed.toml.set_override("fit.latent_file=\"none\"");
  gqncal::cmd_fit(observed);
  const auto observed_report = gqncal::read_json(dir + "/report.json");
  CHECK(observed_report.at("scoring_target") == "observed");
  // observed targets carry measurement noise, so the fit cannot look better
  CHECK(observed_report.at("in_sample_mspe").get<double>() >=
        latent_report.at("in_sample_mspe").get<double>());

  RunConfig impossible = cfg;
  impossible.toml.set_override("fit.latent_file=\"none\"");
  impossible.toml.set_override("fit.scoring_target=\"latent\"");
  CHECK_THROWS_AS(gqncal::cmd_fit(impossible), SpecError);
}

TEST_CASE("compare merges run labels across horizons", "[pipeline]") {
  // the 3-horizon run appears first; ascending-horizon fill must still let
  // the 1- and 2-horizon runs (more training data) claim their steps
  const std::vector<nlohmann::json> reports = {
      report_stub("gqn", 3, {0.31, 0.32, 0.33}, 0.13),
      report_stub("gqn", 1, {0.11}, 0.11),
      report_stub("gqn", 2, {0.21, 0.22}, 0.12),
      report_stub("var1", 1, {0.41}, 0.2),
  };
  const std::string table = gqncal::comparison_table(reports, false);
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < table.size()) {
    const auto nl = table.find('\n', pos);
    lines.push_back(table.substr(pos, nl - pos));
    pos = nl + 1;
  }
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] ==
        "label,family,n_train,in_sample_mspe,out_of_sample_mspe,crps,waic,auc,beta_mse,"
        "1-step,2-step,3-step");
  // scalars from the horizon-1 run, steps 1/2/3 from horizon 1/2/3
  CHECK(lines[1].rfind("gqn,gaussian,80,0.11,,0.2,10,,,0.11,0.22,0.33", 0) == 0);
  CHECK(lines[2].rfind("var1,gaussian,80,0.2,,0.2,10,,,0.41,,", 0) == 0);
}

TEST_CASE("compare rejects incompatible runs", "[pipeline]") {
  auto a = report_stub("gqn", 1, {0.1}, 0.1);
  auto b = report_stub("var1", 1, {0.2}, 0.2);
  CHECK_THROWS_AS(gqncal::comparison_table({a}, false), SpecError);

  auto wrong_family = b;
  wrong_family["family"] = "poisson";
  CHECK_THROWS_AS(gqncal::comparison_table({a, wrong_family}, false), SpecError);

  auto wrong_data = b;
  wrong_data["observations_hash"] = "0000beef";
  CHECK_THROWS_AS(gqncal::comparison_table({a, wrong_data}, false), SpecError);

  auto duplicate = report_stub("gqn", 1, {0.3}, 0.3);
  CHECK_THROWS_AS(gqncal::comparison_table({a, b, duplicate}, false), SpecError);
}

TEST_CASE("compare command writes the merged table from run dirs", "[pipeline]") {
  const std::string gqn_dir = scratch("cmp_gqn");
  const RunConfig gqn_cfg = RunConfig::from_text(base_config(gqn_dir));
  run_chain(gqn_cfg);

  const std::string var_dir = scratch("cmp_var1");
  RunConfig var_cfg = RunConfig::from_text(base_config(var_dir));
  var_cfg.toml.set_override("calibration.target=\"var1\"");
  // same data: fit the var1 calibration against the gqn run's simulated files
  gqncal::cmd_basis(var_cfg);
  var_cfg.toml.set_override("calibration.basis=\"" + var_dir + "/basis.csv\"");
  gqncal::cmd_calibrate(var_cfg);
  var_cfg.toml.set_override("fit.observations=\"" + gqn_dir + "/observations.csv\"");
  var_cfg.toml.set_override("fit.forecast_file=\"" + gqn_dir + "/forecast_truth.csv\"");
  var_cfg.toml.set_override("fit.latent_file=\"" + gqn_dir + "/latent.csv\"");
  gqncal::cmd_fit(var_cfg);

  const std::string cmp_dir = scratch("cmp_out");
  RunConfig cmp_cfg = RunConfig::from_text(base_config(cmp_dir));
  cmp_cfg.toml.set_override("compare.runs=[\"" + gqn_dir + "\",\"" + var_dir + "\"]");
  gqncal::cmd_compare(cmp_cfg);

  const std::string table = gqncal::read_text(cmp_dir + "/comparison.csv");
  CHECK(table.find("gqn,gaussian,") != std::string::npos);
  CHECK(table.find("var1,gaussian,") != std::string::npos);
  CHECK(table.find("cpu_seconds") == std::string::npos);

  cmp_cfg.toml.set_override("compare.include_timing=true");
  gqncal::cmd_compare(cmp_cfg);
  CHECK(gqncal::read_text(cmp_dir + "/comparison.csv").find("cpu_seconds") !=
        std::string::npos);
}

TEST_CASE("config mistakes are reported as spec errors", "[pipeline]") {
  const std::string dir = scratch("config_errors");
  RunConfig bad_family = RunConfig::from_text(base_config(dir));
  bad_family.toml.set_override("observation.family=\"gamma\"");
  CHECK_THROWS_AS(gqncal::cmd_simulate(bad_family), SpecError);

  RunConfig bad_kind = RunConfig::from_text(base_config(dir));
  bad_kind.toml.set_override("domain.kind=\"hexes\"");
  CHECK_THROWS_AS(gqncal::cmd_simulate(bad_kind), SpecError);

  RunConfig bad_fraction = RunConfig::from_text(base_config(dir));
  gqncal::cmd_simulate(bad_fraction);
  gqncal::cmd_basis(bad_fraction);
  gqncal::cmd_calibrate(bad_fraction);
  bad_fraction.toml.set_override("fit.holdout_fraction=1.0");
  CHECK_THROWS_AS(gqncal::cmd_fit(bad_fraction), SpecError);

  RunConfig no_runs = RunConfig::from_text(base_config(dir));
  CHECK_THROWS_AS(gqncal::cmd_compare(no_runs), SpecError);

  RunConfig bad_r = RunConfig::from_text(base_config(dir));
  bad_r.toml.set_override("calibration.R=1");
  CHECK_THROWS_AS(gqncal::cmd_calibrate(bad_r), SpecError);
}

TEST_CASE("colliding sub-grid corners are caught at calibration", "[pipeline]") {
  // two endpoint-inclusive grids share their four corners; with one shared
  // bandwidth the duplicated knots give identical columns, and the
  // rank-deficient basis must be rejected rather than silently inverted
  const std::string dir = scratch("rank");
  RunConfig cfg = RunConfig::from_text(base_config(dir));
  cfg.toml.set_override("basis.sub_grids=[2,2,3,3]");
  gqncal::cmd_simulate(cfg);
  gqncal::cmd_basis(cfg);
  CHECK_THROWS_AS(gqncal::cmd_calibrate(cfg), gqncal::NumericError);
}
