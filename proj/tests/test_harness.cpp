#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fairsyn/harness.hpp"
#include "fairsyn/linear_model.hpp"
#include "support/oracles.hpp"

using namespace fairsyn;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Small/fast pipeline setup used by the shape and determinism checks.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.bias.n_points = 240;
  cfg.bias.full_dim = 3;
  cfg.clients = 2;
  cfg.seed = 19;
  cfg.rho_grid = {0.0, 50.0};
  cfg.k_max = 5;
  cfg.ns2_settings = {Ns2Setting{1.0, true}, Ns2Setting{0.1, true}};
  return cfg;
}

double baseline_abs_spd(const BiasSpec& spec, std::uint64_t seed) {
  const Dataset ds = standardize(make_biased_dataset(spec, seed)).first;
  const LogisticObjective obj = LogisticObjective::from_dataset(ds, 1e-4);
  InnerSolveConfig cfg;
  cfg.gradient_tolerance = 1e-10;
  cfg.max_iterations = 300;
  auto [theta, rec] = lbfgs_minimize(
      [&obj](const Eigen::VectorXd& t, Eigen::VectorXd& g) { return obj.value_and_gradient(t, g); },
      Eigen::VectorXd::Zero(ds.full_dim()), cfg);
  const auto value = spd(ds, ModelParams{theta});
  REQUIRE(value.has_value());
  return std::abs(*value);
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("biased generator defaults produce a measurably unfair baseline") {
  const BiasSpec spec;
  CHECK(spec.n_points == 2000);
  CHECK(spec.full_dim == 6);
  const Dataset ds = make_biased_dataset(spec, 7);
  CHECK(ds.size() == 2000);
  CHECK(ds.full_dim() == 6);
  CHECK(baseline_abs_spd(spec, 7) >= 0.3);
}

TEST_CASE("unbiased spec is near parity") {
  BiasSpec spec;
  spec.mean_separation = 0.0;
  spec.label_flip_bias = 0.0;
  CHECK(baseline_abs_spd(spec, 7) <= 0.05);
}

TEST_CASE("generator is deterministic and validates degenerate specs") {
  const BiasSpec spec;
  const Dataset a = make_biased_dataset(spec, 11);
  const Dataset b = make_biased_dataset(spec, 11);
  CHECK(a.features() == b.features());
  CHECK(a.sensitive() == b.sensitive());
  CHECK(a.labels() == b.labels());

  BiasSpec degenerate;
  degenerate.mean_separation = 0.0;
  degenerate.label_flip_bias = 0.0;
  degenerate.min_baseline_spd = 0.3;
  CHECK_THROWS(make_biased_dataset(degenerate, 1));
}

TEST_CASE("communication accounting formulas") {
  // K = 2, n = 11, ns2 = 832 per client, t = 100.
  const CommunicationCost cost = communication_cost(2, 11, {832, 832}, 100);
  CHECK(cost.uplink_scalars == 19968);
  CHECK(cost.downlink_scalars == 22);
  CHECK(cost.iterative_fl_scalars == 2200);

  // The 0.1N rule rounds down: floor(0.1 * 8319) = 831.
  const Ns2Setting tenth{0.1, true};
  CHECK(tenth.resolve(8319) == 831);
  const CommunicationCost paper = communication_cost(2, 11, {831, 831}, 100);
  CHECK(paper.uplink_scalars == 19944);
}

TEST_CASE("ns2 settings parse and label") {
  const Ns2Setting pct = parse_ns2_setting("10%");
  CHECK(pct.is_fraction);
  CHECK(pct.value == doctest::Approx(0.1));
  CHECK(pct.label() == "10%");

  const Ns2Setting frac = parse_ns2_setting("0.25");
  CHECK(frac.is_fraction);
  CHECK(frac.resolve(100) == 25);

  const Ns2Setting abs = parse_ns2_setting("832");
  CHECK_FALSE(abs.is_fraction);
  CHECK(abs.resolve(50) == 832);
  CHECK(abs.label() == "832");

  CHECK_THROWS(parse_ns2_setting("-1"));
}

TEST_CASE("run_pipeline produces one row per grid cell with baseline tagging") {
  const ExperimentConfig cfg = tiny_config();
  const PipelineResult result = run_pipeline(cfg);

  // 2 rho values x (1 syn1 row + 2 syn2 rows).
  REQUIRE(result.report.rows.size() == 6);
  CHECK(result.report.rows[0].stage == StageTag::Baseline);
  CHECK(result.report.rows[0].rho == 0.0);
  CHECK(result.report.rows[1].stage == StageTag::Syn2);
  CHECK(result.report.rows[3].stage == StageTag::Syn1);
  CHECK(result.report.rows[3].rho == 50.0);

  for (const RunRow& row : result.report.rows) {
    REQUIRE_FALSE(row.failed);
    CHECK(row.accuracy_pct >= 0.0);
    CHECK(row.accuracy_pct <= 100.0);
    CHECK(row.spd.has_value());
    CHECK(row.server_theta.size() == 3);
  }

  // Uplink accounting: train size is 96 per client (80% of 120).
  const std::int64_t n_train = 96;
  CHECK(result.report.rows[0].comm.uplink_scalars == 2 * n_train * 4);
  CHECK(result.report.rows[1].comm.uplink_scalars == 2 * n_train * 4);      // ns2 = 100%
  CHECK(result.report.rows[2].comm.uplink_scalars == 2 * (n_train / 10) * 4);  // ns2 = 10%
  CHECK(result.report.rows[0].comm.downlink_scalars == 2 * 3);

  // Artifacts: one cell per (client, rho).
  CHECK(result.artifacts.size() == 4);
  for (const ClientCellArtifacts& cell : result.artifacts) {
    CHECK(cell.syn1.stage == "stage1");
    CHECK(cell.syn2.size() == 2);
    CHECK(cell.syn2[0].data.stage == "stage2");
  }
}

TEST_CASE("pipeline is deterministic end to end") {
  const ExperimentConfig cfg = tiny_config();
  const PipelineResult a = run_pipeline(cfg);
  const PipelineResult b = run_pipeline(cfg);
  REQUIRE(a.report.rows.size() == b.report.rows.size());
  for (std::size_t i = 0; i < a.report.rows.size(); ++i) {
    CHECK(a.report.rows[i].accuracy_pct == b.report.rows[i].accuracy_pct);
    CHECK(a.report.rows[i].cov_sp == b.report.rows[i].cov_sp);
    CHECK(a.report.rows[i].spd == b.report.rows[i].spd);
    CHECK(a.report.rows[i].server_theta == b.report.rows[i].server_theta);
  }
}

TEST_CASE("baseline row equals the plain model on pooled real training data") {
  ExperimentConfig cfg = tiny_config();
  cfg.rho_grid = {0.0};
  cfg.dp_enabled = false;
  const PipelineResult result = run_pipeline(cfg);
  REQUIRE(result.report.rows.size() == 1);
  const RunRow& row = result.report.rows[0];
  CHECK(row.stage == StageTag::Baseline);

  // Reconstruct the pooled real training data along the same path.
  const Dataset source = make_biased_dataset(cfg.bias, cfg.seed);
  const auto parts = partition_clients(source, 2, derive_seed(cfg.seed, 1));
  std::vector<Dataset> trains;
  for (int c = 0; c < 2; ++c) {
    auto [train, test] = train_test_split(parts[c], 0.8, derive_seed(cfg.seed, 0x100 + c));
    trains.push_back(standardize(train).first);
  }
  const Dataset pooled = concatenate(trains);
  const LogisticObjective obj = LogisticObjective::from_dataset(pooled, cfg.lambda_theta);
  InnerSolveConfig inner = cfg.inner;
  inner.lambda_theta = cfg.lambda_theta;
  auto [theta, rec] = lbfgs_minimize(
      [&obj](const Eigen::VectorXd& t, Eigen::VectorXd& g) { return obj.value_and_gradient(t, g); },
      Eigen::VectorXd::Zero(pooled.full_dim()), inner);

  REQUIRE(row.server_theta.size() == static_cast<std::size_t>(theta.size()));
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    CHECK(row.server_theta[j] == theta[j]);  // bitwise: identical computation
  }
}

TEST_CASE("emit_report writes tables, trends and manifest deterministically") {
  ExperimentConfig cfg = tiny_config();
  cfg.rho_grid = {0.0, 1.0, 10.0, 100.0, 1000.0};
  cfg.k_max = 2;
  const PipelineResult result = run_pipeline(cfg);

  const fs::path dir = fs::temp_directory_path() / "fairsyn_report_test";
  fs::remove_all(dir);
  emit_report(result.report, dir);

  const std::string tables = read_file(dir / "tables.csv");
  // Header + 5 rho x 3 rows.
  CHECK(std::count(tables.begin(), tables.end(), '\n') == 16);

  CHECK(fs::exists(dir / "trend_syn1.csv"));
  CHECK(fs::exists(dir / "trend_syn2_100p.csv"));
  CHECK(fs::exists(dir / "trend_syn2_10p.csv"));
  const std::string trend = read_file(dir / "trend_syn1.csv");
  CHECK(std::count(trend.begin(), trend.end(), '\n') == 6);  // header + 5 rho

  const std::string manifest = read_file(dir / "manifest.json");
  CHECK(manifest.find("config_digest") != std::string::npos);

  // Byte-identical on re-emission.
  const fs::path dir2 = fs::temp_directory_path() / "fairsyn_report_test2";
  fs::remove_all(dir2);
  emit_report(result.report, dir2);
  CHECK(read_file(dir2 / "tables.csv") == tables);
  CHECK(read_file(dir2 / "manifest.json") == manifest);

  RunReport empty;
  CHECK_THROWS(emit_report(empty, dir));
}

TEST_CASE("report json round-trips") {
  ExperimentConfig cfg = tiny_config();
  cfg.k_max = 2;
  const PipelineResult result = run_pipeline(cfg);
  const fs::path path = fs::temp_directory_path() / "fairsyn_report.json";
  save_report_json(result.report, path);
  const RunReport back = load_report_json(path);
  REQUIRE(back.rows.size() == result.report.rows.size());
  CHECK(back.config_digest == result.report.config_digest);
  CHECK(back.rows[2].accuracy_pct == result.report.rows[2].accuracy_pct);
  CHECK(back.rows[2].server_theta == result.report.rows[2].server_theta);
  CHECK(back.rows[2].comm.uplink_scalars == result.report.rows[2].comm.uplink_scalars);
}

TEST_CASE("config digest tracks meaningful changes") {
  ExperimentConfig a = tiny_config();
  ExperimentConfig b = tiny_config();
  CHECK(a.digest() == b.digest());
  b.rho_grid.push_back(123.0);
  CHECK(a.digest() != b.digest());
  ExperimentConfig c = tiny_config();
  c.seed += 1;
  CHECK(a.digest() != c.digest());
}

TEST_CASE("pipeline validates its config") {
  ExperimentConfig cfg = tiny_config();
  cfg.rho_grid.clear();
  CHECK_THROWS(run_pipeline(cfg));
  ExperimentConfig cfg2 = tiny_config();
  cfg2.clients = 0;
  CHECK_THROWS(run_pipeline(cfg2));
}

}  // TEST_SUITE
