#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairsyn/adam.hpp"
#include "fairsyn/biased_data.hpp"
#include "fairsyn/dataset.hpp"
#include "fairsyn/fairness.hpp"
#include "fairsyn/lbfgs.hpp"
#include "fairsyn/stage1.hpp"
#include "fairsyn/stage2_dp.hpp"

namespace fairsyn {

// Second-stage output size, either absolute or a fraction of the client's
// training size (fractions round down).
struct Ns2Setting {
  double value = 1.0;
  bool is_fraction = true;

  std::int64_t resolve(std::int64_t n) const;
  std::string label() const;  // "100%", "10%", or the absolute count
};

Ns2Setting parse_ns2_setting(const std::string& text);

struct ExperimentConfig {
  // Data source: a CSV path with a schema, or the seeded biased generator.
  std::string dataset_path;
  ColumnSchema schema;
  BiasSpec bias;
  bool add_intercept = false;

  int clients = 2;
  double train_fraction = 0.8;
  std::uint64_t seed = 7;

  std::vector<double> rho_grid = {0.0, 10.0, 100.0, 1000.0, 10000.0};
  FairnessMode mode = FairnessMode::SP;
  bool literal_sum = false;
  double lambda_xhat = 1e-4;
  double lambda_theta = 1e-4;
  int k_max = 1000;
  double ns1_fraction = 1.0;  // ns1 = N when 1, floor(fraction * N) otherwise
  Stage1Init init = Stage1Init::Auto;

  AdamConfig adam;
  InnerSolveConfig inner;

  bool dp_enabled = true;
  double dp_epsilon = 3.0;
  double dp_delta = 1e-5;
  double dp_clip_bound = 3.0;
  BudgetSplit dp_split;
  std::vector<Ns2Setting> ns2_settings = {{1.0, true}, {0.1, true}};

  int fl_rounds = 100;  // t in the iterative-FL communication comparison
  std::string output_dir = "out";
  int max_workers = 0;  // 0 means one worker per client

  void validate() const;
  std::string canonical() const;  // key=value serialization used for digests
  std::uint64_t digest() const;
};

std::uint64_t fnv1a64(const std::string& text);

// Scalar-count accounting for the one-shot protocol vs t rounds of
// parameter exchange.
struct CommunicationCost {
  std::int64_t uplink_scalars = 0;    // sum over clients of |D_c| = size * (n+1)
  std::int64_t downlink_scalars = 0;  // K * n
  std::int64_t iterative_fl_scalars = 0;  // K * t * n
};

CommunicationCost communication_cost(int clients, Eigen::Index full_dim,
                                     const std::vector<std::int64_t>& uplink_sizes, int t_rounds);

enum class StageTag { Baseline, Syn1, Syn2 };
const char* to_string(StageTag tag);

struct RunRow {
  double rho = 0.0;
  StageTag stage = StageTag::Syn1;
  std::string ns2_label = "-";
  bool failed = false;
  std::string error;

  double accuracy_pct = 0.0;
  double cov_sp = 0.0;
  double cov_eo = 0.0;
  std::optional<double> spd;  // signed; |.| derived at the reporting layer
  std::optional<double> eod;
  CommunicationCost comm;
  std::vector<double> server_theta;
};

struct RunReport {
  std::vector<RunRow> rows;
  std::string mode;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  std::string config_canonical;
  std::int64_t dataset_rows = 0;
  Eigen::Index full_dim = 0;
};

// Per-(client, rho) artifacts kept for file emission and audits.
struct ClientCellArtifacts {
  int client = -1;
  double rho = 0.0;
  bool failed = false;
  std::string error;
  Stage1Trace trace;
  SyntheticDataset syn1;
  struct Syn2Item {
    std::string label;
    SyntheticDataset data;
    PrivacyLedger ledger;
  };
  std::vector<Syn2Item> syn2;
};

struct PipelineResult {
  RunReport report;
  std::vector<ClientCellArtifacts> artifacts;  // client-major, rho-minor
};

// Runs Algorithm's client stages per client (concurrently, one worker per
// client) and the one-shot server training, then evaluates every grid cell
// on the pooled client test data. A custom second-stage generator may be
// supplied; the default is the stratified Gaussian release.
PipelineResult run_pipeline(const ExperimentConfig& cfg,
                            const DpGenerator& generator = generate_dp);

// Writes tables.csv, per-series trend CSVs and manifest.json under dir.
void emit_report(const RunReport& report, const std::filesystem::path& dir);

// Round-trip of the full report for the `report` CLI subcommand.
void save_report_json(const RunReport& report, const std::filesystem::path& path);
RunReport load_report_json(const std::filesystem::path& path);

}  // namespace fairsyn
