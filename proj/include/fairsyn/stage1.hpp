#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fairsyn/adam.hpp"
#include "fairsyn/dataset.hpp"
#include "fairsyn/lbfgs.hpp"

namespace fairsyn {

enum class FairnessMode { SP, EO, SP_PLUS_EO };

const char* to_string(FairnessMode mode);
FairnessMode fairness_mode_from_string(const std::string& name);

enum class Stage1Init {
  Auto,             // real features when ns1 == N, stratum means otherwise
  FromReal,         // requires ns1 == N
  StratumMeanJitter
};

struct PenaltyConfig {
  double rho_o = 0.0;
  double lambda_xhat = 1e-4;
  double lambda_theta = 1e-4;
  FairnessMode mode = FairnessMode::SP;
  int k_max = 1000;
  std::int64_t ns1 = 0;
  std::uint64_t seed = 0;
  Stage1Init init = Stage1Init::Auto;
  // SP_PLUS_EO only: reproduce the literal sum of both penalty objectives,
  // which counts the shared loss and x-hat regularizer twice. Default keeps
  // the shared terms once.
  bool literal_sum = false;

  void validate(std::int64_t n_real) const;
};

// Synthetic dataset: learned nonsensitive features plus fixed (s, y) pairs.
struct SyntheticDataset {
  Eigen::MatrixXd xhat;                    // size x (n-1)
  std::vector<std::pair<int, int>> pairs;  // (s, y), fixed during stage 1
  std::string stage;                       // "stage1" | "stage2"
  std::uint64_t config_digest = 0;
  int client_index = -1;
  std::vector<std::string> feature_names;
  std::string sensitive_name;
  std::string label_name;

  std::int64_t size() const { return xhat.rows(); }
  Eigen::MatrixXd design_matrix() const;  // rows (xhat_i, s_i)
  Eigen::VectorXd labels_real() const;
  Dataset to_dataset() const;

  static SyntheticDataset like(const Dataset& source);  // copies names only
};

struct PenaltyComponents {
  double value = 0.0;
  double loss_term = 0.0;    // loss of the inner model on the real data
  double penalty_sp = 0.0;   // (rho/(2N^2)) (sum (s-s_bar) a^T theta)^2, 0 if inactive
  double penalty_eo = 0.0;
  double xhat_reg = 0.0;     // (lambda_xhat/(2 (ns1 n)^2)) sum ||xhat_i||^2
  double shared_weight = 1.0;  // multiplies loss_term and xhat_reg in `value`
  Eigen::VectorXd theta;       // inner minimizer
  SolveRecord inner_record;
};

struct Stage1TraceRow {
  int iteration = 0;
  double objective = 0.0;
  double loss_term = 0.0;
  double penalty_sp = 0.0;
  double penalty_eo = 0.0;
  double xhat_reg = 0.0;
  double hypergradient_norm = 0.0;
  int inner_iterations = 0;
  double inner_gradient_norm = 0.0;
};

struct Stage1Trace {
  std::vector<Stage1TraceRow> rows;
  SolveRecord final_inner;
  int inner_failures = 0;
};

void write_trace_csv(const Stage1Trace& trace, const std::filesystem::path& path);

// Penalty objective P(xhat): solves the inner training problem on the
// synthetic data (deterministically, from theta = 0) and evaluates the
// penalized outer objective on the real data.
PenaltyComponents penalty_objective(const Dataset& real, const SyntheticDataset& syn,
                                    const PenaltyConfig& cfg, const InnerSolveConfig& inner);

// Gradient of the penalty objective with respect to every xhat entry,
// returned in xhat's shape. Solves the inner problem, then the implicit-
// differentiation system through the inner Hessian (one adjoint solve).
Eigen::MatrixXd hypergradient(const Dataset& real, const SyntheticDataset& syn,
                              const PenaltyConfig& cfg, const InnerSolveConfig& inner);

// First stage of the pipeline: assigns (s, y) pairs, initializes xhat, and
// runs k_max Adam iterations on the hypergradient. rho_o = 0 with ns1 = N and
// real-feature initialization short-circuits to the real data (the baseline).
std::pair<SyntheticDataset, Stage1Trace> learn_stage1(const Dataset& real,
                                                      const PenaltyConfig& cfg,
                                                      const AdamConfig& adam,
                                                      const InnerSolveConfig& inner);

}  // namespace fairsyn
