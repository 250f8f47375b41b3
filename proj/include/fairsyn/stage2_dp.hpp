#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fairsyn/stage1.hpp"

namespace fairsyn {

struct BudgetSplit {
  double counts = 1.0 / 3.0;
  double means = 1.0 / 3.0;
  double covariances = 1.0 / 3.0;
};

struct DpConfig {
  double epsilon = 3.0;
  double delta = 1e-5;
  std::int64_t ns2 = 0;
  double clip_bound = 3.0;  // per-feature absolute bound B on standardized features
  BudgetSplit budget_split;
  std::uint64_t seed = 0;
  // Test-only: releases exact statistics so mechanism plumbing can be checked
  // separately from the noise. The ledger is marked when this is set.
  bool zero_noise_for_tests = false;

  void validate() const;
};

struct LedgerEntry {
  std::string mechanism;  // e.g. "mean/s1y+1"
  double sensitivity = 0.0;
  double sigma = 0.0;
  double eps_share = 0.0;
  double delta_share = 0.0;
};

// Record of every Gaussian-mechanism invocation; totals compose linearly
// (basic composition) and must stay within the configured budget.
struct PrivacyLedger {
  std::vector<LedgerEntry> entries;
  std::string adjacency = "replace-one (fixed stratum membership; sensitivities use true counts)";
  bool noise_disabled = false;

  double total_epsilon() const;
  double total_delta() const;
};

void write_ledger_json(const PrivacyLedger& ledger, const DpConfig& cfg,
                       const std::filesystem::path& path);

// sigma = sensitivity * sqrt(2 ln(1.25/delta)) / eps; the classical Gaussian
// mechanism calibration, valid for eps <= 1.
double gaussian_noise_scale(double sensitivity, double eps_share, double delta_share);

// Nearest symmetric PSD matrix with eigenvalues floored at `eigen_floor`.
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m, double eigen_floor);

// Per-stratum released statistics, kept client-side for audit and tests.
struct StratumRelease {
  int stratum = 0;
  std::int64_t true_count = 0;
  double noisy_count = 0.0;
  Eigen::VectorXd mean;            // released (noisy) clipped mean
  Eigen::MatrixXd covariance;      // released (noisy) clipped sample covariance
  Eigen::MatrixXd covariance_psd;  // projected; what the sampler draws from
};

struct DpGenerationResult {
  SyntheticDataset data;
  PrivacyLedger ledger;
  std::vector<StratumRelease> releases;
};

// Default second-stage generator: stratified Gaussian release. Clips features
// to [-B, B], releases noisy per-stratum counts/means/covariances under the
// configured budget split, then samples ns2 points from the released
// statistics (stratum allocation by largest remainder over the noisy counts).
DpGenerationResult generate_dp(const SyntheticDataset& syn1, const DpConfig& cfg);

// Any generator with this shape (and ledger totals within budget) can be
// swapped in behind the harness.
using DpGenerator = std::function<DpGenerationResult(const SyntheticDataset&, const DpConfig&)>;

// Recomputes every sigma from its (sensitivity, eps, delta) shares and checks
// the totals against the budget; true iff everything matches within 1e-9.
bool ledger_verify(const PrivacyLedger& ledger, const DpConfig& cfg);

}  // namespace fairsyn
