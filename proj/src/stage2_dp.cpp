#include "fairsyn/stage2_dp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "fairsyn/rng.hpp"

namespace fairsyn {

namespace {

constexpr double kEigenFloor = 1e-6;

const char* stratum_name(int k) {
  switch (k) {
    case 0: return "s0y-1";
    case 1: return "s0y+1";
    case 2: return "s1y-1";
    case 3: return "s1y+1";
  }
  return "?";
}

}  // namespace

void DpConfig::validate() const {
  if (epsilon <= 0.0) throw std::invalid_argument("dp config: epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("dp config: delta outside (0,1)");
  if (ns2 < 1) throw std::invalid_argument("dp config: ns2 must be >= 1");
  if (clip_bound <= 0.0) throw std::invalid_argument("dp config: clip bound must be > 0");
  const double sum = budget_split.counts + budget_split.means + budget_split.covariances;
  if (budget_split.counts <= 0.0 || budget_split.means <= 0.0 ||
      budget_split.covariances <= 0.0 || std::abs(sum - 1.0) > 1e-12) {
    throw std::invalid_argument("dp config: budget split must be positive and sum to 1");
  }
}

double PrivacyLedger::total_epsilon() const {
  double total = 0.0;
  for (const LedgerEntry& e : entries) total += e.eps_share;
  return total;
}

double PrivacyLedger::total_delta() const {
  double total = 0.0;
  for (const LedgerEntry& e : entries) total += e.delta_share;
  return total;
}

double gaussian_noise_scale(double sensitivity, double eps_share, double delta_share) {
  if (sensitivity <= 0.0) throw std::invalid_argument("gaussian mechanism: sensitivity <= 0");
  if (!(delta_share > 0.0 && delta_share < 1.0)) {
    throw std::invalid_argument("gaussian mechanism: delta share outside (0,1)");
  }
  if (eps_share <= 0.0) throw std::invalid_argument("gaussian mechanism: eps share <= 0");
  if (eps_share > 1.0) {
    throw std::invalid_argument(
        "gaussian mechanism: eps share > 1 invalidates the classical calibration; split the "
        "budget across more mechanisms or lower epsilon");
  }
  return sensitivity * std::sqrt(2.0 * std::log(1.25 / delta_share)) / eps_share;
}

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m, double eigen_floor) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw std::runtime_error("project_psd: eigensolver failed");
  Eigen::VectorXd values = eig.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = std::max(values[i], eigen_floor);
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

DpGenerationResult generate_dp(const SyntheticDataset& syn1, const DpConfig& cfg) {
  cfg.validate();
  if (syn1.size() == 0) throw std::invalid_argument("generate_dp: empty input");

  const Eigen::Index dim = syn1.xhat.cols();  // n - 1
  const double b = cfg.clip_bound;

  // Per-kind budget, split evenly over the four strata. Shares are validated
  // before anything is released.
  const double eps_count = cfg.epsilon * cfg.budget_split.counts / 4.0;
  const double eps_mean = cfg.epsilon * cfg.budget_split.means / 4.0;
  const double eps_cov = cfg.epsilon * cfg.budget_split.covariances / 4.0;
  const double delta_count = cfg.delta * cfg.budget_split.counts / 4.0;
  const double delta_mean = cfg.delta * cfg.budget_split.means / 4.0;
  const double delta_cov = cfg.delta * cfg.budget_split.covariances / 4.0;
  for (const double eps : {eps_count, eps_mean, eps_cov}) {
    if (eps > 1.0) {
      throw std::invalid_argument(
          "generate_dp: per-mechanism eps share exceeds 1; infeasible budget");
    }
  }

  // Group input rows by stratum.
  std::array<std::vector<std::int64_t>, 4> members;
  for (std::int64_t i = 0; i < syn1.size(); ++i) {
    members[StratumProportions::index_of(syn1.pairs[i].first, syn1.pairs[i].second)].push_back(i);
  }

  Rng rng(derive_seed(cfg.seed, 0xd9b2));
  const double noise_on = cfg.zero_noise_for_tests ? 0.0 : 1.0;

  DpGenerationResult result;
  result.ledger.noise_disabled = cfg.zero_noise_for_tests;

  auto release = [&](const std::string& kind, int stratum, double sensitivity, double eps,
                     double delta_share) {
    const double sigma = gaussian_noise_scale(sensitivity, eps, delta_share);
    result.ledger.entries.push_back(
        LedgerEntry{kind + "/" + stratum_name(stratum), sensitivity, sigma, eps, delta_share});
    return sigma * noise_on;
  };

  // Noisy counts: every stratum, empty or not (membership is treated as
  // private). Sensitivity 1 per stratum count under replace-one adjacency.
  std::array<double, 4> noisy_counts{};
  for (int k = 0; k < 4; ++k) {
    const double sigma = release("count", k, 1.0, eps_count, delta_count);
    noisy_counts[k] = static_cast<double>(members[k].size()) + sigma * rng.gaussian();
  }

  // Noisy means and covariances of the clipped features, nonempty strata only;
  // shares for empty strata stay unspent.
  std::array<bool, 4> has_stats{};
  std::array<Eigen::VectorXd, 4> means;
  std::array<Eigen::MatrixXd, 4> covs;
  for (int k = 0; k < 4; ++k) {
    const std::int64_t m = static_cast<std::int64_t>(members[k].size());
    if (m == 0) continue;
    has_stats[k] = true;

    Eigen::MatrixXd clipped(m, dim);
    for (std::int64_t r = 0; r < m; ++r) {
      clipped.row(r) = syn1.xhat.row(members[k][r]).cwiseMax(-b).cwiseMin(b);
    }
    const Eigen::VectorXd sample_mean = clipped.colwise().mean();
    const Eigen::MatrixXd centered = clipped.rowwise() - sample_mean.transpose();
    const Eigen::MatrixXd sample_cov =
        centered.transpose() * centered / static_cast<double>(m);

    const double mean_sens =
        2.0 * b * std::sqrt(static_cast<double>(dim)) / static_cast<double>(m);
    const double sigma_mean = release("mean", k, mean_sens, eps_mean, delta_mean);
    Eigen::VectorXd mean = sample_mean;
    for (Eigen::Index j = 0; j < dim; ++j) mean[j] += sigma_mean * rng.gaussian();

    const double cov_sens =
        2.0 * b * b * static_cast<double>(dim) / static_cast<double>(m);
    const double sigma_cov = release("cov", k, cov_sens, eps_cov, delta_cov);
    Eigen::MatrixXd cov = sample_cov;
    // Symmetric noise: one draw per upper-triangle entry.
    for (Eigen::Index r = 0; r < dim; ++r) {
      for (Eigen::Index c = r; c < dim; ++c) {
        const double noise = sigma_cov * rng.gaussian();
        cov(r, c) += noise;
        if (c != r) cov(c, r) += noise;
      }
    }

    StratumRelease rel;
    rel.stratum = k;
    rel.true_count = m;
    rel.noisy_count = noisy_counts[k];
    rel.mean = mean;
    rel.covariance = cov;
    rel.covariance_psd = project_psd(cov, kEigenFloor);
    means[k] = std::move(mean);
    covs[k] = rel.covariance_psd;
    result.releases.push_back(std::move(rel));
  }

  // Stratum distribution from the noisy counts: clamp negatives, renormalize;
  // all-zero mass falls back to uniform over the nonempty input strata.
  std::vector<double> mass(4, 0.0);
  double mass_total = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (!has_stats[k]) continue;  // nothing to sample from
    mass[k] = std::max(0.0, noisy_counts[k]);
    mass_total += mass[k];
  }
  if (mass_total <= 0.0) {
    for (int k = 0; k < 4; ++k) mass[k] = has_stats[k] ? 1.0 : 0.0;
  }

  const std::vector<std::int64_t> alloc = largest_remainder(mass, cfg.ns2);

  SyntheticDataset out = syn1;  // copies names
  out.stage = "stage2";
  out.xhat.resize(cfg.ns2, dim);
  out.pairs.clear();
  out.pairs.reserve(cfg.ns2);

  std::int64_t row = 0;
  for (int k = 0; k < 4; ++k) {
    if (alloc[k] == 0) continue;
    const auto [s, y] = StratumProportions::pair_of(k);
    const Eigen::LLT<Eigen::MatrixXd> llt(covs[k]);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("generate_dp: projected covariance not PD");
    }
    const Eigen::MatrixXd chol = llt.matrixL();
    Eigen::VectorXd draw(dim);
    for (std::int64_t i = 0; i < alloc[k]; ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) draw[j] = rng.gaussian();
      out.xhat.row(row) = (means[k] + chol * draw).cwiseMax(-b).cwiseMin(b);
      out.pairs.emplace_back(s, y);
      ++row;
    }
  }

  result.data = std::move(out);

  if (result.ledger.total_epsilon() > cfg.epsilon + 1e-9 ||
      result.ledger.total_delta() > cfg.delta + 1e-15) {
    throw std::logic_error("generate_dp: ledger exceeded budget");
  }
  return result;
}

bool ledger_verify(const PrivacyLedger& ledger, const DpConfig& cfg) {
  double eps_total = 0.0;
  double delta_total = 0.0;
  for (const LedgerEntry& e : ledger.entries) {
    if (e.sensitivity <= 0.0 || e.eps_share <= 0.0 || e.eps_share > 1.0 ||
        !(e.delta_share > 0.0 && e.delta_share < 1.0)) {
      return false;
    }
    const double expected = gaussian_noise_scale(e.sensitivity, e.eps_share, e.delta_share);
    if (std::abs(expected - e.sigma) > 1e-9) return false;
    eps_total += e.eps_share;
    delta_total += e.delta_share;
  }
  return eps_total <= cfg.epsilon + 1e-9 && delta_total <= cfg.delta + 1e-15;
}

void write_ledger_json(const PrivacyLedger& ledger, const DpConfig& cfg,
                       const std::filesystem::path& path) {
  nlohmann::ordered_json doc;
  doc["adjacency"] = ledger.adjacency;
  doc["composition"] = "basic";
  doc["noise_disabled_for_tests"] = ledger.noise_disabled;
  doc["budget"] = {{"epsilon", cfg.epsilon}, {"delta", cfg.delta}};
  doc["totals"] = {{"epsilon", ledger.total_epsilon()}, {"delta", ledger.total_delta()}};
  doc["mechanisms"] = nlohmann::ordered_json::array();
  for (const LedgerEntry& e : ledger.entries) {
    doc["mechanisms"].push_back({{"mechanism", e.mechanism},
                                 {"l2_sensitivity", e.sensitivity},
                                 {"sigma", e.sigma},
                                 {"eps_share", e.eps_share},
                                 {"delta_share", e.delta_share}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_ledger_json: cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace fairsyn
