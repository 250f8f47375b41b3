#include <doctest.h>

#include <cmath>

#include "fairsyn/biased_data.hpp"
#include "fairsyn/fairness.hpp"
#include "fairsyn/stage1.hpp"
#include "support/oracles.hpp"

using namespace fairsyn;

namespace {

// Tight inner tolerance for derivative checks; the implicit-function argument
// assumes an exact inner minimizer.
InnerSolveConfig fd_inner() {
  InnerSolveConfig inner;
  inner.gradient_tolerance = 1e-10;
  inner.max_iterations = 500;
  return inner;
}

SyntheticDataset synthetic_from(const Dataset& ds, const Eigen::MatrixXd& xhat,
                                const std::vector<std::pair<int, int>>& pairs) {
  SyntheticDataset syn = SyntheticDataset::like(ds);
  syn.stage = "stage1";
  syn.xhat = xhat;
  syn.pairs = pairs;
  return syn;
}

SyntheticDataset random_synthetic(Rng& rng, const Dataset& real, std::int64_t ns) {
  const PairAssignment assignment = assign_synthetic_pairs(real, ns);
  Eigen::MatrixXd xhat(ns, real.feature_dim());
  for (std::int64_t i = 0; i < ns; ++i) {
    for (Eigen::Index j = 0; j < real.feature_dim(); ++j) xhat(i, j) = rng.gaussian();
  }
  return synthetic_from(real, xhat, assignment.pairs);
}

double fd_hypergradient_check(const Dataset& real, const SyntheticDataset& syn,
                              const PenaltyConfig& cfg) {
  const InnerSolveConfig inner = fd_inner();
  const Eigen::MatrixXd analytic = hypergradient(real, syn, cfg, inner);

  SyntheticDataset probe = syn;
  const auto objective = [&](const Eigen::VectorXd& flat) {
    probe.xhat = Eigen::Map<const Eigen::MatrixXd>(flat.data(), syn.xhat.rows(), syn.xhat.cols());
    return penalty_objective(real, probe, cfg, inner).value;
  };
  const Eigen::Map<const Eigen::VectorXd> flat(syn.xhat.data(), syn.xhat.size());
  const Eigen::VectorXd fd = testing::fd_gradient(objective, flat, 1e-5);
  const Eigen::Map<const Eigen::VectorXd> analytic_flat(analytic.data(), analytic.size());
  return testing::max_rel_error(analytic_flat, fd);
}

}  // namespace

TEST_SUITE("stage1") {

TEST_CASE("penalty objective with rho 0 reduces to the training loss plus regularizer") {
  Rng rng(51);
  const Dataset real = testing::random_dataset(rng, 12, 3);
  const PairAssignment assignment = assign_synthetic_pairs(real, real.size());
  const SyntheticDataset syn = synthetic_from(real, real.features(), assignment.pairs);

  PenaltyConfig cfg;
  cfg.rho_o = 0.0;
  cfg.ns1 = real.size();
  const PenaltyComponents out = penalty_objective(real, syn, cfg, fd_inner());

  CHECK(out.penalty_sp == 0.0);
  CHECK(out.penalty_eo == 0.0);
  CHECK(out.value == doctest::Approx(out.loss_term + out.xhat_reg).epsilon(1e-14));

  // Loss term is the real-data loss of the model trained on syn (= real).
  const Eigen::VectorXd oracle_theta =
      testing::newton_logistic(real.design_matrix(), real.labels_real(), cfg.lambda_theta, 1e-13);
  const LogisticObjective plain(real.design_matrix(), real.labels_real(), 0.0);
  CHECK(out.loss_term == doctest::Approx(plain.value(oracle_theta)).epsilon(1e-8));
}

TEST_CASE("penalty term vanishes when the sensitive attribute is constant") {
  Rng rng(52);
  Eigen::MatrixXd x(8, 2);
  Eigen::VectorXi s = Eigen::VectorXi::Ones(8);
  Eigen::VectorXi y(8);
  for (int i = 0; i < 8; ++i) {
    x(i, 0) = rng.gaussian();
    x(i, 1) = rng.gaussian();
    y[i] = i % 2 == 0 ? 1 : -1;
  }
  const Dataset real(x, s, y, {"f1", "f2"}, "s", "y");
  const SyntheticDataset syn = random_synthetic(rng, real, 8);

  PenaltyConfig cfg;
  cfg.rho_o = 1000.0;
  cfg.ns1 = 8;
  cfg.mode = FairnessMode::SP_PLUS_EO;
  const PenaltyComponents out = penalty_objective(real, syn, cfg, fd_inner());
  CHECK(out.penalty_sp == doctest::Approx(0.0));
  CHECK(out.penalty_eo == doctest::Approx(0.0));
}

TEST_CASE("penalty objective agrees with the straight-line oracle") {
  Rng rng(53);
  const Dataset real = testing::random_dataset(rng, 6, 2);
  const SyntheticDataset syn = random_synthetic(rng, real, 6);

  for (const FairnessMode mode : {FairnessMode::SP, FairnessMode::EO, FairnessMode::SP_PLUS_EO}) {
    PenaltyConfig cfg;
    cfg.rho_o = 42.0;
    cfg.ns1 = 6;
    cfg.mode = mode;
    InnerSolveConfig inner = fd_inner();
    inner.gradient_tolerance = 1e-12;
    const PenaltyComponents got = penalty_objective(real, syn, cfg, inner);
    const double want = testing::penalty_oracle(real, syn, cfg);
    CHECK(got.value == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("sp penalty equals (rho/2) cov_sp^2 of the inner model") {
  Rng rng(54);
  const Dataset real = testing::random_dataset(rng, 10, 3);
  const SyntheticDataset syn = random_synthetic(rng, real, 10);
  PenaltyConfig cfg;
  cfg.rho_o = 10.0;
  cfg.ns1 = 10;
  const PenaltyComponents out = penalty_objective(real, syn, cfg, fd_inner());
  const double cov = covariance_sp(real, ModelParams{out.theta});
  CHECK(out.penalty_sp == doctest::Approx(0.5 * cfg.rho_o * cov * cov).epsilon(1e-10));
}

TEST_CASE("penalty component scales linearly in rho at fixed xhat") {
  Rng rng(55);
  const Dataset real = testing::random_dataset(rng, 10, 3);
  const SyntheticDataset syn = random_synthetic(rng, real, 8);
  PenaltyConfig cfg;
  cfg.rho_o = 25.0;
  cfg.ns1 = 8;
  const PenaltyComponents base = penalty_objective(real, syn, cfg, fd_inner());
  cfg.rho_o *= 4.0;
  const PenaltyComponents scaled = penalty_objective(real, syn, cfg, fd_inner());
  CHECK(scaled.penalty_sp == doctest::Approx(4.0 * base.penalty_sp).epsilon(1e-9));
  CHECK(scaled.loss_term == doctest::Approx(base.loss_term).epsilon(1e-12));
  CHECK(scaled.xhat_reg == doctest::Approx(base.xhat_reg).epsilon(1e-12));
}

TEST_CASE("sp and eo modes coincide at rho 0") {
  Rng rng(56);
  const Dataset real = testing::random_dataset(rng, 9, 3);
  const SyntheticDataset syn = random_synthetic(rng, real, 9);
  PenaltyConfig cfg;
  cfg.rho_o = 0.0;
  cfg.ns1 = 9;
  cfg.mode = FairnessMode::SP;
  const double sp_value = penalty_objective(real, syn, cfg, fd_inner()).value;
  cfg.mode = FairnessMode::EO;
  const double eo_value = penalty_objective(real, syn, cfg, fd_inner()).value;
  CHECK(sp_value == doctest::Approx(eo_value).epsilon(1e-14));
}

TEST_CASE("literal sp+eo doubles the shared terms") {
  Rng rng(57);
  const Dataset real = testing::random_dataset(rng, 10, 3);
  const SyntheticDataset syn = random_synthetic(rng, real, 10);
  PenaltyConfig cfg;
  cfg.rho_o = 5.0;
  cfg.ns1 = 10;
  cfg.mode = FairnessMode::SP_PLUS_EO;
  const PenaltyComponents combined = penalty_objective(real, syn, cfg, fd_inner());
  cfg.literal_sum = true;
  const PenaltyComponents literal = penalty_objective(real, syn, cfg, fd_inner());
  CHECK(combined.shared_weight == 1.0);
  CHECK(literal.shared_weight == 2.0);
  CHECK(literal.value ==
        doctest::Approx(combined.value + combined.loss_term + combined.xhat_reg).epsilon(1e-12));
}

TEST_CASE("hypergradient matches finite differences across modes") {
  Rng rng(58);
  const Dataset real = testing::random_dataset(rng, 20, 3);
  const SyntheticDataset syn = random_synthetic(rng, real, 10);
  for (const FairnessMode mode : {FairnessMode::SP, FairnessMode::EO, FairnessMode::SP_PLUS_EO}) {
    PenaltyConfig cfg;
    cfg.rho_o = 100.0;
    cfg.ns1 = 10;
    cfg.mode = mode;
    CHECK(fd_hypergradient_check(real, syn, cfg) < 1e-4);
  }
}

TEST_CASE("hypergradient with rho 0 is the loss gradient through theta") {
  Rng rng(59);
  const Dataset real = testing::random_dataset(rng, 12, 3);
  const PairAssignment assignment = assign_synthetic_pairs(real, real.size());
  SyntheticDataset syn = synthetic_from(real, real.features(), assignment.pairs);

  PenaltyConfig cfg;
  cfg.rho_o = 0.0;
  cfg.ns1 = real.size();
  cfg.lambda_xhat = 1e-12;  // regularizer negligible against the loss path
  const InnerSolveConfig inner = fd_inner();
  const Eigen::MatrixXd analytic = hypergradient(real, syn, cfg, inner);

  // FD of the real-data loss of the inner model only.
  SyntheticDataset probe = syn;
  const auto loss_of = [&](const Eigen::VectorXd& flat) {
    probe.xhat = Eigen::Map<const Eigen::MatrixXd>(flat.data(), syn.xhat.rows(), syn.xhat.cols());
    return penalty_objective(real, probe, cfg, inner).loss_term;
  };
  const Eigen::Map<const Eigen::VectorXd> flat(syn.xhat.data(), syn.xhat.size());
  const Eigen::VectorXd fd = testing::fd_gradient(loss_of, flat, 1e-5);
  const Eigen::Map<const Eigen::VectorXd> aflat(analytic.data(), analytic.size());
  CHECK(testing::max_rel_error(aflat, fd, 1e-5) < 1e-4);
}

TEST_CASE("hypergradient single synthetic point closed form") {
  // One synthetic point, n = 2: every matrix in the implicit system is small
  // enough to write out by hand.
  Rng rng(60);
  const Dataset real = testing::random_dataset(rng, 6, 2);
  Eigen::MatrixXd xhat(1, 1);
  xhat << 0.7;
  const SyntheticDataset syn = synthetic_from(real, xhat, {{1, 1}});

  PenaltyConfig cfg;
  cfg.rho_o = 50.0;
  cfg.ns1 = 1;
  cfg.mode = FairnessMode::SP;
  const InnerSolveConfig inner = fd_inner();

  const PenaltyComponents solved = penalty_objective(real, syn, cfg, inner);
  const Eigen::VectorXd theta = solved.theta;

  // Inner pieces at theta*, synthetic design a = (xhat, s) with s = 1, y = +1.
  const Eigen::Vector2d a(0.7, 1.0);
  const double z = a.dot(theta);
  const double sig = testing::oracle_sigmoid(z);
  const double w = sig * (1.0 - sig);
  const double r = sig - 1.0;  // y = +1
  const double ridge = cfg.lambda_theta / 4.0;

  const Eigen::Matrix2d hess =
      w * a * a.transpose() + ridge * Eigen::Matrix2d::Identity();
  // Cross partials: d^2 l_r / dtheta dxhat = w * a * theta_x + r * e1.
  const Eigen::Vector2d cross = w * a * theta[0] + r * Eigen::Vector2d(1.0, 0.0);

  // Outer gradient dP/dtheta on the real data.
  const Eigen::VectorXd s_real = real.sensitive().cast<double>();
  const double s_bar = s_real.mean();
  Eigen::Vector2d dp = Eigen::Vector2d::Zero();
  Eigen::Vector2d c_sp = Eigen::Vector2d::Zero();
  for (int i = 0; i < 6; ++i) {
    const Eigen::Vector2d ai(real.features()(i, 0), s_real[i]);
    const double sig_i = testing::oracle_sigmoid(ai.dot(theta));
    dp += (sig_i - 0.5 * (1.0 + real.labels()[i])) * ai / 6.0;
    c_sp += (s_real[i] - s_bar) * ai;
  }
  dp += (cfg.rho_o / 36.0) * c_sp.dot(theta) * c_sp;

  const Eigen::Vector2d dtheta_dx = -hess.inverse() * cross;  // ns1 = 1 drops the 1/ns factor
  const double direct = cfg.lambda_xhat / 4.0 * xhat(0, 0);   // (ns1 * n)^2 = 4
  const double by_hand = dp.dot(dtheta_dx) + direct;

  const Eigen::MatrixXd got = hypergradient(real, syn, cfg, inner);
  CHECK(got(0, 0) == doctest::Approx(by_hand).epsilon(1e-7));
}

TEST_CASE("learn_stage1 baseline early exit is bitwise") {
  Rng rng(61);
  const Dataset real = testing::random_dataset(rng, 15, 3);
  PenaltyConfig cfg;
  cfg.rho_o = 0.0;
  cfg.ns1 = real.size();
  const auto [syn, trace] = learn_stage1(real, cfg, AdamConfig{}, InnerSolveConfig{});
  CHECK(trace.rows.empty());
  CHECK(syn.xhat == real.features());
  REQUIRE(syn.pairs.size() == static_cast<std::size_t>(real.size()));
  for (std::int64_t i = 0; i < real.size(); ++i) {
    CHECK(syn.pairs[i].first == real.sensitive()[i]);
    CHECK(syn.pairs[i].second == real.labels()[i]);
  }
}

TEST_CASE("learn_stage1 reduces the covariance on a biased toy set") {
  BiasSpec spec;
  spec.n_points = 300;
  spec.full_dim = 3;
  const Dataset raw = make_biased_dataset(spec, 7);
  const Dataset real = standardize(raw).first;

  InnerSolveConfig inner;
  AdamConfig adam;

  PenaltyConfig base;
  base.rho_o = 0.0;
  base.ns1 = real.size();
  const auto [syn0, trace0] = learn_stage1(real, base, adam, inner);
  const Eigen::VectorXd theta0 =
      testing::newton_logistic(syn0.design_matrix(), syn0.labels_real(), base.lambda_theta, 1e-12);
  const double cov0 = std::abs(covariance_sp(real, ModelParams{theta0}));

  PenaltyConfig fair = base;
  fair.rho_o = 1000.0;
  fair.k_max = 200;
  const auto [syn1, trace1] = learn_stage1(real, fair, adam, inner);
  const Eigen::VectorXd theta1 =
      testing::newton_logistic(syn1.design_matrix(), syn1.labels_real(), fair.lambda_theta, 1e-12);
  const double cov1 = std::abs(covariance_sp(real, ModelParams{theta1}));

  CHECK(cov1 < cov0);
  CHECK(trace1.rows.size() == 200);
  // Inner tolerance holds on every iteration except the flagged line-search
  // stalls (gradient differences below double resolution), which are counted.
  int above_tolerance = 0;
  for (const Stage1TraceRow& row : trace1.rows) {
    CHECK(std::isfinite(row.objective));
    if (row.inner_gradient_norm > inner.gradient_tolerance) {
      ++above_tolerance;
      CHECK(row.inner_gradient_norm <= 10.0 * inner.gradient_tolerance);
    }
  }
  CHECK(above_tolerance == trace1.inner_failures);
}

TEST_CASE("learn_stage1 with ns1 < N uses stratum-grouped pairs") {
  Rng rng(62);
  const Dataset real = testing::random_dataset(rng, 20, 3);
  PenaltyConfig cfg;
  cfg.rho_o = 1.0;
  cfg.ns1 = 8;
  cfg.k_max = 3;
  cfg.seed = 5;
  const auto [syn, trace] = learn_stage1(real, cfg, AdamConfig{}, InnerSolveConfig{});
  CHECK(syn.size() == 8);
  CHECK(trace.rows.size() == 3);
  const PairAssignment expected = assign_synthetic_pairs(real, 8);
  CHECK(syn.pairs == expected.pairs);

  // Same seed reproduces the same initialization path.
  const auto [syn_b, trace_b] = learn_stage1(real, cfg, AdamConfig{}, InnerSolveConfig{});
  CHECK(syn.xhat == syn_b.xhat);
}

}  // TEST_SUITE
