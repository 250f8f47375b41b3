#include "fairsyn/stage1.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "fairsyn/linear_model.hpp"
#include "fairsyn/rng.hpp"

namespace fairsyn {

const char* to_string(FairnessMode mode) {
  switch (mode) {
    case FairnessMode::SP: return "sp";
    case FairnessMode::EO: return "eo";
    case FairnessMode::SP_PLUS_EO: return "sp+eo";
  }
  return "unknown";
}

FairnessMode fairness_mode_from_string(const std::string& name) {
  if (name == "sp") return FairnessMode::SP;
  if (name == "eo") return FairnessMode::EO;
  if (name == "sp+eo" || name == "sp_plus_eo") return FairnessMode::SP_PLUS_EO;
  throw std::invalid_argument("unknown fairness mode '" + name + "'");
}

void PenaltyConfig::validate(std::int64_t n_real) const {
  if (rho_o < 0.0) throw std::invalid_argument("penalty config: rho_o must be >= 0");
  if (lambda_xhat <= 0.0 || lambda_theta <= 0.0) {
    throw std::invalid_argument("penalty config: lambda values must be > 0");
  }
  if (k_max < 1) throw std::invalid_argument("penalty config: k_max must be >= 1");
  if (ns1 < 1 || ns1 > n_real) {
    throw std::invalid_argument("penalty config: ns1 must be in [1, N]");
  }
  if (init == Stage1Init::FromReal && ns1 != n_real) {
    throw std::invalid_argument("penalty config: from-real init requires ns1 == N");
  }
}

Eigen::MatrixXd SyntheticDataset::design_matrix() const {
  Eigen::MatrixXd a(xhat.rows(), xhat.cols() + 1);
  a.leftCols(xhat.cols()) = xhat;
  for (std::int64_t i = 0; i < size(); ++i) a(i, xhat.cols()) = pairs[i].first;
  return a;
}

Eigen::VectorXd SyntheticDataset::labels_real() const {
  Eigen::VectorXd y(size());
  for (std::int64_t i = 0; i < size(); ++i) y[i] = pairs[i].second;
  return y;
}

Dataset SyntheticDataset::to_dataset() const {
  Eigen::VectorXi s(size());
  Eigen::VectorXi y(size());
  for (std::int64_t i = 0; i < size(); ++i) {
    s[i] = pairs[i].first;
    y[i] = pairs[i].second;
  }
  return Dataset(xhat, std::move(s), std::move(y), feature_names, sensitive_name, label_name);
}

SyntheticDataset SyntheticDataset::like(const Dataset& source) {
  SyntheticDataset syn;
  syn.feature_names = source.feature_names();
  syn.sensitive_name = source.sensitive_name();
  syn.label_name = source.label_name();
  return syn;
}

namespace {

// Shared state for one client's outer problem. Precomputes the real-data
// quantities that every objective / hypergradient evaluation needs.
class BilevelProblem {
 public:
  BilevelProblem(const Dataset& real, const SyntheticDataset& syn, const PenaltyConfig& cfg,
                 const InnerSolveConfig& inner)
      : cfg_(cfg),
        inner_cfg_(inner),
        a_real_(real.design_matrix()),
        y_real_(real.labels_real()),
        n_(real.full_dim()),
        n_real_(real.size()),
        ns_(syn.size()),
        syn_design_(syn.design_matrix()),
        y_syn_(syn.labels_real()) {
    if (syn.xhat.cols() != real.feature_dim()) {
      throw std::invalid_argument("stage1: synthetic feature dimension mismatch");
    }
    const Eigen::VectorXd s = real.sensitive().cast<double>();
    const double s_bar = s.mean();
    c_sp_ = a_real_.transpose() * (s.array() - s_bar).matrix();
    const Eigen::VectorXd eo_weights =
        ((s.array() - s_bar) * (1.0 + y_real_.array()) * 0.5).matrix();
    c_eo_ = a_real_.transpose() * eo_weights;
    shared_weight_ =
        (cfg.mode == FairnessMode::SP_PLUS_EO && cfg.literal_sum) ? 2.0 : 1.0;
    const double ns_n = static_cast<double>(ns_) * static_cast<double>(n_);
    xreg_coeff_ = cfg.lambda_xhat / (ns_n * ns_n);
  }

  void set_xhat(const Eigen::MatrixXd& xhat) {
    syn_design_.leftCols(xhat.cols()) = xhat;
  }

  std::pair<Eigen::VectorXd, SolveRecord> solve_inner(const Eigen::VectorXd& start) const {
    const LogisticObjective obj(syn_design_, y_syn_, cfg_.lambda_theta);
    return lbfgs_minimize(
        [&obj](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
          return obj.value_and_gradient(theta, grad);
        },
        start, inner_cfg_);
  }

  bool sp_active() const {
    return cfg_.mode == FairnessMode::SP || cfg_.mode == FairnessMode::SP_PLUS_EO;
  }
  bool eo_active() const {
    return cfg_.mode == FairnessMode::EO || cfg_.mode == FairnessMode::SP_PLUS_EO;
  }

  PenaltyComponents components(const Eigen::MatrixXd& xhat, const Eigen::VectorXd& theta) const {
    PenaltyComponents out;
    out.theta = theta;
    out.shared_weight = shared_weight_;

    const LogisticObjective real_loss(a_real_, y_real_, 0.0);
    out.loss_term = real_loss.value(theta);

    const double inv_nsq = 1.0 / (static_cast<double>(n_real_) * static_cast<double>(n_real_));
    if (sp_active()) {
      const double u = c_sp_.dot(theta);
      out.penalty_sp = 0.5 * cfg_.rho_o * inv_nsq * u * u;
    }
    if (eo_active()) {
      const double u = c_eo_.dot(theta);
      out.penalty_eo = 0.5 * cfg_.rho_o * inv_nsq * u * u;
    }
    out.xhat_reg = 0.5 * xreg_coeff_ * xhat.squaredNorm();
    out.value = shared_weight_ * (out.loss_term + out.xhat_reg) + out.penalty_sp + out.penalty_eo;
    return out;
  }

  // dP/dtheta at the inner minimizer. rho_scale < 1 evaluates the warm-up
  // objective with penalty weight rho_scale * rho_o.
  Eigen::VectorXd outer_theta_gradient(const Eigen::VectorXd& theta, double rho_scale) const {
    const LogisticObjective real_loss(a_real_, y_real_, 0.0);
    Eigen::VectorXd v = shared_weight_ * real_loss.gradient(theta);
    const double rho = rho_scale * cfg_.rho_o;
    const double inv_nsq = 1.0 / (static_cast<double>(n_real_) * static_cast<double>(n_real_));
    if (sp_active()) v += (rho * inv_nsq * c_sp_.dot(theta)) * c_sp_;
    if (eo_active()) v += (rho * inv_nsq * c_eo_.dot(theta)) * c_eo_;
    return v;
  }

  // Hypergradient at (xhat, theta*). Implicit differentiation of the inner
  // stationarity condition gives dtheta/dxhat = -H^{-1} C; instead of forming
  // C (n x ns(n-1)) we do one adjoint solve H q = dP/dtheta and assemble
  // -q^T C row by row.
  Eigen::MatrixXd hypergrad(const Eigen::MatrixXd& xhat, const Eigen::VectorXd& theta,
                            double rho_scale = 1.0) const {
    const LogisticObjective syn_obj(syn_design_, y_syn_, cfg_.lambda_theta);
    const Eigen::MatrixXd hess = syn_obj.hessian(theta);

    const Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error(
          "stage1: inner Hessian factorization failed despite ridge floor lambda_theta/n^2 = " +
          std::to_string(cfg_.lambda_theta / (static_cast<double>(n_) * n_)));
    }
    const Eigen::VectorXd q = llt.solve(outer_theta_gradient(theta, rho_scale));
    const Eigen::VectorXd theta_x = theta.head(n_ - 1);
    const Eigen::VectorXd q_x = q.head(n_ - 1);

    // Cross-partial blocks of the inner gradient wrt xhat_j:
    //   C_j = (1/ns) [ w_j a_j theta_x^T + r_j E ],  E = [I; 0]
    // with w_j = sigmoid'(z_j), r_j = sigmoid(z_j) - (1+y_j)/2.
    const Eigen::VectorXd z = syn_design_ * theta;
    const double inv_ns = 1.0 / static_cast<double>(ns_);
    Eigen::MatrixXd grad(ns_, n_ - 1);
    for (std::int64_t j = 0; j < ns_; ++j) {
      const double sig = sigmoid(z[j]);
      const double w = sig * (1.0 - sig);
      const double r = sig - 0.5 * (1.0 + y_syn_[j]);
      const double aq = syn_design_.row(j).dot(q);
      grad.row(j) = -inv_ns * (w * aq * theta_x + r * q_x);
    }
    grad += (shared_weight_ * xreg_coeff_) * xhat;
    return grad;
  }

  Eigen::Index n() const { return n_; }

 private:
  PenaltyConfig cfg_;
  InnerSolveConfig inner_cfg_;
  Eigen::MatrixXd a_real_;
  Eigen::VectorXd y_real_;
  Eigen::Index n_;
  std::int64_t n_real_;
  std::int64_t ns_;
  Eigen::MatrixXd syn_design_;
  Eigen::VectorXd y_syn_;
  Eigen::VectorXd c_sp_;
  Eigen::VectorXd c_eo_;
  double shared_weight_ = 1.0;
  double xreg_coeff_ = 0.0;
};

Eigen::MatrixXd initial_xhat(const Dataset& real, const PairAssignment& pairs,
                             const PenaltyConfig& cfg) {
  const bool from_real =
      cfg.init == Stage1Init::FromReal ||
      (cfg.init == Stage1Init::Auto && cfg.ns1 == real.size());
  if (from_real) {
    if (cfg.ns1 != real.size()) {
      throw std::invalid_argument("stage1: from-real init requires ns1 == N");
    }
    return real.features();
  }

  // Stratum means with a small seeded jitter to break symmetry.
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(4, real.feature_dim());
  std::array<std::int64_t, 4> tally{};
  for (std::int64_t i = 0; i < real.size(); ++i) {
    const int k = StratumProportions::index_of(real.sensitive()[i], real.labels()[i]);
    means.row(k) += real.features().row(i);
    ++tally[k];
  }
  for (int k = 0; k < 4; ++k) {
    if (tally[k] > 0) means.row(k) /= static_cast<double>(tally[k]);
  }

  Rng rng(derive_seed(cfg.seed, 0x5731));
  Eigen::MatrixXd xhat(cfg.ns1, real.feature_dim());
  for (std::int64_t i = 0; i < cfg.ns1; ++i) {
    const int k = StratumProportions::index_of(pairs.pairs[i].first, pairs.pairs[i].second);
    for (Eigen::Index j = 0; j < real.feature_dim(); ++j) {
      xhat(i, j) = means(k, j) + 0.01 * rng.gaussian();
    }
  }
  return xhat;
}

}  // namespace

PenaltyComponents penalty_objective(const Dataset& real, const SyntheticDataset& syn,
                                    const PenaltyConfig& cfg, const InnerSolveConfig& inner) {
  if (static_cast<std::int64_t>(syn.pairs.size()) != syn.size()) {
    throw std::invalid_argument("penalty_objective: pair count mismatch");
  }
  BilevelProblem problem(real, syn, cfg, inner);
  auto [theta, record] = problem.solve_inner(Eigen::VectorXd::Zero(real.full_dim()));
  PenaltyComponents out = problem.components(syn.xhat, theta);
  out.inner_record = record;
  return out;
}

Eigen::MatrixXd hypergradient(const Dataset& real, const SyntheticDataset& syn,
                              const PenaltyConfig& cfg, const InnerSolveConfig& inner) {
  BilevelProblem problem(real, syn, cfg, inner);
  auto [theta, record] = problem.solve_inner(Eigen::VectorXd::Zero(real.full_dim()));
  (void)record;
  return problem.hypergrad(syn.xhat, theta);
}

std::pair<SyntheticDataset, Stage1Trace> learn_stage1(const Dataset& real,
                                                      const PenaltyConfig& cfg,
                                                      const AdamConfig& adam,
                                                      const InnerSolveConfig& inner) {
  cfg.validate(real.size());

  const PairAssignment assignment = assign_synthetic_pairs(real, cfg.ns1);
  SyntheticDataset syn = SyntheticDataset::like(real);
  syn.stage = "stage1";
  syn.pairs = assignment.pairs;
  syn.xhat = initial_xhat(real, assignment, cfg);

  Stage1Trace trace;

  const bool from_real_init =
      cfg.init == Stage1Init::FromReal ||
      (cfg.init == Stage1Init::Auto && cfg.ns1 == real.size());
  if (cfg.rho_o == 0.0 && cfg.ns1 == real.size() && from_real_init) {
    // Baseline semantics: with no fairness penalty the synthetic data is the
    // real data and no outer iterations run.
    return {std::move(syn), std::move(trace)};
  }

  BilevelProblem problem(real, syn, cfg, inner);
  AdamState adam_state = AdamState::zeros(syn.xhat.size());
  Eigen::VectorXd theta_warm = Eigen::VectorXd::Zero(real.full_dim());

  for (int k = 1; k <= cfg.k_max; ++k) {
    problem.set_xhat(syn.xhat);
    auto [theta, record] = problem.solve_inner(theta_warm);
    if (!record.converged()) ++trace.inner_failures;
    theta_warm = theta;

    const PenaltyComponents comps = problem.components(syn.xhat, theta);
    if (!std::isfinite(comps.value)) {
      throw std::runtime_error("stage1: objective became non-finite at outer iteration " +
                               std::to_string(k));
    }
    const Eigen::MatrixXd grad = problem.hypergrad(syn.xhat, theta);

    trace.rows.push_back(Stage1TraceRow{k, comps.value, comps.loss_term, comps.penalty_sp,
                                        comps.penalty_eo, comps.xhat_reg, grad.norm(),
                                        record.iterations, record.final_gradient_norm});
    trace.final_inner = record;

    const Eigen::Map<const Eigen::VectorXd> grad_flat(grad.data(), grad.size());
    const Eigen::VectorXd delta = adam_step(adam_state, grad_flat, adam, k);
    Eigen::Map<Eigen::VectorXd>(syn.xhat.data(), syn.xhat.size()) += delta;
  }

  return {std::move(syn), std::move(trace)};
}

void write_trace_csv(const Stage1Trace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trace_csv: cannot write " + path.string());
  out << "iteration,objective,loss_term,penalty_sp,penalty_eo,xhat_reg,hypergradient_norm,"
         "inner_iterations,inner_gradient_norm\n";
  char buf[512];
  for (const Stage1TraceRow& r : trace.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%d,%.12g\n",
                  r.iteration, r.objective, r.loss_term, r.penalty_sp, r.penalty_eo, r.xhat_reg,
                  r.hypergradient_norm, r.inner_iterations, r.inner_gradient_norm);
    out << buf;
  }
}

}  // namespace fairsyn
