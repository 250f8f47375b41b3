#pragma once

#include <Eigen/Core>

namespace fairsyn {

struct AdamConfig {
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_hat = 1e-8;
  int k_max = 1000;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  static AdamState zeros(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim)};
  }
};

// One bias-corrected Adam update; `iteration` is 1-based. Mutates the moment
// state and returns the parameter delta -step * m_hat / (sqrt(v_hat) + eps).
Eigen::VectorXd adam_step(AdamState& state, const Eigen::VectorXd& gradient,
                          const AdamConfig& cfg, int iteration);

}  // namespace fairsyn
