#include "fairsyn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace fairsyn {

Eigen::VectorXd adam_step(AdamState& state, const Eigen::VectorXd& gradient,
                          const AdamConfig& cfg, int iteration) {
  if (iteration < 1) throw std::invalid_argument("adam_step: iteration must be >= 1");
  if (state.m.size() != gradient.size() || state.v.size() != gradient.size()) {
    throw std::invalid_argument("adam_step: state dimension mismatch");
  }

  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * gradient;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * gradient.array().square().matrix();

  const double m_correction = 1.0 - std::pow(cfg.beta1, iteration);
  const double v_correction = 1.0 - std::pow(cfg.beta2, iteration);
  const Eigen::ArrayXd m_hat = state.m.array() / m_correction;
  const Eigen::ArrayXd v_hat = state.v.array() / v_correction;

  return (-cfg.step_size * m_hat / (v_hat.sqrt() + cfg.epsilon_hat)).matrix();
}

}  // namespace fairsyn
