#include "fairsyn/linear_model.hpp"

#include <cmath>
#include <stdexcept>

namespace fairsyn {

int predict(const ModelParams& m, const Eigen::VectorXd& a) {
  if (a.size() != m.theta.size()) throw std::invalid_argument("predict: dimension mismatch");
  return a.dot(m.theta) >= 0.0 ? 1 : -1;
}

Eigen::VectorXi predict_all(const ModelParams& m, const Dataset& ds) {
  if (ds.full_dim() != m.theta.size()) {
    throw std::invalid_argument("predict_all: dimension mismatch");
  }
  const Eigen::VectorXd scores = ds.design_matrix() * m.theta;
  Eigen::VectorXi out(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) out[i] = scores[i] >= 0.0 ? 1 : -1;
  return out;
}

double logistic_loss(const Dataset& ds, const ModelParams& m) {
  return LogisticObjective::from_dataset(ds, 0.0).value(m.theta);
}

LogisticObjective::LogisticObjective(Eigen::MatrixXd design, Eigen::VectorXd labels,
                                     double lambda_theta)
    : design_(std::move(design)), labels_(std::move(labels)), lambda_(lambda_theta) {
  if (design_.rows() == 0) throw std::invalid_argument("logistic objective: empty data");
  if (design_.rows() != labels_.size()) {
    throw std::invalid_argument("logistic objective: label count mismatch");
  }
  if (lambda_ < 0.0) throw std::invalid_argument("logistic objective: negative lambda");
  const double n = static_cast<double>(design_.cols());
  ridge_ = lambda_ / (n * n);
}

LogisticObjective LogisticObjective::from_dataset(const Dataset& ds, double lambda_theta) {
  return LogisticObjective(ds.design_matrix(), ds.labels_real(), lambda_theta);
}

double LogisticObjective::value(const Eigen::VectorXd& theta) const {
  if (theta.size() != design_.cols()) {
    throw std::invalid_argument("logistic objective: theta dimension mismatch");
  }
  const Eigen::VectorXd margins = design_ * theta;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    sum += softplus(-labels_[i] * margins[i]);
  }
  return sum / static_cast<double>(design_.rows()) + 0.5 * ridge_ * theta.squaredNorm();
}

double LogisticObjective::value_and_gradient(const Eigen::VectorXd& theta,
                                             Eigen::VectorXd& grad) const {
  if (theta.size() != design_.cols()) {
    throw std::invalid_argument("logistic objective: theta dimension mismatch");
  }
  const Eigen::VectorXd margins = design_ * theta;
  const double inv_n = 1.0 / static_cast<double>(design_.rows());
  double sum = 0.0;
  Eigen::VectorXd residual(margins.size());
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    sum += softplus(-labels_[i] * margins[i]);
    // d/dz softplus(-y z) = sigmoid(z) - (1+y)/2
    residual[i] = sigmoid(margins[i]) - 0.5 * (1.0 + labels_[i]);
  }
  grad = inv_n * (design_.transpose() * residual) + ridge_ * theta;
  return sum * inv_n + 0.5 * ridge_ * theta.squaredNorm();
}

Eigen::VectorXd LogisticObjective::gradient(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd g;
  value_and_gradient(theta, g);
  return g;
}

Eigen::MatrixXd LogisticObjective::hessian(const Eigen::VectorXd& theta) const {
  if (theta.size() != design_.cols()) {
    throw std::invalid_argument("logistic objective: theta dimension mismatch");
  }
  const Eigen::VectorXd margins = design_ * theta;
  Eigen::VectorXd weights(margins.size());
  for (Eigen::Index i = 0; i < margins.size(); ++i) {
    const double s = sigmoid(margins[i]);
    weights[i] = s * (1.0 - s);
  }
  const double inv_n = 1.0 / static_cast<double>(design_.rows());
  Eigen::MatrixXd h = inv_n * (design_.transpose() * weights.asDiagonal() * design_);
  h.diagonal().array() += ridge_;
  return h;
}

}  // namespace fairsyn
