#pragma once

#include <Eigen/Core>

#include "fairsyn/dataset.hpp"

namespace fairsyn {

// Weight vector of the linear classifier over the full feature vector
// a = (x, s); the score is a^T theta.
struct ModelParams {
  Eigen::VectorXd theta;
};

inline double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Overflow-safe log(1 + e^z).
inline double softplus(double z) {
  if (z > 35.0) return z;
  if (z < -35.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

// sign(a^T theta) with the tie sign(0) -> +1.
int predict(const ModelParams& m, const Eigen::VectorXd& a);
Eigen::VectorXi predict_all(const ModelParams& m, const Dataset& ds);

// (1/N) sum log(1 + exp(-y_i a_i^T theta)).
double logistic_loss(const Dataset& ds, const ModelParams& m);

// Mean logistic loss over an explicit design matrix plus the ridge term
// (lambda / (2 n^2)) ||theta||^2 with n = dim(theta). lambda == 0 gives the
// plain loss. Hessian is SPD whenever lambda > 0.
class LogisticObjective {
 public:
  LogisticObjective(Eigen::MatrixXd design, Eigen::VectorXd labels, double lambda_theta);

  static LogisticObjective from_dataset(const Dataset& ds, double lambda_theta);

  double value(const Eigen::VectorXd& theta) const;
  double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& theta) const;

  Eigen::Index dim() const { return design_.cols(); }
  std::int64_t count() const { return design_.rows(); }
  const Eigen::MatrixXd& design() const { return design_; }
  const Eigen::VectorXd& labels() const { return labels_; }
  double lambda_theta() const { return lambda_; }
  double ridge_coefficient() const { return ridge_; }  // lambda / n^2

 private:
  Eigen::MatrixXd design_;
  Eigen::VectorXd labels_;
  double lambda_;
  double ridge_;
};

}  // namespace fairsyn
