#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <utility>

namespace fairsyn {

// Settings for the inner / server training solves. lambda_theta rides along
// here because every call site builds the ridge objective from the same
// config object.
struct InnerSolveConfig {
  double lambda_theta = 1e-4;
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  int lbfgs_memory = 10;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
};

enum class SolveStatus { Converged, IterationLimit, LineSearchFailed };

struct SolveRecord {
  SolveStatus status = SolveStatus::Converged;
  int iterations = 0;
  int function_evals = 0;
  double final_gradient_norm = 0.0;
  int wolfe_failures = 0;

  bool converged() const { return status == SolveStatus::Converged; }
};

const char* to_string(SolveStatus status);

// f(x, grad) fills grad and returns the objective value.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

// Limited-memory BFGS with a strong Wolfe line search. Every accepted step
// satisfies the (c1, c2) conditions; on line-search breakdown the best
// iterate seen so far is returned with a failure flag.
std::pair<Eigen::VectorXd, SolveRecord> lbfgs_minimize(const Objective& f,
                                                       Eigen::VectorXd start,
                                                       const InnerSolveConfig& cfg);

}  // namespace fairsyn
