#pragma once

#include <cstdint>
#include <optional>

#include "fairsyn/dataset.hpp"
#include "fairsyn/linear_model.hpp"

namespace fairsyn {

struct GroupCounts {
  std::int64_t group[2] = {0, 0};           // |{s = g}|
  std::int64_t positive_pred[2] = {0, 0};   // |{pred = +1, s = g}|
  std::int64_t positive_label[2] = {0, 0};  // |{y = +1, s = g}|
  std::int64_t true_positive[2] = {0, 0};   // |{pred = +1, y = +1, s = g}|
};

// Group-fairness summary for one (dataset, model) pair. spd/eod are signed
// (group s=1 minus s=0); nullopt marks an undefined metric (a conditioning
// group is empty), which is distinct from 0.
struct FairnessReport {
  double accuracy = 0.0;
  double covariance_sp = 0.0;
  double covariance_eo = 0.0;
  std::optional<double> spd;
  std::optional<double> eod;
  GroupCounts counts;
};

// (1/N) sum (s_i - s_bar) a_i^T theta.
double covariance_sp(const Dataset& ds, const ModelParams& m);

// (1/N) sum (s_i - s_bar) ((1+y_i)/2) a_i^T theta; the weight zeroes y = -1
// points but s_bar and 1/N still range over all N points.
double covariance_eo(const Dataset& ds, const ModelParams& m);

// Positive-prediction rate difference, group s=1 minus s=0.
std::optional<double> spd(const Dataset& ds, const ModelParams& m);

// True-positive rate difference among y=+1 points, group s=1 minus s=0.
std::optional<double> eod(const Dataset& ds, const ModelParams& m);

FairnessReport evaluate(const Dataset& ds, const ModelParams& m);

}  // namespace fairsyn
