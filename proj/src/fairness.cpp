#include "fairsyn/fairness.hpp"

namespace fairsyn {

namespace {

GroupCounts count_groups(const Dataset& ds, const Eigen::VectorXi& preds) {
  GroupCounts c;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    const int g = ds.sensitive()[i];
    ++c.group[g];
    if (preds[i] == 1) ++c.positive_pred[g];
    if (ds.labels()[i] == 1) {
      ++c.positive_label[g];
      if (preds[i] == 1) ++c.true_positive[g];
    }
  }
  return c;
}

std::optional<double> spd_from_counts(const GroupCounts& c) {
  if (c.group[0] == 0 || c.group[1] == 0) return std::nullopt;
  return static_cast<double>(c.positive_pred[1]) / static_cast<double>(c.group[1]) -
         static_cast<double>(c.positive_pred[0]) / static_cast<double>(c.group[0]);
}

std::optional<double> eod_from_counts(const GroupCounts& c) {
  if (c.positive_label[0] == 0 || c.positive_label[1] == 0) return std::nullopt;
  return static_cast<double>(c.true_positive[1]) / static_cast<double>(c.positive_label[1]) -
         static_cast<double>(c.true_positive[0]) / static_cast<double>(c.positive_label[0]);
}

}  // namespace

double covariance_sp(const Dataset& ds, const ModelParams& m) {
  const Eigen::VectorXd scores = ds.design_matrix() * m.theta;
  const Eigen::VectorXd s = ds.sensitive().cast<double>();
  const double s_bar = s.mean();
  return (s.array() - s_bar).matrix().dot(scores) / static_cast<double>(ds.size());
}

double covariance_eo(const Dataset& ds, const ModelParams& m) {
  const Eigen::VectorXd scores = ds.design_matrix() * m.theta;
  const Eigen::VectorXd s = ds.sensitive().cast<double>();
  const Eigen::VectorXd y = ds.labels_real();
  const double s_bar = s.mean();
  const Eigen::ArrayXd weights = (1.0 + y.array()) * 0.5;
  return ((s.array() - s_bar) * weights * scores.array()).sum() / static_cast<double>(ds.size());
}

std::optional<double> spd(const Dataset& ds, const ModelParams& m) {
  return spd_from_counts(count_groups(ds, predict_all(m, ds)));
}

std::optional<double> eod(const Dataset& ds, const ModelParams& m) {
  return eod_from_counts(count_groups(ds, predict_all(m, ds)));
}

FairnessReport evaluate(const Dataset& ds, const ModelParams& m) {
  const Eigen::VectorXi preds = predict_all(m, ds);

  FairnessReport report;
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    if (preds[i] == ds.labels()[i]) ++correct;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  report.covariance_sp = covariance_sp(ds, m);
  report.covariance_eo = covariance_eo(ds, m);
  report.counts = count_groups(ds, preds);
  report.spd = spd_from_counts(report.counts);
  report.eod = eod_from_counts(report.counts);
  return report;
}

}  // namespace fairsyn
