#include "fairsyn/biased_data.hpp"

#include <cmath>
#include <stdexcept>

#include "fairsyn/linear_model.hpp"
#include "fairsyn/rng.hpp"

namespace fairsyn {

Dataset make_biased_dataset(const BiasSpec& spec, std::uint64_t seed) {
  if (spec.n_points < 8) throw std::invalid_argument("biased data: need at least 8 points");
  if (spec.full_dim < 2) throw std::invalid_argument("biased data: full_dim must be >= 2");
  if (!(spec.group_fraction > 0.0 && spec.group_fraction < 1.0)) {
    throw std::invalid_argument("biased data: group fraction outside (0,1)");
  }
  if (spec.min_baseline_spd > 0.0 && spec.mean_separation == 0.0 &&
      spec.label_flip_bias == 0.0) {
    throw std::invalid_argument(
        "biased data: zero separation with zero bias cannot meet the requested disparity floor");
  }

  const int dim = spec.full_dim - 1;
  Rng rng(seed);

  Eigen::MatrixXd x(spec.n_points, dim);
  Eigen::VectorXi s(spec.n_points);
  Eigen::VectorXi y(spec.n_points);

  // Group means sit at +-separation/2 along the normalized all-ones axis u.
  // The latent label score mixes u with an orthogonal alternating axis v, so
  // only the signal_mix share of the signal is entangled with the groups.
  const double axis = 1.0 / std::sqrt(static_cast<double>(dim));
  const double mix = std::clamp(spec.signal_mix, 0.0, 1.0);
  const double u_weight = std::sqrt(mix);
  const double v_weight = std::sqrt(1.0 - mix);
  for (std::int64_t i = 0; i < spec.n_points; ++i) {
    s[i] = rng.bernoulli(spec.group_fraction) ? 1 : 0;
    const double shift = (s[i] == 1 ? 0.5 : -0.5) * spec.mean_separation * axis;
    double along_u = 0.0, along_v = 0.0;
    for (int j = 0; j < dim; ++j) {
      x(i, j) = shift + rng.gaussian();
      along_u += axis * x(i, j);
      along_v += (j % 2 == 0 ? axis : -axis) * x(i, j);
    }
    // With odd dim, v as defined is not orthogonal to u; drop its u-component.
    const double v_clean = along_v - (dim % 2 == 1 ? along_u / dim : 0.0);
    const double score = spec.base_rate_shift + u_weight * along_u + v_weight * v_clean;
    const double sharpness =
        s[i] == 1 ? spec.label_sharpness : spec.minority_label_sharpness;
    y[i] = rng.bernoulli(sigmoid(sharpness * score)) ? 1 : -1;

    // Label bias toward group s=1: promote its negatives, demote the other
    // group's positives.
    if (s[i] == 1 && y[i] == -1 && rng.bernoulli(spec.label_flip_bias)) y[i] = 1;
    if (s[i] == 0 && y[i] == 1 && rng.bernoulli(spec.label_flip_bias)) y[i] = -1;
  }

  std::vector<std::string> names(dim);
  for (int j = 0; j < dim; ++j) names[j] = "f" + std::to_string(j + 1);
  return Dataset(std::move(x), std::move(s), std::move(y), std::move(names), "group", "outcome");
}

}  // namespace fairsyn
