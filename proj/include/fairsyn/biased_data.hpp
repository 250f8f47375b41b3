#pragma once

#include <cstdint>

#include "fairsyn/dataset.hpp"

namespace fairsyn {

// Generator for a seeded binary-classification dataset with a controllable
// group disparity: the sensitive groups differ in feature means and labels
// are flipped in favor of group s=1. Used by the desk-scale experiments and
// acceptance runs when no dataset file is supplied.
struct BiasSpec {
  std::int64_t n_points = 2000;
  int full_dim = 6;               // n; nonsensitive features are n-1
  double group_fraction = 0.75;   // P(s = 1); s=0 is the disadvantaged minority
  double mean_separation = 1.1;   // shift between group feature means
  double label_flip_bias = 0.12;  // flip rate favoring s=1
  double label_sharpness = 4.0;   // logit scale of the latent label rule (s=1)
  double minority_label_sharpness = 1.5;  // noisier labels for s=0: yields a
                                          // true-positive-rate gap no single
                                          // threshold can remove
  double base_rate_shift = 0.0;  // raises P(y=+1) for imbalanced labels
  // Fraction of the label signal lying along the group-separation axis. Below
  // 1, part of the signal survives any fairness correction, keeping the
  // accuracy cost of fairness moderate (as in the benchmark datasets).
  double signal_mix = 0.25;
  // Reject specs that cannot produce at least this much baseline disparity
  // (zero separation and zero bias cannot). 0 disables the check.
  double min_baseline_spd = 0.0;
};

Dataset make_biased_dataset(const BiasSpec& spec, std::uint64_t seed);

}  // namespace fairsyn
