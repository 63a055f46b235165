// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

namespace lafuzz::stats {

/// Median of the samples; even counts interpolate the middle pair.
double median(std::span<const double> samples);

/// Two-sided Wilcoxon-Mann-Whitney p-value. Small pooled samples
/// (n_a + n_b <= 12) use the exact conditional distribution, larger ones the
/// normal approximation with tie and continuity correction. Two samples with
/// all values identical give p = 1.
double mann_whitney_u(std::span<const double> a, std::span<const double> b);

/// Normal approximation (tie-corrected, continuity-corrected), any size.
double mann_whitney_u_normal(std::span<const double> a, std::span<const double> b);

/// Exact conditional permutation distribution of U; p is the probability of
/// a U at least as far from its mean as observed.
double mann_whitney_u_exact(std::span<const double> a, std::span<const double> b);

/// Vargha-Delaney effect size: P(x < y) + 0.5 P(x = y) for x from `a`,
/// y from `b`. With time-to-target samples this is the probability that a
/// run from `a` is faster.
double a12(std::span<const double> a, std::span<const double> b);

/// One comparison line in the report tables.
struct ComparisonRow {
  std::string benchmark;
  std::string target;
  std::string config_x;
  std::string config_y;
  double t_x = 0;      // median of X samples
  double t_y = 0;      // median of Y samples
  double speedup = 0;  // t_x / t_y
  double p_value = 1;
  double a12_x = 0.5;
  double a12_y = 0.5;
};

}  // namespace lafuzz::stats
