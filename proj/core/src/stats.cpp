// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#include "lafuzz/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lafuzz::stats {

double median(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("median of empty sample");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
}

namespace {

/// U statistic for `a` counted as #{x > y} + 0.5 #{x = y} (x from a, y from
/// b), plus the tie-group sizes of the pooled sample.
struct UStat {
  double u = 0;
  std::vector<std::size_t> tie_groups;
};

UStat u_statistic(std::span<const double> a, std::span<const double> b) {
  UStat r;
  double u = 0;
  for (double x : a) {
    for (double y : b) {
      if (x > y)
        u += 1;
      else if (x == y)
        u += 0.5;
    }
  }
  r.u = u;

  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
    r.tie_groups.push_back(j - i);
    i = j;
  }
  return r;
}

}  // namespace

double mann_whitney_u_normal(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty sample");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;

  const UStat st = u_statistic(a, b);
  const double mu = na * nb / 2.0;

  double tie_term = 0;
  for (std::size_t t : st.tie_groups) {
    const double td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0) return 1.0;  // every pooled value identical

  double z = (std::abs(st.u - mu) - 0.5) / std::sqrt(var);
  if (z < 0) z = 0;
  const double p = std::erfc(z / std::sqrt(2.0));
  return std::min(1.0, std::max(0.0, p));
}

double mann_whitney_u_exact(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty sample");
  const std::size_t na = a.size();
  const std::size_t nb = b.size();

  // Pool and group ties.
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  std::vector<std::size_t> groups;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
    groups.push_back(j - i);
    i = j;
  }

  // Distribution of 2U (U for the A side as #{x > y} + 0.5 ties) over all
  // label assignments with |A| = na, by dynamic programming over sorted tie
  // groups: placing a_i A-labels in group i adds a_i * (B's seen so far) full
  // wins plus half-wins against the b_i B-labels in the same group.
  const std::size_t max2u = 2 * na * nb;
  std::vector<std::vector<double>> dist(na + 1, std::vector<double>(max2u + 1, 0.0));
  dist[0][0] = 1.0;
  std::size_t placed = 0;
  for (std::size_t m : groups) {
    std::vector<std::vector<double>> next(na + 1, std::vector<double>(max2u + 1, 0.0));
    // Binomial coefficients C(m, k).
    std::vector<double> choose(m + 1, 1.0);
    for (std::size_t k = 1; k <= m; ++k)
      choose[k] = choose[k - 1] * static_cast<double>(m - k + 1) / static_cast<double>(k);
    for (std::size_t a_used = 0; a_used <= na && a_used <= placed; ++a_used) {
      for (std::size_t u2 = 0; u2 <= max2u; ++u2) {
        const double w = dist[a_used][u2];
        if (w == 0) continue;
        const std::size_t b_before = placed - a_used;
        for (std::size_t ai = 0; ai <= m && a_used + ai <= na; ++ai) {
          const std::size_t bi = m - ai;
          const std::size_t add = 2 * ai * b_before + ai * bi;
          if (u2 + add > max2u) continue;
          next[a_used + ai][u2 + add] += w * choose[ai];
        }
      }
    }
    dist = std::move(next);
    placed += m;
  }

  const UStat st = u_statistic(a, b);
  const double obs2 = 2.0 * st.u;
  const double mu2 = static_cast<double>(na) * static_cast<double>(nb);
  const double d = std::abs(obs2 - mu2);

  double total = 0;
  double extreme = 0;
  for (std::size_t u2 = 0; u2 <= max2u; ++u2) {
    const double w = dist[na][u2];
    if (w == 0) continue;
    total += w;
    if (std::abs(static_cast<double>(u2) - mu2) >= d - 1e-9) extreme += w;
  }
  return total == 0 ? 1.0 : std::min(1.0, extreme / total);
}

double mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty sample");
  if (a.size() + b.size() <= 12) return mann_whitney_u_exact(a, b);
  return mann_whitney_u_normal(a, b);
}

double a12(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty sample");
  double wins = 0;
  for (double x : a) {
    for (double y : b) {
      if (x < y)
        wins += 1;
      else if (x == y)
        wins += 0.5;
    }
  }
  return wins / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace lafuzz::stats
