// Leaf-level split-criterion arithmetic: per-treatment MSE, the matched
// correlated-error term (MCE), the combined minimised criterion, the
// effect-heterogeneity criterion, and the propensity-heterogeneity penalty.
// All criteria share one convention: lower is better, infeasible is +inf.
#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mcf/dataset.hpp"
#include "mcf/matching.hpp"

namespace mcf {

struct TreatmentPair {
  int m = 1;  // "treated" side, m > l
  int l = 0;
  bool operator==(const TreatmentPair&) const = default;
};

struct ContrastSet {
  std::vector<TreatmentPair> pairs;
  std::vector<double> weights;  // positive, defaults to 1 per pair

  static ContrastSet all_pairs(int m_treatments) {
    ContrastSet c;
    for (int m = 1; m < m_treatments; ++m)
      for (int l = 0; l < m; ++l) c.pairs.push_back({m, l});
    c.weights.assign(c.pairs.size(), 1.0);
    return c;
  }
};

enum class SplitRule : std::uint8_t {
  basic_mse = 0,  // single-outcome regression criterion
  onef = 1,       // sum of per-treatment MSEs, correlated-error term zeroed
  onef_mce = 2,   // MSEs minus twice the matched correlated-error term
  onef_vart = 3,  // maximise effect heterogeneity (negated)
};

struct CriterionConfig {
  SplitRule rule = SplitRule::onef_mce;
  std::optional<double> penalty_lambda;  // nullopt = no penalty
  ContrastSet contrasts;
};

inline constexpr double kInfeasibleSplit = std::numeric_limits<double>::infinity();

// Per-node sufficient statistics. Means/SSR are per treatment cell; the MCE
// sums run over the node members observed in either treatment of a pair.
struct NodeStats {
  int n_total = 0;
  std::vector<int> count;      // per treatment
  std::vector<double> mean;    // per treatment; NaN when the cell is empty
  std::vector<double> ssr;     // per treatment: sum of (mean - y)^2
  std::vector<double> mce_sum;  // per contrast pair
  std::vector<int> mce_count;   // per contrast pair: N^m + N^l

  std::vector<double> shares() const {
    std::vector<double> s(count.size(), 0.0);
    if (n_total == 0) return s;
    for (std::size_t t = 0; t < count.size(); ++t)
      s[t] = static_cast<double>(count[t]) / static_cast<double>(n_total);
    return s;
  }

  // Two passes over the node rows: treatment means first, then residual and
  // matched-product sums. `matched` may be null when the rule never reads
  // the MCE terms.
  static NodeStats compute(const Dataset& d, std::span<const int> rows,
                           const ContrastSet& contrasts,
                           const MatchedOutcomes* matched) {
    NodeStats s;
    const auto mt = static_cast<std::size_t>(d.m);
    s.n_total = static_cast<int>(rows.size());
    s.count.assign(mt, 0);
    s.mean.assign(mt, std::numeric_limits<double>::quiet_NaN());
    s.ssr.assign(mt, 0.0);
    s.mce_sum.assign(contrasts.pairs.size(), 0.0);
    s.mce_count.assign(contrasts.pairs.size(), 0);

    std::vector<double> sum(mt, 0.0);
    for (int r : rows) {
      const auto t = static_cast<std::size_t>(d.treatment[static_cast<std::size_t>(r)]);
      ++s.count[t];
      sum[t] += d.outcome[static_cast<std::size_t>(r)];
    }
    for (std::size_t t = 0; t < mt; ++t)
      if (s.count[t] > 0) s.mean[t] = sum[t] / s.count[t];

    for (int r : rows) {
      const auto t = static_cast<std::size_t>(d.treatment[static_cast<std::size_t>(r)]);
      const double res = s.mean[t] - d.outcome[static_cast<std::size_t>(r)];
      s.ssr[t] += res * res;
    }
    if (matched) {
      for (std::size_t pi = 0; pi < contrasts.pairs.size(); ++pi) {
        const auto [pm, pl] = contrasts.pairs[pi];
        if (s.count[static_cast<std::size_t>(pm)] == 0 ||
            s.count[static_cast<std::size_t>(pl)] == 0)
          continue;  // means undefined; caller decides feasibility
        double acc = 0.0;
        int cnt = 0;
        for (int r : rows) {
          const int t = d.treatment[static_cast<std::size_t>(r)];
          if (t != pm && t != pl) continue;
          acc += (s.mean[static_cast<std::size_t>(pm)] - matched->at(r, pm)) *
                 (s.mean[static_cast<std::size_t>(pl)] - matched->at(r, pl));
          ++cnt;
        }
        s.mce_sum[pi] = acc;
        s.mce_count[pi] = cnt;
      }
    }
    return s;
  }
};

// Mean squared residual of the treatment-d cell: (1/N^d) sum (mean_d - y)^2.
inline double leaf_mse(const NodeStats& stats, int d) {
  const auto t = static_cast<std::size_t>(d);
  if (stats.count[t] < 1) return std::numeric_limits<double>::quiet_NaN();
  return stats.ssr[t] / stats.count[t];
}

// Matched correlated-error estimate for one contrast:
// (1/(N^m+N^l)) sum over members in {m,l} of (mean_m - y~(i,m))(mean_l - y~(i,l)).
inline double leaf_mce(const NodeStats& stats, const ContrastSet& contrasts,
                       std::size_t pair_index) {
  const auto [m, l] = contrasts.pairs[pair_index];
  if (stats.count[static_cast<std::size_t>(m)] < 1 ||
      stats.count[static_cast<std::size_t>(l)] < 1)
    return std::numeric_limits<double>::quiet_NaN();
  if (stats.mce_count[pair_index] == 0) return 0.0;
  return stats.mce_sum[pair_index] / stats.mce_count[pair_index];
}

// Combined split criterion over both daughters and all contrasts:
//   sum of w * (MSE_m + MSE_l - 2 * MCE_(m,l)), MCE zeroed under `onef`.
// Returns +inf when a needed treatment cell is empty in either daughter.
inline double mce_criterion(const NodeStats& left, const NodeStats& right,
                            const CriterionConfig& cfg) {
  const bool use_mce = cfg.rule == SplitRule::onef_mce;
  double total = 0.0;
  for (const NodeStats* side : {&left, &right}) {
    for (std::size_t pi = 0; pi < cfg.contrasts.pairs.size(); ++pi) {
      const auto [m, l] = cfg.contrasts.pairs[pi];
      const double mse_m = leaf_mse(*side, m);
      const double mse_l = leaf_mse(*side, l);
      if (std::isnan(mse_m) || std::isnan(mse_l)) return kInfeasibleSplit;
      double value = mse_m + mse_l;
      if (use_mce) value -= 2.0 * leaf_mce(*side, cfg.contrasts, pi);
      total += cfg.contrasts.weights[pi] * value;
    }
  }
  return total;
}

// Regression criterion for a single-outcome tree: sum over daughters of the
// per-daughter mean squared residual (pseudo-treatment 0).
inline double basic_mse_criterion(const NodeStats& left, const NodeStats& right) {
  const double a = leaf_mse(left, 0);
  const double b = leaf_mse(right, 0);
  if (std::isnan(a) || std::isnan(b)) return kInfeasibleSplit;
  return a + b;
}

// Effect-heterogeneity criterion, negated so that all rules minimise:
//   - sum over daughters of N_daughter * sum of w * (mean_m - mean_l)^2.
inline double vart_criterion(const NodeStats& left, const NodeStats& right,
                             const CriterionConfig& cfg) {
  double total = 0.0;
  for (const NodeStats* side : {&left, &right}) {
    double het = 0.0;
    for (std::size_t pi = 0; pi < cfg.contrasts.pairs.size(); ++pi) {
      const auto [m, l] = cfg.contrasts.pairs[pi];
      if (side->count[static_cast<std::size_t>(m)] < 1 ||
          side->count[static_cast<std::size_t>(l)] < 1)
        return kInfeasibleSplit;
      const double tau = side->mean[static_cast<std::size_t>(m)] -
                         side->mean[static_cast<std::size_t>(l)];
      het += cfg.contrasts.weights[pi] * tau * tau;
    }
    total -= static_cast<double>(side->n_total) * het;
  }
  return total;
}

// Penalty rewarding splits whose daughters differ in treatment shares:
//   lambda * (1 - (1/M) sum_d (share_d(left) - share_d(right))^2).
// Zero at maximally different shares, lambda at identical shares.
inline double propensity_penalty(const NodeStats& left, const NodeStats& right,
                                 double lambda, int m_treatments) {
  const auto sl = left.shares();
  const auto sr = right.shares();
  double sq = 0.0;
  for (int t = 0; t < m_treatments; ++t) {
    const double diff = sl[static_cast<std::size_t>(t)] - sr[static_cast<std::size_t>(t)];
    sq += diff * diff;
  }
  return lambda * (1.0 - sq / static_cast<double>(m_treatments));
}

// Single entry point used by the tree search: rule value plus penalty.
inline double split_criterion(const NodeStats& left, const NodeStats& right,
                              const CriterionConfig& cfg) {
  double value = 0.0;
  switch (cfg.rule) {
    case SplitRule::basic_mse:
      value = basic_mse_criterion(left, right);
      break;
    case SplitRule::onef:
    case SplitRule::onef_mce:
      value = mce_criterion(left, right, cfg);
      break;
    case SplitRule::onef_vart:
      value = vart_criterion(left, right, cfg);
      break;
  }
  if (!std::isfinite(value)) return kInfeasibleSplit;
  if (cfg.penalty_lambda) {
    const int mt = static_cast<int>(left.count.size());
    value += propensity_penalty(left, right, *cfg.penalty_lambda, mt);
  }
  return value;
}

}  // namespace mcf
