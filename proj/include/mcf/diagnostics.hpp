// Common-support and balance diagnostics: forest-implied propensity scores,
// support trimming, standardized differences, and post-estimation balance
// via the average-effect weights applied to covariates.
#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mcf/aggregation.hpp"
#include "mcf/forest.hpp"

namespace mcf {

// Treatment shares implied by the forest at x: each tree contributes the
// treatment composition of the estimation observations in x's leaf; trees
// whose leaf holds no estimation observation are skipped.
inline std::vector<double> propensity_from_forest(const Forest& f,
                                                  std::span<const double> x) {
  std::vector<long double> acc(static_cast<std::size_t>(f.m()), 0.0L);
  int used = 0;
  for (const auto& pt : f.trees) {
    if (pt.tree.degenerate) continue;
    const int leaf = pt.tree.route_point(x);
    const auto& le = pt.leaves[static_cast<std::size_t>(leaf)];
    if (le.total == 0) continue;
    for (int t = 0; t < f.m(); ++t)
      acc[static_cast<std::size_t>(t)] +=
          static_cast<long double>(le.members[static_cast<std::size_t>(t)].size()) / le.total;
    ++used;
  }
  std::vector<double> shares(static_cast<std::size_t>(f.m()), 0.0);
  if (used == 0) return shares;
  for (int t = 0; t < f.m(); ++t)
    shares[static_cast<std::size_t>(t)] =
        static_cast<double>(acc[static_cast<std::size_t>(t)] / used);
  return shares;
}

struct TrimReport {
  std::vector<std::uint8_t> retained;  // per evaluated row
  int discarded = 0;
  double discarded_share = 0.0;
  double lo = 0.0;
  double hi = 1.0;
};

// Keeps a row only when every treatment share lies inside [lo, hi]. The
// trained forest itself is never touched; the mask restricts the population
// that effects are evaluated on.
inline TrimReport trim_support(const Forest& f, const Dataset& eval, double lo, double hi) {
  if (!(lo >= 0.0 && lo < hi && hi <= 1.0))
    throw ConfigError("trim bounds must satisfy 0 <= lo < hi <= 1");
  TrimReport report;
  report.lo = lo;
  report.hi = hi;
  report.retained.assign(static_cast<std::size_t>(eval.n()), 1);
  std::vector<double> x(static_cast<std::size_t>(eval.p()));
  for (int r = 0; r < eval.n(); ++r) {
    for (int c = 0; c < eval.p(); ++c) x[static_cast<std::size_t>(c)] = eval.feature(c, r);
    const auto shares = propensity_from_forest(f, x);
    for (double s : shares) {
      if (s < lo || s > hi) {
        report.retained[static_cast<std::size_t>(r)] = 0;
        ++report.discarded;
        break;
      }
    }
  }
  report.discarded_share = static_cast<double>(report.discarded) / eval.n();
  if (report.discarded == eval.n())
    throw EstimationError("support trimming discarded every observation");
  return report;
}

// 100 * |mean_m - mean_l| / sqrt((var_m + var_l) / 2), in percent. Zero when
// both groups are constant and equal; +inf sentinel when constant but apart.
inline double standardized_diff(std::span<const double> column, std::span<const int> treatment,
                                int m, int l) {
  std::vector<double> xm, xl;
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (treatment[i] == m) xm.push_back(column[i]);
    else if (treatment[i] == l) xl.push_back(column[i]);
  }
  if (xm.empty() || xl.empty())
    throw DataError("standardized_diff: both treatment groups must be nonempty");
  const double mean_m = stats::mean(xm);
  const double mean_l = stats::mean(xl);
  const double pooled = 0.5 * (stats::sample_variance(xm) + stats::sample_variance(xl));
  const double diff = std::fabs(mean_m - mean_l);
  if (pooled <= 0.0)
    return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return 100.0 * diff / std::sqrt(pooled);
}

// The average-effect weight vector applied to a covariate column instead of
// the outcome: the weighted mean difference that remains after estimation.
inline double post_estimation_balance(const Forest& f, std::span<const double> column_b,
                                      TreatmentPair contrast) {
  const WeightVector w = ate_weights(f, {}, contrast);
  return weight_dot(w, column_b);
}

struct BalanceRow {
  std::string feature;
  double mean_m = 0.0;
  double mean_l = 0.0;
  double difference = 0.0;
  double standardized_pct = 0.0;
  double post_estimation = 0.0;
};

// Pre-estimation means and standardized differences on the estimation
// sample, next to the post-estimation weighted differences.
inline std::vector<BalanceRow> balance_report(const Forest& f, TreatmentPair contrast) {
  std::vector<BalanceRow> rows;
  rows.reserve(static_cast<std::size_t>(f.data.p()));
  for (int c = 0; c < f.data.p(); ++c) {
    const auto column = feature_values_b(f, c);
    BalanceRow row;
    row.feature = f.data.schema[static_cast<std::size_t>(c)].name;
    std::vector<double> xm, xl;
    for (int b = 0; b < f.n_b(); ++b) {
      if (f.treat_b[static_cast<std::size_t>(b)] == contrast.m)
        xm.push_back(column[static_cast<std::size_t>(b)]);
      else if (f.treat_b[static_cast<std::size_t>(b)] == contrast.l)
        xl.push_back(column[static_cast<std::size_t>(b)]);
    }
    row.mean_m = stats::mean(xm);
    row.mean_l = stats::mean(xl);
    row.difference = row.mean_m - row.mean_l;
    row.standardized_pct = standardized_diff(column, f.treat_b, contrast.m, contrast.l);
    row.post_estimation = post_estimation_balance(f, column, contrast);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mcf
