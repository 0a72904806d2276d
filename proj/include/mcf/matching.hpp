// Nearest-neighbor matching across treatment states. For every observation
// and every foreign treatment the closest same-schema observation is found
// under a diagonal inverse-variance metric, and its outcome is stored for
// the correlated-error split criterion.
#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <span>
#include <vector>

#include "mcf/common.hpp"
#include "mcf/dataset.hpp"

namespace mcf {

struct ScaleVector {
  std::vector<double> inv_var;  // 1/sample-variance per feature; 0 for constants
};

// Diagonal metric weights: 1 over the (n-1)-denominator variance of each
// feature column. Constant columns carry no distance.
inline ScaleVector feature_scales(const Dataset& d) {
  if (d.n() < 2) throw DataError("feature_scales requires n >= 2");
  ScaleVector s;
  s.inv_var.reserve(static_cast<std::size_t>(d.p()));
  for (int c = 0; c < d.p(); ++c) {
    const double v = stats::sample_variance(d.columns[static_cast<std::size_t>(c)]);
    s.inv_var.push_back(v > 0.0 ? 1.0 / v : 0.0);
  }
  return s;
}

struct MatchedOutcomes {
  int n = 0;
  int m = 0;
  std::vector<double> y_tilde;  // n x m, row-major

  double at(int row, int d) const {
    return y_tilde[static_cast<std::size_t>(row) * static_cast<std::size_t>(m) +
                   static_cast<std::size_t>(d)];
  }
  double& at(int row, int d) {
    return y_tilde[static_cast<std::size_t>(row) * static_cast<std::size_t>(m) +
                   static_cast<std::size_t>(d)];
  }
};

inline double scaled_sq_distance(const Dataset& d, const ScaleVector& s, int i, int j) {
  double dist = 0.0;
  for (int c = 0; c < d.p(); ++c) {
    const double diff = d.feature(c, i) - d.feature(c, j);
    dist += s.inv_var[static_cast<std::size_t>(c)] * diff * diff;
  }
  return dist;
}

// For each row i and each treatment d != d_i, records the outcome of the
// nearest treatment-d row; ties break toward the lowest row index. The own
// column keeps the row's outcome.
inline MatchedOutcomes match_neighbors(const Dataset& d, const ScaleVector& s,
                                       int threads = 1) {
  const auto counts = d.treatment_counts();
  for (int t = 0; t < d.m; ++t)
    if (counts[static_cast<std::size_t>(t)] == 0)
      throw DataError("treatment " + std::to_string(t) + " has no observations to match");

  std::vector<std::vector<int>> pool(static_cast<std::size_t>(d.m));
  for (int r = 0; r < d.n(); ++r)
    pool[static_cast<std::size_t>(d.treatment[static_cast<std::size_t>(r)])].push_back(r);

  MatchedOutcomes out;
  out.n = d.n();
  out.m = d.m;
  out.y_tilde.assign(static_cast<std::size_t>(d.n()) * static_cast<std::size_t>(d.m), 0.0);

  parallel_for(static_cast<std::size_t>(d.n()), threads, [&](std::size_t row) {
    const int i = static_cast<int>(row);
    const int di = d.treatment[row];
    for (int t = 0; t < d.m; ++t) {
      if (t == di) {
        out.at(i, t) = d.outcome[row];
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      int best_row = -1;
      for (int j : pool[static_cast<std::size_t>(t)]) {
        const double dist = scaled_sq_distance(d, s, i, j);
        if (dist < best) {
          best = dist;
          best_row = j;
        }
      }
      out.at(i, t) = d.outcome[static_cast<std::size_t>(best_row)];
    }
  });
  return out;
}

// Audit export: one row per observation, one column per treatment.
inline void save_matched_csv(const MatchedOutcomes& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write matched-outcome file '" + path + "'");
  out << "row";
  for (int t = 0; t < m.m; ++t) out << ",y_tilde_" << t;
  out << '\n';
  out.precision(17);
  for (int i = 0; i < m.n; ++i) {
    out << i;
    for (int t = 0; t < m.m; ++t) out << ',' << m.at(i, t);
    out << '\n';
  }
}

}  // namespace mcf
