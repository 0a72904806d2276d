// Honest regression forest for E(Y|X): the same tree machinery with a
// single pseudo-treatment and the plain MSE criterion. Each tree halves its
// subsample, one half builds the structure and the other provides the leaf
// means, so structure never depends on the outcomes it predicts with.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mcf/common.hpp"
#include "mcf/tree.hpp"

namespace mcf {

struct RegressionForestConfig {
  int n_trees = 200;
  double subsample_ratio = 0.5;
  int min_leaf = 5;
  double feature_poisson_mean = 2.0;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct RegressionTree {
  Tree tree;
  std::vector<int> populate_rows;   // rows of the training view
  std::vector<double> leaf_mean;    // NaN when no populate member landed there
};

struct RegressionForest {
  std::vector<RegressionTree> trees;
  double fallback_mean = 0.0;  // overall populate mean, used when all leaves miss

  double predict_row(const Dataset& d, int row) const {
    long double sum = 0.0L;
    int used = 0;
    for (const auto& rt : trees) {
      const int leaf = rt.tree.route(d, row);
      const double m = rt.leaf_mean[static_cast<std::size_t>(leaf)];
      if (std::isnan(m)) continue;
      sum += m;
      ++used;
    }
    if (used == 0) return fallback_mean;
    return static_cast<double>(sum / static_cast<long double>(used));
  }
};

namespace detail {

inline std::vector<int> draw_without_replacement(int n, int k, std::mt19937_64& gen) {
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(gen))]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

}  // namespace detail

// Trains on the given view. The view's treatments are ignored: trees are
// grown against a single pseudo-treatment.
inline RegressionForest train_regression_forest(const Dataset& view,
                                                std::span<const double> y,
                                                const RegressionForestConfig& cfg) {
  if (view.n() < 4) throw DataError("regression forest needs at least 4 rows");
  Dataset d = view;  // local copy with pseudo-treatment and the supplied outcome
  d.m = 1;
  d.treatment.assign(static_cast<std::size_t>(d.n()), 0);
  d.outcome.assign(y.begin(), y.end());

  TreeConfig tree_cfg;
  tree_cfg.min_leaf = cfg.min_leaf;
  tree_cfg.min_leaf_per_treatment = 1;
  tree_cfg.feature_poisson_mean = cfg.feature_poisson_mean;
  tree_cfg.criterion.rule = SplitRule::basic_mse;
  tree_cfg.criterion.contrasts = ContrastSet::all_pairs(1);

  const int sub = std::max(2, static_cast<int>(std::floor(cfg.subsample_ratio * d.n())));
  RegressionForest forest;
  forest.trees.resize(static_cast<std::size_t>(cfg.n_trees));
  {
    long double sum = 0.0L;
    for (double v : d.outcome) sum += v;
    forest.fallback_mean = static_cast<double>(sum / static_cast<long double>(d.n()));
  }

  parallel_for(static_cast<std::size_t>(cfg.n_trees), cfg.threads, [&](std::size_t ti) {
    auto gen = rng::make_stream(cfg.seed, rng::Domain::tree, ti);
    auto sample = detail::draw_without_replacement(d.n(), std::min(sub, d.n()), gen);
    const int build_n = (static_cast<int>(sample.size()) + 1) / 2;
    std::vector<int> build(sample.begin(), sample.begin() + build_n);
    std::vector<int> populate(sample.begin() + build_n, sample.end());
    if (populate.empty()) populate = build;

    RegressionTree rt;
    rt.tree = grow_tree(d, std::move(build), tree_cfg, nullptr, gen, ti);
    std::sort(populate.begin(), populate.end());
    rt.populate_rows = std::move(populate);
    rt.leaf_mean.assign(static_cast<std::size_t>(rt.tree.leaf_count()),
                        std::numeric_limits<double>::quiet_NaN());
    std::vector<long double> sums(static_cast<std::size_t>(rt.tree.leaf_count()), 0.0L);
    std::vector<int> counts(static_cast<std::size_t>(rt.tree.leaf_count()), 0);
    for (int r : rt.populate_rows) {
      const int leaf = rt.tree.route(d, r);
      sums[static_cast<std::size_t>(leaf)] += d.outcome[static_cast<std::size_t>(r)];
      ++counts[static_cast<std::size_t>(leaf)];
    }
    for (int leaf = 0; leaf < rt.tree.leaf_count(); ++leaf) {
      if (counts[static_cast<std::size_t>(leaf)] > 0)
        rt.leaf_mean[static_cast<std::size_t>(leaf)] =
            static_cast<double>(sums[static_cast<std::size_t>(leaf)] /
                                static_cast<long double>(counts[static_cast<std::size_t>(leaf)]));
    }
    forest.trees[ti] = std::move(rt);
  });
  return forest;
}

}  // namespace mcf
