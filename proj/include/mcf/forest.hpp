// Forest training pipeline and the weights-based representation of every
// estimate. All point estimates flow through sparse signed weight vectors
// over the estimation sample, which is what makes one inference path work
// for individualized, group, and average effects alike.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcf/centering.hpp"
#include "mcf/common.hpp"
#include "mcf/criteria.hpp"
#include "mcf/dataset.hpp"
#include "mcf/matching.hpp"
#include "mcf/regression.hpp"
#include "mcf/tree.hpp"

namespace mcf {

enum class EstimatorKind : std::uint8_t {
  basic = 0,        // one regression forest per treatment, two-sample honest
  basic_onesam = 1, // basic with per-tree build/estimate halves instead
  onef = 2,         // one joint forest, per-treatment MSE criterion
  onef_mce = 3,     // joint forest with the matched correlated-error term
  onef_vart = 4,    // joint forest maximising effect heterogeneity
};

inline SplitRule split_rule_for(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::basic:
    case EstimatorKind::basic_onesam:
      return SplitRule::basic_mse;
    case EstimatorKind::onef:
      return SplitRule::onef;
    case EstimatorKind::onef_mce:
      return SplitRule::onef_mce;
    case EstimatorKind::onef_vart:
      return SplitRule::onef_vart;
  }
  return SplitRule::onef_mce;
}

inline std::string estimator_name(EstimatorKind e, bool penalty, int lc_folds) {
  std::string name;
  switch (e) {
    case EstimatorKind::basic: name = "basic"; break;
    case EstimatorKind::basic_onesam: name = "basic_onesam"; break;
    case EstimatorKind::onef: name = "onef"; break;
    case EstimatorKind::onef_mce: name = "onef_mce"; break;
    case EstimatorKind::onef_vart: name = "onef_vart"; break;
  }
  if (penalty) name += ".pen";
  if (lc_folds > 0) name += ".lc" + std::to_string(lc_folds);
  return name;
}

struct ForestConfig {
  EstimatorKind estimator = EstimatorKind::onef_mce;
  bool penalty = false;
  int lc_folds = 0;   // 0 disables local centering
  int lc_trees = 0;   // 0 = n_trees
  int n_trees = 1000;
  double subsample_ratio = 0.5;
  double split_fraction = 0.5;
  TreeConfig tree;
  std::uint64_t seed = 17;
  int threads = 1;
  int knn_k = 0;  // 0 = ceil(2 sqrt(N_B)) at inference time
  std::optional<double> penalty_lambda_override;
};

inline void validate_config(const ForestConfig& cfg, int m_treatments) {
  if (cfg.n_trees < 1) throw ConfigError("n_trees must be at least 1");
  if (!(cfg.subsample_ratio > 0.0 && cfg.subsample_ratio <= 1.0))
    throw ConfigError("subsample_ratio must lie in (0, 1]");
  if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0))
    throw ConfigError("split_fraction must lie strictly between 0 and 1");
  const bool basic = cfg.estimator == EstimatorKind::basic ||
                     cfg.estimator == EstimatorKind::basic_onesam;
  if (basic && cfg.penalty)
    throw ConfigError("the propensity penalty is undefined for per-treatment forests");
  if (cfg.estimator == EstimatorKind::basic_onesam && cfg.lc_folds > 0)
    throw ConfigError("local centering requires the two-sample pipeline");
  if (cfg.lc_folds == 1 || cfg.lc_folds < 0)
    throw ConfigError("lc_folds must be 0 or at least 2");
  if (!basic && cfg.tree.min_leaf < m_treatments * cfg.tree.min_leaf_per_treatment)
    throw ConfigError("min_leaf must be at least m * min_leaf_per_treatment");
  if (cfg.tree.min_leaf < 1) throw ConfigError("min_leaf must be positive");
  if (cfg.penalty_lambda_override && !(*cfg.penalty_lambda_override >= 0.0 &&
                                       std::isfinite(*cfg.penalty_lambda_override)))
    throw ConfigError("penalty lambda must be finite and nonnegative");
}

enum class EffectLevel : std::uint8_t { iate = 0, gate = 1, ate = 2 };

struct EvalTag {
  EffectLevel level = EffectLevel::iate;
  double group_value = 0.0;  // meaningful for gate
  int eval_id = -1;          // caller-defined evaluation point id
};

// Signed, normalized weights over estimation-sample positions. For contrast
// (m, l): entries on treatment-m observations sum to +1, entries on
// treatment-l observations sum to -1, all other treatments carry zero.
struct WeightVector {
  TreatmentPair contrast;
  std::vector<std::pair<int, double>> entries;  // (estimation position, weight), sorted
  EvalTag tag;
  int used_pos = 0;  // trees contributing the positive side
  int skipped_pos = 0;
  int used_neg = 0;
  int skipped_neg = 0;

  double sum_positive() const {
    long double s = 0.0L;
    for (const auto& [idx, w] : entries)
      if (w > 0.0) s += w;
    return static_cast<double>(s);
  }
  double sum_negative() const {
    long double s = 0.0L;
    for (const auto& [idx, w] : entries)
      if (w < 0.0) s += w;
    return static_cast<double>(s);
  }
};

inline double weight_dot(const WeightVector& w, std::span<const double> y) {
  long double s = 0.0L;
  for (const auto& [idx, value] : w.entries) s += static_cast<long double>(value) * y[static_cast<std::size_t>(idx)];
  return static_cast<double>(s);
}

struct Forest {
  ForestConfig config;
  Dataset data;       // training data, original row order
  SampleSplit split;  // one-sample mode: both halves are all rows
  ScaleVector scales;          // matching metric (onef_mce only)
  MatchedOutcomes matched;     // over build-sample positions (onef_mce only)
  std::vector<PopulatedTree> trees;
  std::vector<int> tree_treatment;  // -1 joint; >= 0 for per-treatment forests
  std::vector<double> center_offset_a;  // empty when centering off
  std::vector<double> center_offset_b;
  std::vector<double> y_a;  // build-sample outcomes as grown on (centered if lc)
  std::vector<double> y_b;  // estimation outcomes used by every weight dot
  std::vector<int> treat_a;
  std::vector<int> treat_b;
  double lambda_used = 0.0;
  int degenerate_count = 0;

  int m() const { return data.m; }
  int n_a() const { return static_cast<int>(split.a_indices.size()); }
  int n_b() const { return static_cast<int>(split.b_indices.size()); }

  int knn_k() const {
    if (config.knn_k > 0) return std::min(config.knn_k, n_b());
    return std::min(n_b(),
                    static_cast<int>(std::ceil(2.0 * std::sqrt(static_cast<double>(n_b())))));
  }

  void gather_b_row(int b_pos, std::vector<double>& x) const {
    const int row = split.b_indices[static_cast<std::size_t>(b_pos)];
    x.resize(static_cast<std::size_t>(data.p()));
    for (int c = 0; c < data.p(); ++c) x[static_cast<std::size_t>(c)] = data.feature(c, row);
  }
};

namespace detail {

// Dense accumulator with a dirty list; extraction yields sorted sparse
// entries and resets in O(nnz).
struct WeightWorkspace {
  std::vector<double> acc;
  std::vector<std::uint8_t> used;
  std::vector<int> dirty;

  void ensure(std::size_t n) {
    if (acc.size() < n) {
      acc.assign(n, 0.0);
      used.assign(n, 0);
    }
  }
  void add(int idx, double v) {
    if (!used[static_cast<std::size_t>(idx)]) {
      used[static_cast<std::size_t>(idx)] = 1;
      dirty.push_back(idx);
    }
    acc[static_cast<std::size_t>(idx)] += v;
  }
  void extract(double scale_pos, double scale_neg,
               std::vector<std::pair<int, double>>& out) {
    std::sort(dirty.begin(), dirty.end());
    out.clear();
    out.reserve(dirty.size());
    for (int idx : dirty) {
      const double v = acc[static_cast<std::size_t>(idx)];
      if (v != 0.0) out.emplace_back(idx, v > 0.0 ? v * scale_pos : v * scale_neg);
      acc[static_cast<std::size_t>(idx)] = 0.0;
      used[static_cast<std::size_t>(idx)] = 0;
    }
    dirty.clear();
  }
};

}  // namespace detail

// Training ------------------------------------------------------------------

inline Forest train_forest(const Dataset& d, ForestConfig cfg) {
  validate_config(cfg, d.m);
  const bool one_sample = cfg.estimator == EstimatorKind::basic_onesam;
  const bool basic = cfg.estimator == EstimatorKind::basic ||
                     cfg.estimator == EstimatorKind::basic_onesam;
  cfg.tree.criterion.rule = split_rule_for(cfg.estimator);
  cfg.tree.criterion.penalty_lambda.reset();
  if (basic) {
    // Per-treatment trees grow against a single pseudo-treatment.
    cfg.tree.criterion.contrasts = ContrastSet::all_pairs(1);
  } else if (cfg.tree.criterion.contrasts.pairs.empty()) {
    cfg.tree.criterion.contrasts = ContrastSet::all_pairs(d.m);
  }

  Forest f;
  f.data = d;
  if (one_sample) {
    f.split.seed = cfg.seed;
    f.split.a_indices.resize(static_cast<std::size_t>(d.n()));
    std::iota(f.split.a_indices.begin(), f.split.a_indices.end(), 0);
    f.split.b_indices = f.split.a_indices;
  } else {
    f.split = split_ab(d, cfg.seed, cfg.split_fraction);
  }

  Dataset a_view = d.subset(f.split.a_indices);
  Dataset b_view = one_sample ? a_view : d.subset(f.split.b_indices);
  f.treat_a = a_view.treatment;
  f.treat_b = b_view.treatment;

  if (cfg.lc_folds > 0) {
    RegressionForestConfig rc;
    rc.n_trees = cfg.lc_trees > 0 ? cfg.lc_trees : cfg.n_trees;
    rc.subsample_ratio = cfg.subsample_ratio;
    rc.min_leaf = cfg.tree.min_leaf;
    rc.feature_poisson_mean = cfg.tree.feature_poisson_mean;
    rc.threads = cfg.threads;
    const CenteringModel model = fit_centering(a_view, cfg.lc_folds, rc, cfg.seed);
    f.center_offset_a = centering_offsets_build(model, a_view);
    f.center_offset_b = centering_offsets_heldout(model, b_view);
    a_view.outcome = recenter(a_view.outcome, f.center_offset_a);
    b_view.outcome = recenter(b_view.outcome, f.center_offset_b);
  }
  f.y_a = a_view.outcome;
  f.y_b = b_view.outcome;

  if (cfg.estimator == EstimatorKind::onef_mce) {
    f.scales = feature_scales(a_view);
    f.matched = match_neighbors(a_view, f.scales, cfg.threads);
  }

  if (cfg.penalty) {
    double lambda;
    if (cfg.penalty_lambda_override) {
      lambda = *cfg.penalty_lambda_override;
    } else if (cfg.estimator == EstimatorKind::onef_vart) {
      // 100 x the sum over contrasts of squared treatment-mean differences.
      std::vector<long double> sums(static_cast<std::size_t>(d.m), 0.0L);
      std::vector<int> counts(static_cast<std::size_t>(d.m), 0);
      for (int r = 0; r < a_view.n(); ++r) {
        const auto t = static_cast<std::size_t>(a_view.treatment[static_cast<std::size_t>(r)]);
        sums[t] += a_view.outcome[static_cast<std::size_t>(r)];
        ++counts[t];
      }
      double total = 0.0;
      const auto& contrasts = cfg.tree.criterion.contrasts;
      for (std::size_t pi = 0; pi < contrasts.pairs.size(); ++pi) {
        const auto [pm, pl] = contrasts.pairs[pi];
        const double mm = static_cast<double>(sums[static_cast<std::size_t>(pm)]) /
                          counts[static_cast<std::size_t>(pm)];
        const double ml = static_cast<double>(sums[static_cast<std::size_t>(pl)]) /
                          counts[static_cast<std::size_t>(pl)];
        total += contrasts.weights[pi] * (mm - ml) * (mm - ml);
      }
      lambda = 100.0 * total;
    } else {
      lambda = stats::sample_variance(a_view.outcome);
    }
    cfg.tree.criterion.penalty_lambda = lambda;
    f.lambda_used = lambda;
  }
  f.config = cfg;

  if (!basic) {
    const int sub =
        std::max(1, static_cast<int>(std::floor(cfg.subsample_ratio * a_view.n())));
    f.trees.resize(static_cast<std::size_t>(cfg.n_trees));
    f.tree_treatment.assign(static_cast<std::size_t>(cfg.n_trees), -1);
    const MatchedOutcomes* matched =
        cfg.estimator == EstimatorKind::onef_mce ? &f.matched : nullptr;
    parallel_for(static_cast<std::size_t>(cfg.n_trees), cfg.threads, [&](std::size_t ti) {
      auto gen = rng::make_stream(cfg.seed, rng::Domain::tree, ti);
      auto sample = detail::draw_without_replacement(a_view.n(), std::min(sub, a_view.n()), gen);
      Tree tree = grow_tree(a_view, std::move(sample), cfg.tree, matched, gen, ti);
      f.trees[ti] = populate_honest(std::move(tree), b_view);
    });
  } else {
    // One regression forest per treatment; trees are grown on that
    // treatment's rows only but leaves are populated with the full
    // estimation sample so that all diagnostics see every treatment.
    f.trees.resize(static_cast<std::size_t>(cfg.n_trees) * static_cast<std::size_t>(d.m));
    f.tree_treatment.assign(f.trees.size(), -1);
    std::vector<std::vector<int>> rows_by_treatment(static_cast<std::size_t>(d.m));
    for (int r = 0; r < a_view.n(); ++r)
      rows_by_treatment[static_cast<std::size_t>(a_view.treatment[static_cast<std::size_t>(r)])]
          .push_back(r);
    for (int t = 0; t < d.m; ++t) {
      if (rows_by_treatment[static_cast<std::size_t>(t)].size() < 2)
        throw EstimationError("treatment " + std::to_string(t) +
                              " has too few build observations");
    }
    parallel_for(f.trees.size(), cfg.threads, [&](std::size_t slot) {
      const int t = static_cast<int>(slot) / cfg.n_trees;
      const auto& rows = rows_by_treatment[static_cast<std::size_t>(t)];
      auto gen = rng::make_stream(cfg.seed, rng::Domain::tree, slot);
      const int nt = static_cast<int>(rows.size());
      const int sub_t =
          std::max(2, static_cast<int>(std::floor(cfg.subsample_ratio * nt)));
      auto local = detail::draw_without_replacement(nt, std::min(sub_t, nt), gen);

      Dataset view_t = a_view.subset(rows);
      view_t.m = 1;
      view_t.treatment.assign(static_cast<std::size_t>(view_t.n()), 0);

      std::vector<int> build_local, populate_local;
      if (one_sample) {
        const int build_n = (static_cast<int>(local.size()) + 1) / 2;
        build_local.assign(local.begin(), local.begin() + build_n);
        populate_local.assign(local.begin() + build_n, local.end());
        if (populate_local.empty()) populate_local = build_local;
      } else {
        build_local = local;
      }

      // Remap the subsample to build-sample positions so out-of-subsample
      // evaluation and serialization use one index space.
      Tree tree = grow_tree(view_t, build_local, cfg.tree, nullptr, gen, slot);
      for (int& r : tree.subsample) r = rows[static_cast<std::size_t>(r)];
      std::sort(tree.subsample.begin(), tree.subsample.end());

      PopulatedTree pt;
      if (one_sample) {
        // Populate with the held-out half of this tree's subsample.
        std::vector<int> populate_rows;
        populate_rows.reserve(populate_local.size());
        for (int r : populate_local) populate_rows.push_back(rows[static_cast<std::size_t>(r)]);
        std::sort(populate_rows.begin(), populate_rows.end());
        pt.tree = std::move(tree);
        pt.leaves.resize(static_cast<std::size_t>(pt.tree.leaf_count()));
        for (auto& leaf : pt.leaves) {
          leaf.members.assign(static_cast<std::size_t>(b_view.m), {});
          leaf.mean.assign(static_cast<std::size_t>(b_view.m),
                           std::numeric_limits<double>::quiet_NaN());
        }
        for (int r : populate_rows) {
          const int leaf = pt.tree.route(b_view, r);
          auto& le = pt.leaves[static_cast<std::size_t>(leaf)];
          le.members[static_cast<std::size_t>(b_view.treatment[static_cast<std::size_t>(r)])]
              .push_back(r);
          ++le.total;
        }
        for (auto& leaf : pt.leaves) {
          for (int tt = 0; tt < b_view.m; ++tt) {
            const auto& ms = leaf.members[static_cast<std::size_t>(tt)];
            if (ms.empty()) continue;
            long double sum = 0.0L;
            for (int r : ms) sum += b_view.outcome[static_cast<std::size_t>(r)];
            leaf.mean[static_cast<std::size_t>(tt)] =
                static_cast<double>(sum / static_cast<long double>(ms.size()));
          }
        }
      } else {
        pt = populate_honest(std::move(tree), b_view);
      }
      f.trees[slot] = std::move(pt);
      f.tree_treatment[slot] = t;
    });
  }

  for (const auto& pt : f.trees)
    if (pt.tree.degenerate) ++f.degenerate_count;
  if (f.degenerate_count == static_cast<int>(f.trees.size()))
    throw EstimationError("all trees are degenerate; increase the subsample or sample size");
  return f;
}

// Weight extraction ----------------------------------------------------------

namespace detail {

inline WeightVector iate_weights_impl(const Forest& f, std::span<const double> x,
                                      TreatmentPair contrast, EvalTag tag,
                                      WeightWorkspace& ws) {
  WeightVector w;
  w.contrast = contrast;
  w.tag = tag;
  ws.ensure(static_cast<std::size_t>(f.n_b()));

  const bool basic = f.config.estimator == EstimatorKind::basic ||
                     f.config.estimator == EstimatorKind::basic_onesam;
  if (!basic) {
    int used = 0, skipped = 0, active = 0;
    for (const auto& pt : f.trees) {
      if (pt.tree.degenerate) continue;
      ++active;
      const int leaf = pt.tree.route_point(x);
      const auto& mm = pt.leaves[static_cast<std::size_t>(leaf)]
                           .members[static_cast<std::size_t>(contrast.m)];
      const auto& ml = pt.leaves[static_cast<std::size_t>(leaf)]
                           .members[static_cast<std::size_t>(contrast.l)];
      if (mm.empty() || ml.empty()) {
        ++skipped;
        continue;
      }
      ++used;
      const double wm = 1.0 / static_cast<double>(mm.size());
      const double wl = -1.0 / static_cast<double>(ml.size());
      for (int j : mm) ws.add(j, wm);
      for (int j : ml) ws.add(j, wl);
    }
    if (used == 0 || 2 * skipped > active)
      throw NoSupportError("no support at evaluation point for contrast (" +
                               std::to_string(contrast.m) + "," + std::to_string(contrast.l) +
                               "): " + std::to_string(skipped) + " of " +
                               std::to_string(active) + " trees skipped",
                           skipped);
    const double scale = 1.0 / static_cast<double>(used);
    ws.extract(scale, scale, w.entries);
    w.used_pos = w.used_neg = used;
    w.skipped_pos = w.skipped_neg = skipped;
    return w;
  }

  // Per-treatment forests: each side of the contrast comes from its own
  // forest and is renormalized over that forest's surviving trees.
  int used_side[2] = {0, 0};
  int skipped_side[2] = {0, 0};
  int active_side[2] = {0, 0};
  const int sides[2] = {contrast.m, contrast.l};
  for (std::size_t ti = 0; ti < f.trees.size(); ++ti) {
    const int t = f.tree_treatment[ti];
    int side = -1;
    if (t == sides[0]) side = 0;
    else if (t == sides[1]) side = 1;
    if (side < 0) continue;
    const auto& pt = f.trees[ti];
    if (pt.tree.degenerate) continue;
    ++active_side[side];
    const int leaf = pt.tree.route_point(x);
    const auto& members = pt.leaves[static_cast<std::size_t>(leaf)]
                              .members[static_cast<std::size_t>(sides[side])];
    if (members.empty()) {
      ++skipped_side[side];
      continue;
    }
    ++used_side[side];
    const double contribution =
        (side == 0 ? 1.0 : -1.0) / static_cast<double>(members.size());
    for (int j : members) ws.add(j, contribution);
  }
  for (int side = 0; side < 2; ++side) {
    if (used_side[side] == 0 || 2 * skipped_side[side] > active_side[side])
      throw NoSupportError("no support at evaluation point for treatment " +
                               std::to_string(sides[side]) + ": " +
                               std::to_string(skipped_side[side]) + " of " +
                               std::to_string(active_side[side]) + " trees skipped",
                           skipped_side[side]);
  }
  ws.extract(1.0 / used_side[0], 1.0 / used_side[1], w.entries);
  w.used_pos = used_side[0];
  w.skipped_pos = skipped_side[0];
  w.used_neg = used_side[1];
  w.skipped_neg = skipped_side[1];
  return w;
}

}  // namespace detail

inline WeightVector iate_weights(const Forest& f, std::span<const double> x,
                                 TreatmentPair contrast, EvalTag tag = {}) {
  detail::WeightWorkspace ws;
  return detail::iate_weights_impl(f, x, contrast, tag, ws);
}

inline double predict_iate(const Forest& f, std::span<const double> x,
                           TreatmentPair contrast) {
  return weight_dot(iate_weights(f, x, contrast), f.y_b);
}

// Out-of-subsample tuning ----------------------------------------------------

// Value of the forest's own splitting objective evaluated on the per-tree
// out-of-subsample build observations, with the trained leaf means held
// fixed. The penalty term is a split-level device and is not part of the
// prediction objective.
inline double oob_objective(const Forest& f) {
  Dataset a_view = f.data.subset(f.split.a_indices);
  a_view.outcome = f.y_a;
  const SplitRule rule = split_rule_for(f.config.estimator);
  const ContrastSet contrasts = ContrastSet::all_pairs(f.data.m);

  long double total = 0.0L;
  int scored_trees = 0;
  std::vector<std::uint8_t> in_subsample(static_cast<std::size_t>(a_view.n()));
  for (std::size_t ti = 0; ti < f.trees.size(); ++ti) {
    const auto& pt = f.trees[ti];
    if (pt.tree.degenerate) continue;
    std::fill(in_subsample.begin(), in_subsample.end(), 0);
    for (int r : pt.tree.subsample) in_subsample[static_cast<std::size_t>(r)] = 1;

    const int forest_treatment = f.tree_treatment[ti];
    const int n_leaves = pt.tree.leaf_count();
    const int mt = forest_treatment < 0 ? a_view.m : 1;
    std::vector<std::vector<int>> leaf_cnt(static_cast<std::size_t>(n_leaves),
                                           std::vector<int>(static_cast<std::size_t>(mt), 0));
    std::vector<std::vector<double>> leaf_sq(static_cast<std::size_t>(n_leaves),
                                             std::vector<double>(static_cast<std::size_t>(mt), 0.0));
    std::vector<std::vector<double>> leaf_mce(
        static_cast<std::size_t>(n_leaves),
        std::vector<double>(contrasts.pairs.size(), 0.0));
    std::vector<std::vector<int>> leaf_mce_n(
        static_cast<std::size_t>(n_leaves), std::vector<int>(contrasts.pairs.size(), 0));
    std::vector<int> leaf_total(static_cast<std::size_t>(n_leaves), 0);

    for (int r = 0; r < a_view.n(); ++r) {
      if (in_subsample[static_cast<std::size_t>(r)]) continue;
      const int tr = a_view.treatment[static_cast<std::size_t>(r)];
      if (forest_treatment >= 0 && tr != forest_treatment) continue;
      const int leaf = pt.tree.route(a_view, r);
      const auto& grow = pt.tree.leaf_grow[static_cast<std::size_t>(leaf)];
      const double y = a_view.outcome[static_cast<std::size_t>(r)];
      ++leaf_total[static_cast<std::size_t>(leaf)];
      if (forest_treatment >= 0) {
        const double mu = grow.mean[0];
        if (!std::isnan(mu)) {
          ++leaf_cnt[static_cast<std::size_t>(leaf)][0];
          leaf_sq[static_cast<std::size_t>(leaf)][0] += (mu - y) * (mu - y);
        }
        continue;
      }
      const double mu = grow.mean[static_cast<std::size_t>(tr)];
      if (!std::isnan(mu)) {
        ++leaf_cnt[static_cast<std::size_t>(leaf)][static_cast<std::size_t>(tr)];
        leaf_sq[static_cast<std::size_t>(leaf)][static_cast<std::size_t>(tr)] +=
            (mu - y) * (mu - y);
      }
      if (rule == SplitRule::onef_mce) {
        for (std::size_t pi = 0; pi < contrasts.pairs.size(); ++pi) {
          const auto [pm, pl] = contrasts.pairs[pi];
          if (tr != pm && tr != pl) continue;
          const double mu_m = grow.mean[static_cast<std::size_t>(pm)];
          const double mu_l = grow.mean[static_cast<std::size_t>(pl)];
          if (std::isnan(mu_m) || std::isnan(mu_l)) continue;
          leaf_mce[static_cast<std::size_t>(leaf)][pi] +=
              (mu_m - f.matched.at(r, pm)) * (mu_l - f.matched.at(r, pl));
          ++leaf_mce_n[static_cast<std::size_t>(leaf)][pi];
        }
      }
    }

    long double tree_value = 0.0L;
    for (int leaf = 0; leaf < n_leaves; ++leaf) {
      if (leaf_total[static_cast<std::size_t>(leaf)] == 0) continue;
      if (rule == SplitRule::basic_mse) {
        const int c = leaf_cnt[static_cast<std::size_t>(leaf)][0];
        if (c > 0) tree_value += leaf_sq[static_cast<std::size_t>(leaf)][0] / c;
        continue;
      }
      if (rule == SplitRule::onef_vart) {
        const auto& grow = pt.tree.leaf_grow[static_cast<std::size_t>(leaf)];
        double het = 0.0;
        bool ok = true;
        for (std::size_t pi = 0; pi < contrasts.pairs.size(); ++pi) {
          const auto [pm, pl] = contrasts.pairs[pi];
          const double mu_m = grow.mean[static_cast<std::size_t>(pm)];
          const double mu_l = grow.mean[static_cast<std::size_t>(pl)];
          if (std::isnan(mu_m) || std::isnan(mu_l)) {
            ok = false;
            break;
          }
          const double tau = mu_m - mu_l;
          het += contrasts.weights[pi] * tau * tau;
        }
        if (ok) tree_value -= leaf_total[static_cast<std::size_t>(leaf)] * het;
        continue;
      }
      for (std::size_t pi = 0; pi < contrasts.pairs.size(); ++pi) {
        const auto [pm, pl] = contrasts.pairs[pi];
        const int cm = leaf_cnt[static_cast<std::size_t>(leaf)][static_cast<std::size_t>(pm)];
        const int cl = leaf_cnt[static_cast<std::size_t>(leaf)][static_cast<std::size_t>(pl)];
        if (cm == 0 || cl == 0) continue;
        double value = leaf_sq[static_cast<std::size_t>(leaf)][static_cast<std::size_t>(pm)] / cm +
                       leaf_sq[static_cast<std::size_t>(leaf)][static_cast<std::size_t>(pl)] / cl;
        if (rule == SplitRule::onef_mce && leaf_mce_n[static_cast<std::size_t>(leaf)][pi] > 0)
          value -= 2.0 * leaf_mce[static_cast<std::size_t>(leaf)][pi] /
                   leaf_mce_n[static_cast<std::size_t>(leaf)][pi];
        tree_value += contrasts.weights[pi] * value;
      }
    }
    total += tree_value;
    ++scored_trees;
  }
  if (scored_trees == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(total / static_cast<long double>(scored_trees));
}

// Trains every configuration and returns the one whose own splitting
// objective, evaluated out-of-subsample, is smallest. Ties keep the first.
inline ForestConfig tune_oob(const Dataset& d, const std::vector<ForestConfig>& grid) {
  if (grid.empty()) throw ConfigError("tuning grid is empty");
  std::size_t best_index = 0;
  double best_value = std::numeric_limits<double>::infinity();
  bool first = true;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Forest f = train_forest(d, grid[i]);
    const double value = oob_objective(f);
    if (first || value < best_value) {
      first = false;
      best_value = value;
      best_index = i;
    }
  }
  return grid[best_index];
}

}  // namespace mcf
