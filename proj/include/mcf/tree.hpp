// Honest causal trees: split search over drawn feature subsets, recursive
// growth to a minimum leaf size on the build sample, and leaf population
// with the held-out estimation sample.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "mcf/criteria.hpp"
#include "mcf/dataset.hpp"
#include "mcf/matching.hpp"

namespace mcf {

struct TreeConfig {
  int min_leaf = 5;
  int min_leaf_per_treatment = 2;  // enforced for multi-treatment rules
  double feature_poisson_mean = 2.0;
  std::optional<int> max_depth;
  double min_daughter_share = 0.0;  // 0 disables the balance condition
  CriterionConfig criterion;
};

// Ordered splits send feature <= threshold left; categorical splits send
// codes in left_categories left (codes unseen while growing go right).
struct SplitDecision {
  int feature = -1;
  FeatureKind kind = FeatureKind::ordered;
  double threshold = 0.0;
  std::vector<int> left_categories;  // sorted; used when kind == categorical
  double criterion_value = kInfeasibleSplit;
};

struct TreeNode {
  bool is_leaf = true;
  int feature = -1;
  FeatureKind kind = FeatureKind::ordered;
  double threshold = 0.0;
  std::vector<int> left_categories;
  int left = -1;
  int right = -1;
  int leaf_index = -1;
};

// Per-leaf stats of the grow sample (used for out-of-subsample evaluation).
struct LeafGrowStats {
  std::vector<int> count;    // per treatment
  std::vector<double> mean;  // NaN when empty
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<LeafGrowStats> leaf_grow;
  std::vector<int> subsample;  // rows of the build sample this tree was grown on
  std::uint64_t stream_id = 0;
  bool degenerate = false;  // build subsample missed a treatment entirely

  int route(const Dataset& d, int row) const {
    int node = 0;
    while (!nodes[static_cast<std::size_t>(node)].is_leaf) {
      const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
      bool go_left;
      const double v = d.feature(nd.feature, row);
      if (nd.kind == FeatureKind::ordered) {
        go_left = v <= nd.threshold;
      } else {
        go_left = std::binary_search(nd.left_categories.begin(), nd.left_categories.end(),
                                     static_cast<int>(v));
      }
      node = go_left ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(node)].leaf_index;
  }

  int route_point(std::span<const double> x) const {
    int node = 0;
    while (!nodes[static_cast<std::size_t>(node)].is_leaf) {
      const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
      const double v = x[static_cast<std::size_t>(nd.feature)];
      bool go_left;
      if (nd.kind == FeatureKind::ordered) {
        go_left = v <= nd.threshold;
      } else {
        go_left = std::binary_search(nd.left_categories.begin(), nd.left_categories.end(),
                                     static_cast<int>(v));
      }
      node = go_left ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(node)].leaf_index;
  }

  int leaf_count() const { return static_cast<int>(leaf_grow.size()); }
};

namespace detail {

inline bool rule_needs_all_treatments(SplitRule rule) {
  return rule == SplitRule::onef || rule == SplitRule::onef_mce ||
         rule == SplitRule::onef_vart;
}

// Incremental accumulators for one side of a candidate split. Means and
// residual sums are reconstructed algebraically, which keeps the sweep
// linear in the node size per feature.
struct SweepAccumulator {
  std::vector<double> sum_y, sum_y2;
  std::vector<int> cnt;
  std::vector<double> s_m, s_l, prod;  // per contrast pair
  int n = 0;

  void reset(std::size_t m_treatments, std::size_t n_pairs) {
    sum_y.assign(m_treatments, 0.0);
    sum_y2.assign(m_treatments, 0.0);
    cnt.assign(m_treatments, 0);
    s_m.assign(n_pairs, 0.0);
    s_l.assign(n_pairs, 0.0);
    prod.assign(n_pairs, 0.0);
    n = 0;
  }

  void add(const Dataset& d, const ContrastSet& contrasts,
           const MatchedOutcomes* matched, int row) {
    const auto t = static_cast<std::size_t>(d.treatment[static_cast<std::size_t>(row)]);
    const double y = d.outcome[static_cast<std::size_t>(row)];
    ++cnt[t];
    sum_y[t] += y;
    sum_y2[t] += y * y;
    ++n;
    if (!matched) return;
    for (std::size_t pi = 0; pi < contrasts.pairs.size(); ++pi) {
      const auto [pm, pl] = contrasts.pairs[pi];
      const int ti = static_cast<int>(t);
      if (ti != pm && ti != pl) continue;
      const double ym = matched->at(row, pm);
      const double yl = matched->at(row, pl);
      s_m[pi] += ym;
      s_l[pi] += yl;
      prod[pi] += ym * yl;
    }
  }

  // Fills a NodeStats view of this side (or of total - this when `total`
  // is given).
  void fill(NodeStats& out, const ContrastSet& contrasts,
            const SweepAccumulator* total = nullptr) const {
    const std::size_t mt = cnt.size();
    out.count.resize(mt);
    out.mean.resize(mt);
    out.ssr.resize(mt);
    out.mce_sum.resize(contrasts.pairs.size());
    out.mce_count.resize(contrasts.pairs.size());
    out.n_total = total ? total->n - n : n;
    for (std::size_t t = 0; t < mt; ++t) {
      const int c = total ? total->cnt[t] - cnt[t] : cnt[t];
      const double sy = total ? total->sum_y[t] - sum_y[t] : sum_y[t];
      const double sy2 = total ? total->sum_y2[t] - sum_y2[t] : sum_y2[t];
      out.count[t] = c;
      if (c > 0) {
        const double mu = sy / c;
        out.mean[t] = mu;
        out.ssr[t] = std::max(0.0, sy2 - mu * sy);
      } else {
        out.mean[t] = std::numeric_limits<double>::quiet_NaN();
        out.ssr[t] = 0.0;
      }
    }
    for (std::size_t pi = 0; pi < contrasts.pairs.size(); ++pi) {
      const auto [pm, pl] = contrasts.pairs[pi];
      const int cm = out.count[static_cast<std::size_t>(pm)];
      const int cl = out.count[static_cast<std::size_t>(pl)];
      const int nml = cm + cl;
      out.mce_count[pi] = nml;
      if (cm == 0 || cl == 0 || nml == 0) {
        out.mce_sum[pi] = 0.0;
        continue;
      }
      const double sm = total ? total->s_m[pi] - s_m[pi] : s_m[pi];
      const double sl = total ? total->s_l[pi] - s_l[pi] : s_l[pi];
      const double pr = total ? total->prod[pi] - prod[pi] : prod[pi];
      const double mu_m = out.mean[static_cast<std::size_t>(pm)];
      const double mu_l = out.mean[static_cast<std::size_t>(pl)];
      out.mce_sum[pi] = nml * mu_m * mu_l - mu_m * sl - mu_l * sm + pr;
    }
  }
};

inline bool daughters_feasible(const NodeStats& left, const NodeStats& right,
                               const TreeConfig& cfg, int node_size) {
  if (left.n_total < cfg.min_leaf || right.n_total < cfg.min_leaf) return false;
  if (cfg.min_daughter_share > 0.0) {
    const double need = cfg.min_daughter_share * node_size;
    if (std::min(left.n_total, right.n_total) < need) return false;
  }
  if (rule_needs_all_treatments(cfg.criterion.rule)) {
    for (std::size_t t = 0; t < left.count.size(); ++t) {
      if (left.count[t] < cfg.min_leaf_per_treatment ||
          right.count[t] < cfg.min_leaf_per_treatment)
        return false;
    }
  }
  return true;
}

}  // namespace detail

// Searches the given candidate features for the feasible split minimising
// the configured criterion (plus penalty). Candidate features are scanned
// in ascending index order, thresholds in ascending value order, and ties
// keep the first candidate found, so the result is deterministic.
inline std::optional<SplitDecision> best_split(const Dataset& d,
                                               std::span<const int> node_rows,
                                               std::span<const int> candidate_features,
                                               const TreeConfig& cfg,
                                               const MatchedOutcomes* matched) {
  const int n = static_cast<int>(node_rows.size());
  if (n < 2 * cfg.min_leaf) return std::nullopt;

  const ContrastSet& contrasts = cfg.criterion.contrasts;
  const bool needs_matched = cfg.criterion.rule == SplitRule::onef_mce;
  const MatchedOutcomes* matched_used = needs_matched ? matched : nullptr;

  std::vector<int> features(candidate_features.begin(), candidate_features.end());
  std::sort(features.begin(), features.end());
  features.erase(std::unique(features.begin(), features.end()), features.end());

  detail::SweepAccumulator total, left;
  total.reset(static_cast<std::size_t>(d.m), contrasts.pairs.size());
  for (int r : node_rows) total.add(d, contrasts, matched_used, r);

  NodeStats left_stats, right_stats;
  SplitDecision best;
  bool found = false;

  std::vector<std::pair<double, int>> order;  // (sort key, row)
  order.reserve(static_cast<std::size_t>(n));

  for (int f : features) {
    const FeatureKind kind = d.schema[static_cast<std::size_t>(f)].kind;
    order.clear();

    std::vector<std::pair<int, int>> category_rank;  // (code, rank), sorted by code
    if (kind == FeatureKind::ordered) {
      for (int r : node_rows) order.emplace_back(d.feature(f, r), r);
      std::sort(order.begin(), order.end());
    } else {
      // Order the node's categories by pooled mean outcome and scan the
      // prefixes of that ordering as if the feature were ordered.
      std::vector<std::pair<int, std::pair<double, int>>> agg;  // code -> (sum, count)
      for (int r : node_rows) {
        const int code = static_cast<int>(d.feature(f, r));
        auto it = std::find_if(agg.begin(), agg.end(),
                               [code](const auto& e) { return e.first == code; });
        if (it == agg.end()) {
          agg.push_back({code, {d.outcome[static_cast<std::size_t>(r)], 1}});
        } else {
          it->second.first += d.outcome[static_cast<std::size_t>(r)];
          ++it->second.second;
        }
      }
      std::vector<std::pair<std::pair<double, int>, int>> ranking;  // ((mean, code), code)
      ranking.reserve(agg.size());
      for (const auto& [code, sc] : agg)
        ranking.push_back({{sc.first / sc.second, code}, code});
      std::sort(ranking.begin(), ranking.end());
      category_rank.reserve(ranking.size());
      for (std::size_t i = 0; i < ranking.size(); ++i)
        category_rank.emplace_back(ranking[i].second, static_cast<int>(i));
      std::sort(category_rank.begin(), category_rank.end());
      auto rank_of = [&](int code) {
        const auto it = std::lower_bound(category_rank.begin(), category_rank.end(),
                                         std::pair<int, int>{code, -1});
        return it->second;
      };
      for (int r : node_rows)
        order.emplace_back(static_cast<double>(rank_of(static_cast<int>(d.feature(f, r)))), r);
      std::sort(order.begin(), order.end());
    }

    if (order.front().first == order.back().first) continue;  // constant in node

    left.reset(static_cast<std::size_t>(d.m), contrasts.pairs.size());
    for (int i = 0; i + 1 < n; ++i) {
      left.add(d, contrasts, matched_used, order[static_cast<std::size_t>(i)].second);
      if (order[static_cast<std::size_t>(i)].first ==
          order[static_cast<std::size_t>(i + 1)].first)
        continue;
      left.fill(left_stats, contrasts);
      left.fill(right_stats, contrasts, &total);
      if (!detail::daughters_feasible(left_stats, right_stats, cfg, n)) continue;
      const double value = split_criterion(left_stats, right_stats, cfg.criterion);
      if (!std::isfinite(value)) continue;
      if (!found || value < best.criterion_value) {
        found = true;
        best.feature = f;
        best.kind = kind;
        best.criterion_value = value;
        if (kind == FeatureKind::ordered) {
          best.threshold = 0.5 * (order[static_cast<std::size_t>(i)].first +
                                  order[static_cast<std::size_t>(i + 1)].first);
          best.left_categories.clear();
        } else {
          const int boundary_rank = static_cast<int>(order[static_cast<std::size_t>(i)].first);
          best.left_categories.clear();
          for (const auto& [code, rank] : category_rank)
            if (rank <= boundary_rank) best.left_categories.push_back(code);
          best.threshold = 0.0;
        }
      }
    }
  }
  if (!found) return std::nullopt;
  return best;
}

// Grows one tree on the given subsample of the build dataset, splitting
// recursively until no feasible split remains. Deterministic given the rng
// stream. A subsample missing a treatment needed by the rule yields a
// degenerate stump that callers exclude.
inline Tree grow_tree(const Dataset& d, std::vector<int> subsample, const TreeConfig& cfg,
                      const MatchedOutcomes* matched, std::mt19937_64& gen,
                      std::uint64_t stream_id = 0) {
  Tree tree;
  tree.stream_id = stream_id;
  std::sort(subsample.begin(), subsample.end());
  tree.subsample = std::move(subsample);

  if (detail::rule_needs_all_treatments(cfg.criterion.rule)) {
    std::vector<int> counts(static_cast<std::size_t>(d.m), 0);
    for (int r : tree.subsample) ++counts[static_cast<std::size_t>(d.treatment[static_cast<std::size_t>(r)])];
    for (int t = 0; t < d.m; ++t) {
      if (counts[static_cast<std::size_t>(t)] == 0) {
        tree.degenerate = true;
        break;
      }
    }
  }

  const int p = d.p();
  std::vector<int> feature_pool(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) feature_pool[static_cast<std::size_t>(i)] = i;

  auto make_leaf = [&](int node_index, std::span<const int> rows) {
    TreeNode& nd = tree.nodes[static_cast<std::size_t>(node_index)];
    nd.is_leaf = true;
    nd.leaf_index = static_cast<int>(tree.leaf_grow.size());
    LeafGrowStats stats;
    stats.count.assign(static_cast<std::size_t>(d.m), 0);
    std::vector<double> sum(static_cast<std::size_t>(d.m), 0.0);
    for (int r : rows) {
      const auto t = static_cast<std::size_t>(d.treatment[static_cast<std::size_t>(r)]);
      ++stats.count[t];
      sum[t] += d.outcome[static_cast<std::size_t>(r)];
    }
    stats.mean.assign(static_cast<std::size_t>(d.m),
                      std::numeric_limits<double>::quiet_NaN());
    for (int t = 0; t < d.m; ++t)
      if (stats.count[static_cast<std::size_t>(t)] > 0)
        stats.mean[static_cast<std::size_t>(t)] =
            sum[static_cast<std::size_t>(t)] / stats.count[static_cast<std::size_t>(t)];
    tree.leaf_grow.push_back(std::move(stats));
  };

  struct WorkItem {
    int node_index;
    std::vector<int> rows;
    int depth;
  };
  std::vector<WorkItem> stack;
  tree.nodes.emplace_back();
  stack.push_back({0, tree.subsample, 0});

  while (!stack.empty()) {
    WorkItem item = std::move(stack.back());
    stack.pop_back();

    const bool depth_ok = !cfg.max_depth || item.depth < *cfg.max_depth;
    std::optional<SplitDecision> decision;
    if (!tree.degenerate && depth_ok &&
        static_cast<int>(item.rows.size()) >= 2 * cfg.min_leaf) {
      // V candidate features, redrawn independently at every split.
      int v = 1;
      if (cfg.feature_poisson_mean > 0.0) {
        std::poisson_distribution<int> pois(cfg.feature_poisson_mean);
        v = 1 + pois(gen);
      }
      v = std::min(v, p);
      for (int i = 0; i < v; ++i) {
        std::uniform_int_distribution<int> pick(i, p - 1);
        std::swap(feature_pool[static_cast<std::size_t>(i)],
                  feature_pool[static_cast<std::size_t>(pick(gen))]);
      }
      decision = best_split(d, item.rows,
                            std::span<const int>(feature_pool.data(), static_cast<std::size_t>(v)),
                            cfg, matched);
    }
    if (!decision) {
      make_leaf(item.node_index, item.rows);
      continue;
    }

    std::vector<int> left_rows, right_rows;
    left_rows.reserve(item.rows.size());
    right_rows.reserve(item.rows.size());
    for (int r : item.rows) {
      const double value = d.feature(decision->feature, r);
      bool go_left;
      if (decision->kind == FeatureKind::ordered) {
        go_left = value <= decision->threshold;
      } else {
        go_left = std::binary_search(decision->left_categories.begin(),
                                     decision->left_categories.end(),
                                     static_cast<int>(value));
      }
      (go_left ? left_rows : right_rows).push_back(r);
    }

    TreeNode& nd = tree.nodes[static_cast<std::size_t>(item.node_index)];
    nd.is_leaf = false;
    nd.feature = decision->feature;
    nd.kind = decision->kind;
    nd.threshold = decision->threshold;
    nd.left_categories = std::move(decision->left_categories);
    nd.left = static_cast<int>(tree.nodes.size());
    nd.right = nd.left + 1;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    const int left_index = tree.nodes[static_cast<std::size_t>(item.node_index)].left;
    const int right_index = tree.nodes[static_cast<std::size_t>(item.node_index)].right;
    stack.push_back({right_index, std::move(right_rows), item.depth + 1});
    stack.push_back({left_index, std::move(left_rows), item.depth + 1});
  }
  return tree;
}

// Per-leaf estimation-sample data: member lists and outcome means by
// treatment. Member indices are positions in the estimation sample.
struct LeafEstimation {
  std::vector<std::vector<int>> members;  // per treatment
  std::vector<double> mean;               // NaN when the cell is empty
  int total = 0;
};

struct PopulatedTree {
  Tree tree;
  std::vector<LeafEstimation> leaves;
};

// Routes every estimation-sample observation to its leaf and records the
// per-treatment outcome means; empty cells stay flagged as absent (NaN).
inline PopulatedTree populate_honest(Tree tree, const Dataset& estimation_sample) {
  PopulatedTree out;
  out.leaves.resize(static_cast<std::size_t>(tree.leaf_count()));
  for (auto& leaf : out.leaves) {
    leaf.members.assign(static_cast<std::size_t>(estimation_sample.m), {});
    leaf.mean.assign(static_cast<std::size_t>(estimation_sample.m),
                     std::numeric_limits<double>::quiet_NaN());
  }
  for (int r = 0; r < estimation_sample.n(); ++r) {
    const int leaf = tree.route(estimation_sample, r);
    auto& le = out.leaves[static_cast<std::size_t>(leaf)];
    le.members[static_cast<std::size_t>(estimation_sample.treatment[static_cast<std::size_t>(r)])]
        .push_back(r);
    ++le.total;
  }
  for (auto& leaf : out.leaves) {
    for (int t = 0; t < estimation_sample.m; ++t) {
      const auto& ms = leaf.members[static_cast<std::size_t>(t)];
      if (ms.empty()) continue;
      long double sum = 0.0L;
      for (int r : ms) sum += estimation_sample.outcome[static_cast<std::size_t>(r)];
      leaf.mean[static_cast<std::size_t>(t)] =
          static_cast<double>(sum / static_cast<long double>(ms.size()));
    }
  }
  out.tree = std::move(tree);
  return out;
}

// Debug dump as indented text.
inline void dump_tree(const Tree& tree, const std::vector<FeatureSpec>& schema,
                      std::ostream& os) {
  std::function<void(int, int)> rec = [&](int node, int depth) {
    const TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
    for (int i = 0; i < depth; ++i) os << "  ";
    if (nd.is_leaf) {
      os << "leaf #" << nd.leaf_index << " (n=";
      long long n = 0;
      for (int c : tree.leaf_grow[static_cast<std::size_t>(nd.leaf_index)].count) n += c;
      os << n << ")\n";
      return;
    }
    const auto& name = schema[static_cast<std::size_t>(nd.feature)].name;
    if (nd.kind == FeatureKind::ordered) {
      os << name << " <= " << nd.threshold << '\n';
    } else {
      os << name << " in {";
      for (std::size_t i = 0; i < nd.left_categories.size(); ++i) {
        if (i) os << ',';
        os << nd.left_categories[i];
      }
      os << "}\n";
    }
    rec(nd.left, depth + 1);
    rec(nd.right, depth + 1);
  };
  rec(0, 0);
}

}  // namespace mcf
