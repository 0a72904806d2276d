#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "mcf/mcf.hpp"
#include "test_helpers.hpp"

using namespace mcf;
using test_helpers::make_dataset;

namespace {

TreeConfig tree_config(SplitRule rule, int m, int min_leaf = 2, int min_per_treatment = 1) {
  TreeConfig cfg;
  cfg.min_leaf = min_leaf;
  cfg.min_leaf_per_treatment = min_per_treatment;
  cfg.feature_poisson_mean = 100.0;  // effectively all features
  cfg.criterion.rule = rule;
  cfg.criterion.contrasts = ContrastSet::all_pairs(m);
  return cfg;
}

bool same_structure(const Tree& a, const Tree& b) {
  if (a.nodes.size() != b.nodes.size()) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const auto& na = a.nodes[i];
    const auto& nb = b.nodes[i];
    if (na.is_leaf != nb.is_leaf || na.feature != nb.feature || na.kind != nb.kind ||
        na.threshold != nb.threshold || na.left_categories != nb.left_categories ||
        na.left != nb.left || na.right != nb.right || na.leaf_index != nb.leaf_index)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("best_split finds a step-function boundary") {
  // Outcome steps at feature 0 = 0.5 in both arms; the onef rule must cut
  // between the bracketing observed values.
  std::vector<std::vector<double>> col(2);
  std::vector<int> treatment;
  std::vector<double> outcome;
  std::mt19937_64 gen(3);
  std::normal_distribution<double> jitter(0.0, 0.01);
  for (int i = 0; i < 24; ++i) {
    const double x = i / 24.0;
    col[0].push_back(x);
    col[1].push_back(jitter(gen));
    treatment.push_back(i % 2);
    outcome.push_back((x <= 0.5 ? 1.0 : 5.0) + jitter(gen));
  }
  const Dataset d = make_dataset(col, treatment, outcome);
  const auto cfg = tree_config(SplitRule::onef, 2, 4, 2);
  const auto rows = test_helpers::all_rows(d);
  const auto features = test_helpers::all_features(d);
  const auto split = best_split(d, rows, features, cfg, nullptr);
  REQUIRE(split.has_value());
  CHECK(split->feature == 0);
  CHECK(split->threshold > 11.5 / 24.0);
  CHECK(split->threshold < 13.5 / 24.0);

  const auto oracle = test_helpers::oracle_best_split(d, rows, cfg, nullptr);
  REQUIRE(oracle.found);
  CHECK(oracle.feature == split->feature);
  CHECK(oracle.threshold == Catch::Approx(split->threshold));
}

TEST_CASE("nodes below twice the minimum leaf size cannot split") {
  std::mt19937_64 gen(4);
  const Dataset d = test_helpers::random_dataset(gen, 9, 2, 2);
  auto cfg = tree_config(SplitRule::onef, 2);
  cfg.min_leaf = 5;
  const auto split = best_split(d, test_helpers::all_rows(d), test_helpers::all_features(d),
                                cfg, nullptr);
  CHECK_FALSE(split.has_value());
}

TEST_CASE("ties resolve to the lowest feature then lowest threshold") {
  // Constant outcome and balanced shares: every feasible split scores the
  // same, so the first candidate in scan order must win.
  std::vector<std::vector<double>> col{{1, 2, 3, 4, 5, 6, 7, 8},
                                       {8, 7, 6, 5, 4, 3, 2, 1}};
  const Dataset d = make_dataset(col, {0, 1, 0, 1, 0, 1, 0, 1},
                                 {3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0});
  auto cfg = tree_config(SplitRule::onef, 2, 2, 1);
  const auto split = best_split(d, test_helpers::all_rows(d), test_helpers::all_features(d),
                                cfg, nullptr);
  REQUIRE(split.has_value());
  CHECK(split->feature == 0);
  CHECK(split->threshold == Catch::Approx(2.5));  // first feasible boundary
}

TEST_CASE("best_split matches exhaustive enumeration on random instances") {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> n_dist(12, 30);
  std::uniform_int_distribution<int> p_dist(1, 3);
  std::uniform_int_distribution<int> m_dist(2, 3);
  std::uniform_int_distribution<int> cat_dist(0, 1);

  const std::vector<SplitRule> rules{SplitRule::onef, SplitRule::onef_mce,
                                     SplitRule::onef_vart};
  int evaluated = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const int n = n_dist(gen);
    const int p = p_dist(gen);
    const int m = m_dist(gen);
    const Dataset d = test_helpers::random_dataset(gen, n, p, m, 2, cat_dist(gen) ? 1 : 0);
    const auto matched = match_neighbors(d, feature_scales(d));
    for (SplitRule rule : rules) {
      for (bool penalty : {false, true}) {
        auto cfg = tree_config(rule, m, 2, 1);
        if (penalty) cfg.criterion.penalty_lambda = stats::sample_variance(d.outcome);
        const auto fast = best_split(d, test_helpers::all_rows(d),
                                     test_helpers::all_features(d), cfg, &matched);
        const auto slow =
            test_helpers::oracle_best_split(d, test_helpers::all_rows(d), cfg, &matched);
        REQUIRE(fast.has_value() == slow.found);
        if (!slow.found) continue;
        ++evaluated;
        REQUIRE(fast->feature == slow.feature);
        REQUIRE(fast->kind == slow.kind);
        if (slow.kind == FeatureKind::ordered) {
          REQUIRE(fast->threshold == Catch::Approx(slow.threshold).margin(1e-12));
        } else {
          REQUIRE(fast->left_categories == slow.left_categories);
        }
        REQUIRE(fast->criterion_value == Catch::Approx(slow.value).epsilon(1e-9));
      }
    }
  }
  REQUIRE(evaluated > 100);
}

TEST_CASE("grow_tree basics") {
  std::mt19937_64 gen(5);
  const Dataset d = test_helpers::random_dataset(gen, 40, 2, 2);

  SECTION("huge min_leaf yields a stump") {
    auto cfg = tree_config(SplitRule::onef, 2, 100, 1);
    auto g = rng::make_stream(1, rng::Domain::tree, 0);
    const Tree t = grow_tree(d, test_helpers::all_rows(d), cfg, nullptr, g);
    REQUIRE(t.nodes.size() == 1);
    REQUIRE(t.leaf_count() == 1);
  }
  SECTION("same stream produces the identical tree") {
    auto cfg = tree_config(SplitRule::onef, 2, 4, 1);
    cfg.feature_poisson_mean = 0.5;
    auto g1 = rng::make_stream(9, rng::Domain::tree, 3);
    auto g2 = rng::make_stream(9, rng::Domain::tree, 3);
    const Tree t1 = grow_tree(d, test_helpers::all_rows(d), cfg, nullptr, g1);
    const Tree t2 = grow_tree(d, test_helpers::all_rows(d), cfg, nullptr, g2);
    REQUIRE(same_structure(t1, t2));
  }
  SECTION("every leaf respects the minimum sizes") {
    auto cfg = tree_config(SplitRule::onef_vart, 2, 6, 2);
    auto g = rng::make_stream(2, rng::Domain::tree, 1);
    const Tree t = grow_tree(d, test_helpers::all_rows(d), cfg, nullptr, g);
    for (const auto& leaf : t.leaf_grow) {
      int total = 0;
      for (int t2 = 0; t2 < d.m; ++t2) {
        total += leaf.count[static_cast<std::size_t>(t2)];
        REQUIRE(leaf.count[static_cast<std::size_t>(t2)] >= cfg.min_leaf_per_treatment);
      }
      REQUIRE(total >= cfg.min_leaf);
    }
  }
  SECTION("subsample missing a treatment flags the tree degenerate") {
    std::vector<int> only_zero;
    for (int i = 0; i < d.n(); ++i)
      if (d.treatment[static_cast<std::size_t>(i)] == 0) only_zero.push_back(i);
    auto cfg = tree_config(SplitRule::onef_mce, 2, 2, 1);
    auto g = rng::make_stream(2, rng::Domain::tree, 2);
    const auto matched = match_neighbors(d, feature_scales(d));
    const Tree t = grow_tree(d, only_zero, cfg, &matched, g);
    REQUIRE(t.degenerate);
    REQUIRE(t.leaf_count() == 1);
  }
}

TEST_CASE("recursive growth matches the recursive oracle on separable data") {
  // Two features carve four outcome plateaus; depth-2 enumeration suffices.
  std::vector<std::vector<double>> col(2);
  std::vector<int> treatment;
  std::vector<double> outcome;
  std::mt19937_64 gen(11);
  std::normal_distribution<double> jitter(0.0, 0.02);
  int idx = 0;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (int k = 0; k < 7; ++k) {
        col[0].push_back(a + 0.1 * k);
        col[1].push_back(b + 0.1 * k);
        treatment.push_back(idx++ % 2);
        outcome.push_back(10.0 * a + 5.0 * b + jitter(gen));
      }
    }
  }
  const Dataset d = make_dataset(col, treatment, outcome);
  auto cfg = tree_config(SplitRule::onef, 2, 5, 1);
  auto g = rng::make_stream(7, rng::Domain::tree, 0);
  const Tree t = grow_tree(d, test_helpers::all_rows(d), cfg, nullptr, g);

  // Oracle: apply the exhaustive single-split search recursively.
  std::function<int(std::vector<int>, int)> oracle_depth = [&](std::vector<int> rows,
                                                               int depth) -> int {
    const auto s = test_helpers::oracle_best_split(d, rows, cfg, nullptr);
    if (!s.found) return depth;
    std::vector<int> left, right;
    for (int r : rows)
      ((d.feature(s.feature, r) <= s.threshold) ? left : right).push_back(r);
    return std::max(oracle_depth(left, depth + 1), oracle_depth(right, depth + 1));
  };
  const int oracle_max_depth = oracle_depth(test_helpers::all_rows(d), 0);

  std::function<int(int)> tree_depth = [&](int node) -> int {
    const auto& nd = t.nodes[static_cast<std::size_t>(node)];
    if (nd.is_leaf) return 0;
    return 1 + std::max(tree_depth(nd.left), tree_depth(nd.right));
  };
  CHECK(tree_depth(0) == oracle_max_depth);
  CHECK(tree_depth(0) >= 2);

  // Root split must agree exactly with the oracle's.
  const auto root_oracle = test_helpers::oracle_best_split(d, test_helpers::all_rows(d), cfg, nullptr);
  CHECK(t.nodes[0].feature == root_oracle.feature);
  CHECK(t.nodes[0].threshold == Catch::Approx(root_oracle.threshold));
}

TEST_CASE("populate_honest routes the estimation sample") {
  std::mt19937_64 gen(6);
  const Dataset grow_d = test_helpers::random_dataset(gen, 30, 2, 2);
  auto cfg = tree_config(SplitRule::onef, 2, 100, 1);  // stump
  auto g = rng::make_stream(1, rng::Domain::tree, 0);
  Tree t = grow_tree(grow_d, test_helpers::all_rows(grow_d), cfg, nullptr, g);

  SECTION("stump means are the estimation-sample treatment means") {
    const Dataset est = make_dataset({{0.0, 1.0, 2.0}}, {1, 1, 0}, {2.0, 4.0, 1.0});
    // Schema mismatch is fine for a stump: routing never touches features.
    const PopulatedTree pt = populate_honest(t, est);
    REQUIRE(pt.leaves.size() == 1);
    CHECK(pt.leaves[0].mean[1] == Catch::Approx(3.0));
    CHECK(pt.leaves[0].mean[0] == Catch::Approx(1.0));
    CHECK(pt.leaves[0].total == 3);
  }
  SECTION("empty cells stay flagged absent") {
    const Dataset est = make_dataset({{0.0, 1.0}}, {1, 1}, {2.0, 4.0});
    Dataset est2 = est;
    est2.m = 2;  // declare two treatments, provide only one
    const PopulatedTree pt = populate_honest(t, est2);
    CHECK(std::isnan(pt.leaves[0].mean[0]));
    CHECK(pt.leaves[0].members[0].empty());
  }
  SECTION("membership is a partition of the estimation sample") {
    std::mt19937_64 g2(9);
    const Dataset est = test_helpers::random_dataset(g2, 50, 2, 2);
    auto cfg2 = tree_config(SplitRule::onef, 2, 4, 1);
    auto gg = rng::make_stream(4, rng::Domain::tree, 0);
    Tree t2 = grow_tree(grow_d, test_helpers::all_rows(grow_d), cfg2, nullptr, gg);
    const PopulatedTree pt = populate_honest(std::move(t2), est);
    int total = 0;
    for (const auto& leaf : pt.leaves) {
      for (const auto& members : leaf.members) total += static_cast<int>(members.size());
    }
    CHECK(total == est.n());
  }
}

TEST_CASE("honesty: estimation outcomes never shape the tree") {
  std::mt19937_64 gen(12);
  const Dataset build = test_helpers::random_dataset(gen, 60, 3, 2);
  Dataset est = test_helpers::random_dataset(gen, 60, 3, 2);

  auto cfg = tree_config(SplitRule::onef_mce, 2, 5, 2);
  const auto matched = match_neighbors(build, feature_scales(build));
  auto g1 = rng::make_stream(10, rng::Domain::tree, 0);
  Tree t1 = grow_tree(build, test_helpers::all_rows(build), cfg, &matched, g1);
  const PopulatedTree p1 = populate_honest(std::move(t1), est);

  std::shuffle(est.outcome.begin(), est.outcome.end(), gen);
  auto g2 = rng::make_stream(10, rng::Domain::tree, 0);
  Tree t2 = grow_tree(build, test_helpers::all_rows(build), cfg, &matched, g2);
  const PopulatedTree p2 = populate_honest(std::move(t2), est);

  REQUIRE(same_structure(p1.tree, p2.tree));
}

TEST_CASE("max_depth and min_daughter_share are honored") {
  std::mt19937_64 gen(14);
  const Dataset d = test_helpers::random_dataset(gen, 80, 2, 2);
  auto cfg = tree_config(SplitRule::onef, 2, 3, 1);
  cfg.max_depth = 1;
  auto g = rng::make_stream(3, rng::Domain::tree, 0);
  const Tree t = grow_tree(d, test_helpers::all_rows(d), cfg, nullptr, g);
  REQUIRE(t.nodes.size() <= 3);

  auto cfg2 = tree_config(SplitRule::onef, 2, 3, 1);
  cfg2.min_daughter_share = 0.4;
  auto g2 = rng::make_stream(3, rng::Domain::tree, 0);
  const Tree t2 = grow_tree(d, test_helpers::all_rows(d), cfg2, nullptr, g2);
  std::function<void(int, std::vector<int>)> walk = [&](int node, std::vector<int> rows) {
    const auto& nd = t2.nodes[static_cast<std::size_t>(node)];
    if (nd.is_leaf) return;
    std::vector<int> left, right;
    for (int r : rows) {
      const bool go_left = d.feature(nd.feature, r) <= nd.threshold;
      (go_left ? left : right).push_back(r);
    }
    REQUIRE(std::min(left.size(), right.size()) >=
            static_cast<std::size_t>(cfg2.min_daughter_share * rows.size()));
    walk(nd.left, left);
    walk(nd.right, right);
  };
  walk(0, test_helpers::all_rows(d));
}

TEST_CASE("tree dump emits indented text") {
  std::mt19937_64 gen(15);
  const Dataset d = test_helpers::random_dataset(gen, 30, 2, 2);
  auto cfg = tree_config(SplitRule::onef, 2, 4, 1);
  auto g = rng::make_stream(3, rng::Domain::tree, 0);
  const Tree t = grow_tree(d, test_helpers::all_rows(d), cfg, nullptr, g);
  std::ostringstream os;
  dump_tree(t, d.schema, os);
  CHECK(os.str().find("leaf #") != std::string::npos);
}
