#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "mcf/mcf.hpp"
#include "test_helpers.hpp"

using namespace mcf;
using test_helpers::make_dataset;

namespace {

NodeStats stats_of(const Dataset& d, const std::vector<int>& rows,
                   const ContrastSet& contrasts, const MatchedOutcomes* matched = nullptr) {
  return NodeStats::compute(d, rows, contrasts, matched);
}

}  // namespace

TEST_CASE("leaf_mse follows the per-cell mean squared residual") {
  const ContrastSet cs = ContrastSet::all_pairs(2);
  SECTION("outcomes {1,3}: mean 2, mse 1") {
    const Dataset d = make_dataset({{0.0, 1.0}}, {1, 1}, {1.0, 3.0});
    const auto s = stats_of(d, {0, 1}, cs);
    CHECK(leaf_mse(s, 1) == Catch::Approx(1.0));
  }
  SECTION("single observation has zero residual") {
    const Dataset d = make_dataset({{0.0}}, {0}, {42.0});
    const auto s = stats_of(d, {0}, cs);
    CHECK(leaf_mse(s, 0) == 0.0);
  }
  SECTION("constant outcomes give zero") {
    const Dataset d = make_dataset({{0.0, 1.0, 2.0}}, {0, 0, 0}, {5.0, 5.0, 5.0});
    const auto s = stats_of(d, {0, 1, 2}, cs);
    CHECK(leaf_mse(s, 0) == 0.0);
  }
}

TEST_CASE("leaf_mce evaluates the matched cross-residual product") {
  const ContrastSet cs = ContrastSet::all_pairs(2);
  SECTION("hand-built stats: one member, residual product (3-4)(1-0) = -1") {
    NodeStats s;
    s.n_total = 1;
    s.count = {1, 1};
    s.mean = {1.0, 3.0};  // mean_l = 1, mean_m = 3
    s.ssr = {0.0, 0.0};
    s.mce_sum = {-1.0};  // (3 - 4) * (1 - 0)
    s.mce_count = {1};
    CHECK(leaf_mce(s, cs, 0) == Catch::Approx(-1.0));
  }
  SECTION("matched outcomes equal to the cell means give zero") {
    // Clone rows so matched neighbors sit at zero distance with the same
    // outcome per treatment: residuals vanish.
    const Dataset d = make_dataset({{0.0, 0.0, 1.0, 1.0}}, {0, 1, 0, 1},
                                   {2.0, 6.0, 2.0, 6.0});
    const auto matched = match_neighbors(d, feature_scales(d));
    const auto s = stats_of(d, {0, 1, 2, 3}, cs, &matched);
    CHECK(leaf_mce(s, cs, 0) == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("single m observation at its own mean contributes zero") {
    const Dataset d = make_dataset({{0.0, 0.5}}, {1, 0}, {4.0, 2.0});
    const auto matched = match_neighbors(d, feature_scales(d));
    const auto s = stats_of(d, {0, 1}, cs, &matched);
    // mean_m = 4 = y, so (mean_m - y~(i,m)) = 0 for the m row; the l row has
    // (mean_m - 4)(mean_l - 2) = 0 as well.
    CHECK(leaf_mce(s, cs, 0) == Catch::Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("mce_criterion reduces and decomposes as expected") {
  std::mt19937_64 gen(31);
  const Dataset d = test_helpers::random_dataset(gen, 60, 2, 2);
  const auto matched = match_neighbors(d, feature_scales(d));
  const ContrastSet cs = ContrastSet::all_pairs(2);
  std::vector<int> left, right;
  for (int i = 0; i < d.n(); ++i) (i % 2 ? left : right).push_back(i);
  const auto sl = stats_of(d, left, cs, &matched);
  const auto sr = stats_of(d, right, cs, &matched);

  CriterionConfig mce_cfg{SplitRule::onef_mce, std::nullopt, cs};
  CriterionConfig onef_cfg{SplitRule::onef, std::nullopt, cs};

  SECTION("zero MCE terms collapse to the onef criterion") {
    NodeStats zl = sl, zr = sr;
    zl.mce_sum = {0.0};
    zr.mce_sum = {0.0};
    CHECK(mce_criterion(zl, zr, mce_cfg) ==
          Catch::Approx(mce_criterion(sl, sr, onef_cfg)));
  }
  SECTION("term-by-term identity: criterion = sum MSE - 2 sum MCE") {
    double expected = 0.0;
    for (const NodeStats* side : {&sl, &sr}) {
      expected += leaf_mse(*side, 1) + leaf_mse(*side, 0) - 2.0 * leaf_mce(*side, cs, 0);
    }
    CHECK(mce_criterion(sl, sr, mce_cfg) == Catch::Approx(expected).epsilon(1e-12));
  }
  SECTION("perfectly correlated residuals push the criterion below onef") {
    // Clone data: every observation has an exact twin in the other arm
    // whose outcome moves with it, so matched products mirror the residual
    // variance and the correlated-error term bites.
    std::vector<std::vector<double>> col(1);
    std::vector<int> treatment;
    std::vector<double> outcome;
    std::mt19937_64 g2(5);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int i = 0; i < 30; ++i) {
      const double x = i;
      const double y = noise(g2);
      col[0].push_back(x);
      treatment.push_back(0);
      outcome.push_back(y);
      col[0].push_back(x);
      treatment.push_back(1);
      outcome.push_back(y + 2.0);
    }
    const Dataset clone = make_dataset(col, treatment, outcome);
    const auto m2 = match_neighbors(clone, feature_scales(clone));
    std::vector<int> cl, cr;
    for (int i = 0; i < clone.n(); ++i) (i < clone.n() / 2 ? cl : cr).push_back(i);
    const auto s1 = stats_of(clone, cl, cs, &m2);
    const auto s2 = stats_of(clone, cr, cs, &m2);
    CHECK(mce_criterion(s1, s2, mce_cfg) < mce_criterion(s1, s2, onef_cfg));
  }
  SECTION("infeasible daughter yields the +inf sentinel") {
    // right daughter holds treatment 1 only
    std::vector<int> ml_rows;
    for (int i = 0; i < d.n(); ++i)
      if (d.treatment[static_cast<std::size_t>(i)] == 1) ml_rows.push_back(i);
    const auto s_bad = stats_of(d, ml_rows, cs, &matched);
    CHECK(mce_criterion(sl, s_bad, mce_cfg) == kInfeasibleSplit);
  }
}

TEST_CASE("vart_criterion is the negated size-weighted heterogeneity") {
  const ContrastSet cs = ContrastSet::all_pairs(2);
  CriterionConfig cfg{SplitRule::onef_vart, std::nullopt, cs};

  SECTION("zero effects in both daughters give zero") {
    const Dataset d = make_dataset({{0, 1, 2, 3}}, {0, 1, 0, 1}, {2.0, 2.0, 2.0, 2.0});
    const auto sl = stats_of(d, {0, 1}, cs);
    const auto sr = stats_of(d, {2, 3}, cs);
    CHECK(vart_criterion(sl, sr, cfg) == Catch::Approx(0.0));
  }
  SECTION("hand example: left tau=2 (n=3), right tau=-1 (n=2) gives -14") {
    const Dataset d = make_dataset({{0, 0, 0, 0, 0}}, {1, 1, 0, 1, 0},
                                   {2.0, 2.0, 0.0, 1.0, 2.0});
    // left rows {0,1,2}: mean_1 = 2, mean_0 = 0, tau = 2, n = 3
    // right rows {3,4}: mean_1 = 1, mean_0 = 2, tau = -1, n = 2
    const auto sl = stats_of(d, {0, 1, 2}, cs);
    const auto sr = stats_of(d, {3, 4}, cs);
    CHECK(vart_criterion(sl, sr, cfg) == Catch::Approx(-14.0));
    SECTION("swapping daughters leaves the value unchanged") {
      CHECK(vart_criterion(sr, sl, cfg) == Catch::Approx(-14.0));
    }
  }
}

TEST_CASE("propensity penalty spans [0, lambda] with the documented extremes") {
  auto stats_with_shares = [](std::vector<int> counts) {
    NodeStats s;
    s.count = counts;
    s.n_total = 0;
    for (int c : counts) s.n_total += c;
    s.mean.assign(counts.size(), 0.0);
    s.ssr.assign(counts.size(), 0.0);
    return s;
  };
  SECTION("maximally different binary shares give zero") {
    const auto left = stats_with_shares({10, 0});
    const auto right = stats_with_shares({0, 10});
    CHECK(propensity_penalty(left, right, 3.0, 2) == Catch::Approx(0.0));
  }
  SECTION("identical shares give lambda") {
    const auto left = stats_with_shares({4, 6});
    const auto right = stats_with_shares({2, 3});
    CHECK(propensity_penalty(left, right, 3.0, 2) == Catch::Approx(3.0));
  }
  SECTION("treated shares 0.8 vs 0.4 give 0.84 at lambda 1") {
    const auto left = stats_with_shares({2, 8});
    const auto right = stats_with_shares({6, 4});
    CHECK(propensity_penalty(left, right, 1.0, 2) == Catch::Approx(0.84));
  }
  SECTION("property sweep: bounded and monotone in the share gap") {
    std::mt19937_64 gen(3);
    std::uniform_int_distribution<int> cnt(1, 30);
    const double lambda = 2.5;
    double prev_penalty = -1.0;
    (void)prev_penalty;
    for (int rep = 0; rep < 500; ++rep) {
      const auto left = stats_with_shares({cnt(gen), cnt(gen), cnt(gen)});
      const auto right = stats_with_shares({cnt(gen), cnt(gen), cnt(gen)});
      const double p = propensity_penalty(left, right, lambda, 3);
      REQUIRE(p >= -1e-12);
      REQUIRE(p <= lambda + 1e-12);
    }
    // Monotonicity: shrinking the share gap raises the penalty.
    const auto a = stats_with_shares({9, 1});
    const auto b1 = stats_with_shares({1, 9});
    const auto b2 = stats_with_shares({3, 7});
    const auto b3 = stats_with_shares({9, 1});
    const double p1 = propensity_penalty(a, b1, lambda, 2);
    const double p2 = propensity_penalty(a, b2, lambda, 2);
    const double p3 = propensity_penalty(a, b3, lambda, 2);
    CHECK(p1 < p2);
    CHECK(p2 < p3);
    CHECK(p3 == Catch::Approx(lambda));
  }
}

TEST_CASE("criteria are invariant to row order and outcome shifts") {
  std::mt19937_64 gen(8);
  const Dataset d = test_helpers::random_dataset(gen, 50, 2, 3);
  const auto matched = match_neighbors(d, feature_scales(d));
  const ContrastSet cs = ContrastSet::all_pairs(3);
  CriterionConfig cfg{SplitRule::onef_mce, 1.5, cs};

  std::vector<int> left, right;
  for (int i = 0; i < d.n(); ++i) (i % 3 == 0 ? left : right).push_back(i);

  const double base = split_criterion(stats_of(d, left, cs, &matched),
                                      stats_of(d, right, cs, &matched), cfg);

  SECTION("permuting rows within a node changes nothing") {
    auto left_perm = left;
    auto right_perm = right;
    std::shuffle(left_perm.begin(), left_perm.end(), gen);
    std::shuffle(right_perm.begin(), right_perm.end(), gen);
    const double permuted = split_criterion(stats_of(d, left_perm, cs, &matched),
                                            stats_of(d, right_perm, cs, &matched), cfg);
    CHECK(permuted == Catch::Approx(base).epsilon(1e-12));
  }
  SECTION("adding a constant to outcomes changes nothing") {
    Dataset shifted = d;
    for (auto& y : shifted.outcome) y += 100.0;
    const auto matched2 = match_neighbors(shifted, feature_scales(shifted));
    const double value = split_criterion(stats_of(shifted, left, cs, &matched2),
                                         stats_of(shifted, right, cs, &matched2), cfg);
    CHECK(value == Catch::Approx(base).margin(1e-7));
    // The heterogeneity rule is shift-invariant as well.
    CriterionConfig vart_cfg{SplitRule::onef_vart, std::nullopt, cs};
    const double v1 = split_criterion(stats_of(d, left, cs, nullptr),
                                      stats_of(d, right, cs, nullptr), vart_cfg);
    const double v2 = split_criterion(stats_of(shifted, left, cs, nullptr),
                                      stats_of(shifted, right, cs, nullptr), vart_cfg);
    CHECK(v2 == Catch::Approx(v1).margin(1e-7));
  }
}

TEST_CASE("contrast weights scale their pair's contribution") {
  std::mt19937_64 gen(21);
  const Dataset d = test_helpers::random_dataset(gen, 60, 2, 3);
  ContrastSet weighted = ContrastSet::all_pairs(3);
  weighted.weights = {2.0, 1.0, 0.5};
  ContrastSet plain = ContrastSet::all_pairs(3);
  std::vector<int> left, right;
  for (int i = 0; i < d.n(); ++i) (i % 2 ? left : right).push_back(i);

  CriterionConfig cfg_w{SplitRule::onef, std::nullopt, weighted};
  const auto sl = NodeStats::compute(d, left, weighted, nullptr);
  const auto sr = NodeStats::compute(d, right, weighted, nullptr);
  double expected = 0.0;
  for (std::size_t pi = 0; pi < weighted.pairs.size(); ++pi) {
    const auto [m, l] = weighted.pairs[pi];
    expected += weighted.weights[pi] *
                (leaf_mse(sl, m) + leaf_mse(sl, l) + leaf_mse(sr, m) + leaf_mse(sr, l));
  }
  CHECK(mce_criterion(sl, sr, cfg_w) == Catch::Approx(expected).epsilon(1e-12));
}
