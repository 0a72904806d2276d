#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "mcf/mcf.hpp"
#include "test_helpers.hpp"

using namespace mcf;

TEST_CASE("knn_moments fundamentals") {
  SECTION("constant outcomes give mu = y and sigma2 = 0") {
    const std::vector<double> w{0.5, 1.0, 0.0, 2.0};
    const std::vector<double> y(4, 3.0);
    const auto m = knn_moments(w, y, 2);
    for (int i = 0; i < 4; ++i) {
      CHECK(m.mu[static_cast<std::size_t>(i)] == Catch::Approx(3.0));
      CHECK(m.sigma2[static_cast<std::size_t>(i)] == Catch::Approx(0.0));
    }
  }
  SECTION("equal weights are deterministic via the index tie rule") {
    const std::vector<double> w(6, 1.0);
    const std::vector<double> y{1, 2, 3, 4, 5, 6};
    const auto m1 = knn_moments(w, y, 3);
    const auto m2 = knn_moments(w, y, 3);
    REQUIRE(m1.mu == m2.mu);
    // Ties sort by index, so observation 0 sits at rank 0 and its window is
    // the first three outcomes.
    CHECK(m1.mu[0] == Catch::Approx((1 + 2 + 3) / 3.0));
  }
  SECTION("k = N collapses every window to the full sample") {
    std::mt19937_64 gen(3);
    std::normal_distribution<double> normal(0, 1);
    std::vector<double> w, y;
    for (int i = 0; i < 25; ++i) {
      w.push_back(normal(gen));
      y.push_back(normal(gen));
    }
    const auto m = knn_moments(w, y, 25);
    const double mean = stats::mean(y);
    const double var = stats::sample_variance(y);
    for (int i = 0; i < 25; ++i) {
      CHECK(m.mu[static_cast<std::size_t>(i)] == Catch::Approx(mean));
      CHECK(m.sigma2[static_cast<std::size_t>(i)] == Catch::Approx(var));
    }
  }
  SECTION("k bounds are enforced") {
    const std::vector<double> w{1, 2, 3};
    const std::vector<double> y{1, 2, 3};
    REQUIRE_THROWS_AS(knn_moments(w, y, 1), ConfigError);
    REQUIRE_THROWS_AS(knn_moments(w, y, 4), ConfigError);
  }
}

TEST_CASE("weights_variance recovers the variance of a plain mean") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> normal(2.0, 3.0);
  const int n = 200;
  std::vector<double> y;
  for (int i = 0; i < n; ++i) y.push_back(normal(gen));
  const std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  const auto m = knn_moments(w, y, n);
  // With w = 1 everywhere and full-sample moments: V = s^2 / N exactly.
  CHECK(weights_variance(w, m) == Catch::Approx(stats::sample_variance(y) / n));
}

TEST_CASE("all-zero weights give zero variance") {
  const std::vector<double> w(10, 0.0);
  std::vector<double> y;
  for (int i = 0; i < 10; ++i) y.push_back(i);
  const auto m = knn_moments(w, y, 4);
  CHECK(weights_variance(w, m) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("variance is nonnegative and scales quadratically with the outcome") {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> normal(0, 1);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 40;
    std::vector<double> w, y;
    for (int i = 0; i < n; ++i) {
      w.push_back(normal(gen));
      y.push_back(normal(gen));
    }
    const auto m = knn_moments(w, y, 8);
    const double v = weights_variance(w, m);
    REQUIRE(v >= 0.0);

    std::vector<double> y2 = y;
    for (auto& value : y2) value *= 2.0;
    const auto m2 = knn_moments(w, y2, 8);
    CHECK(weights_variance(w, m2) == Catch::Approx(4.0 * v).epsilon(1e-9));
  }
}

TEST_CASE("covariance collapses to variance on identical inputs") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> normal(0, 1);
  const int n = 60;
  std::vector<double> w, y;
  for (int i = 0; i < n; ++i) {
    w.push_back(normal(gen));
    y.push_back(normal(gen));
  }
  const auto m = knn_moments(w, y, 10);
  CHECK(weights_covariance(w, w, m, m) == Catch::Approx(weights_variance(w, m)));
}

TEST_CASE("disjoint-support weights with zero conditional means kill the first term") {
  const int n = 10;
  std::vector<double> wg(n, 0.0), wh(n, 0.0);
  for (int i = 0; i < n / 2; ++i) wg[static_cast<std::size_t>(i)] = 1.0;
  for (int i = n / 2; i < n; ++i) wh[static_cast<std::size_t>(i)] = 1.0;
  MomentEstimates mg, mh;
  mg.mu.assign(n, 0.0);
  mg.sigma2.assign(n, 1.0);
  mh.mu.assign(n, 0.0);
  mh.sigma2.assign(n, 1.0);
  // wg * wh = 0 everywhere and mu = 0: both terms vanish.
  CHECK(weights_covariance(wg, wh, mg, mh) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("estimated 2x2 covariance matrices stay consistent under clamping") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> normal(0, 1);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 50;
    std::vector<double> wg, wh, y;
    for (int i = 0; i < n; ++i) {
      wg.push_back(normal(gen));
      wh.push_back(normal(gen));
      y.push_back(normal(gen));
    }
    const auto mg = knn_moments(wg, y, 10);
    const auto mh = knn_moments(wh, y, 10);
    const double vg = weights_variance(wg, mg);
    const double vh = weights_variance(wh, mh);
    const double c = weights_covariance(wg, wh, mg, mh);
    Eigen::Matrix2d cov;
    cov << vg, c, c, vh;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    // After clamping negatives at zero the matrix is PSD; eigenvalues can
    // only be slightly negative from estimation error.
    CHECK(eig.eigenvalues()(0) > -0.5 * std::max(vg, vh));
  }
}

TEST_CASE("t_test_p values and edge cases") {
  CHECK(t_test_p(1.959963984540054, 1.0, 0.0) == Catch::Approx(0.05).epsilon(1e-9));
  CHECK(t_test_p(0.0, 1.0) == Catch::Approx(1.0));
  CHECK(t_test_p(3.0, 1.0) == Catch::Approx(t_test_p(-3.0, 1.0)));
  SECTION("zero variance degenerates to certainty") {
    CHECK(t_test_p(2.0, 0.0, 2.0) == 1.0);
    CHECK(t_test_p(2.0, 0.0, 0.0) == 0.0);
  }
}

TEST_CASE("wald_equality handles exact and degenerate cases") {
  auto make_estimates = [](std::vector<double> points) {
    std::vector<EffectEstimate> out;
    for (double p : points) {
      EffectEstimate e;
      e.point = p;
      out.push_back(e);
    }
    return out;
  };
  SECTION("two equal estimates give stat 0, p 1") {
    const auto est = make_estimates({1.3, 1.3});
    Eigen::Matrix2d cov;
    cov << 1.0, 0.2, 0.2, 1.0;
    const auto res = wald_equality(est, cov);
    CHECK(res.stat == Catch::Approx(0.0).margin(1e-12));
    CHECK(res.p_value == Catch::Approx(1.0));
  }
  SECTION("difference 2 with Var(diff) = 1 gives the chi-squared(1) tail of 4") {
    const auto est = make_estimates({0.0, 2.0});
    // Var(diff) = v11 + v22 - 2 c = 1
    Eigen::Matrix2d cov;
    cov << 0.75, 0.25, 0.25, 0.75;
    const auto res = wald_equality(est, cov);
    CHECK(res.stat == Catch::Approx(4.0).epsilon(1e-9));
    CHECK(res.df == 1);
    CHECK(res.p_value == Catch::Approx(0.0455).margin(2e-4));
  }
  SECTION("permuting groups leaves the statistic unchanged") {
    std::mt19937_64 gen(13);
    std::normal_distribution<double> normal(0, 1);
    const int g = 4;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g, g);
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j) a(i, j) = normal(gen);
    Eigen::MatrixXd cov = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(g, g);
    std::vector<double> points{0.3, -0.2, 0.9, 0.4};
    const auto est = make_estimates(points);
    const auto base = wald_equality(est, cov);

    const std::vector<int> perm{2, 0, 3, 1};
    std::vector<double> pp(g);
    Eigen::MatrixXd pcov(g, g);
    for (int i = 0; i < g; ++i) {
      pp[static_cast<std::size_t>(i)] = points[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      for (int j = 0; j < g; ++j)
        pcov(i, j) = cov(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    const auto permuted = wald_equality(make_estimates(pp), pcov);
    CHECK(permuted.stat == Catch::Approx(base.stat).epsilon(1e-9));
    CHECK(permuted.df == base.df);
  }
  SECTION("identical estimates with a singular covariance give p 1") {
    const auto est = make_estimates({2.0, 2.0, 2.0});
    Eigen::MatrixXd cov = Eigen::MatrixXd::Ones(3, 3);  // rank 1, differences singular
    const auto res = wald_equality(est, cov);
    CHECK(res.stat == Catch::Approx(0.0).margin(1e-12));
    CHECK(res.p_value == Catch::Approx(1.0));
  }
}

TEST_CASE("adjacent-difference variance uses the covariance term") {
  // Var(a - b) = Va + Vb - 2 Cab must match a direct computation from the
  // bilinear estimator on shared data.
  std::mt19937_64 gen(17);
  std::normal_distribution<double> normal(0, 1);
  const int n = 80;
  std::vector<double> wa, wb, y;
  for (int i = 0; i < n; ++i) {
    wa.push_back(normal(gen));
    wb.push_back(normal(gen));
    y.push_back(normal(gen));
  }
  const auto ma = knn_moments(wa, y, 12);
  const auto mb = knn_moments(wb, y, 12);
  const double va = weights_variance(wa, ma);
  const double vb = weights_variance(wb, mb);
  const double cab = weights_covariance(wa, wb, ma, mb);

  // Difference weight vector: w_diff = wa - wb with its own moments is a
  // different estimator; here we only check the algebra stays finite and
  // the tests built on it behave.
  const double var_diff = va + vb - 2.0 * cab;
  CHECK(std::isfinite(var_diff));
}
