// Weights-based inference: conditional outcome moments given the weight an
// observation receives, the variance/covariance estimators built from them,
// and t- and Wald-type tests.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "mcf/forest.hpp"
#include "mcf/stats.hpp"

namespace mcf {

struct MomentEstimates {
  std::vector<double> mu;      // E^(y | w), per estimation-sample position
  std::vector<double> sigma2;  // Var^(y | w), k-1 denominator
};

// Expands a sparse weight vector to the paper-scale weights w_i = N * omega_i.
inline std::vector<double> dense_scaled_weights(const WeightVector& w, int n_b) {
  std::vector<double> out(static_cast<std::size_t>(n_b), 0.0);
  for (const auto& [idx, value] : w.entries)
    out[static_cast<std::size_t>(idx)] = static_cast<double>(n_b) * value;
  return out;
}

// k-nearest-neighbour moments in weight space: observations are ranked by
// their weight (ties by index) and each one's moments come from a clamped
// window of k consecutive ranks around its own. Deterministic and O(N log N).
inline MomentEstimates knn_moments(std::span<const double> w_hat,
                                   std::span<const double> y, int k) {
  const int n = static_cast<int>(w_hat.size());
  if (k < 2) throw ConfigError("knn_moments needs k >= 2");
  if (k > n) throw ConfigError("knn_moments needs k <= N");

  std::vector<int> rank_of(static_cast<std::size_t>(n));
  {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return w_hat[static_cast<std::size_t>(a)] < w_hat[static_cast<std::size_t>(b)];
    });
    // y in rank order plus prefix sums for O(1) window moments
    std::vector<double> y_sorted(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      rank_of[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
      y_sorted[static_cast<std::size_t>(r)] = y[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
    }
    std::vector<long double> pref(static_cast<std::size_t>(n) + 1, 0.0L);
    std::vector<long double> pref2(static_cast<std::size_t>(n) + 1, 0.0L);
    for (int r = 0; r < n; ++r) {
      pref[static_cast<std::size_t>(r) + 1] = pref[static_cast<std::size_t>(r)] + y_sorted[static_cast<std::size_t>(r)];
      pref2[static_cast<std::size_t>(r) + 1] =
          pref2[static_cast<std::size_t>(r)] +
          static_cast<long double>(y_sorted[static_cast<std::size_t>(r)]) * y_sorted[static_cast<std::size_t>(r)];
    }
    MomentEstimates est;
    est.mu.resize(static_cast<std::size_t>(n));
    est.sigma2.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const int r = rank_of[static_cast<std::size_t>(i)];
      int lo = r - (k - 1) / 2;
      lo = std::clamp(lo, 0, n - k);
      const long double s = pref[static_cast<std::size_t>(lo + k)] - pref[static_cast<std::size_t>(lo)];
      const long double s2 = pref2[static_cast<std::size_t>(lo + k)] - pref2[static_cast<std::size_t>(lo)];
      const long double mean = s / k;
      est.mu[static_cast<std::size_t>(i)] = static_cast<double>(mean);
      const long double ss = s2 - static_cast<long double>(k) * mean * mean;
      est.sigma2[static_cast<std::size_t>(i)] =
          std::max(0.0, static_cast<double>(ss / (k - 1)));
    }
    return est;
  }
}

// Variance of a weighted-average estimator:
//   (1/N^2) sum w_i^2 sigma2_i + (1/(N(N-1))) sum (w_i mu_i - mean(w mu))^2.
inline double weights_variance(std::span<const double> w_hat,
                               const MomentEstimates& moments) {
  const int n = static_cast<int>(w_hat.size());
  if (n < 2) return 0.0;
  long double term1 = 0.0L;
  long double wm_sum = 0.0L;
  for (int i = 0; i < n; ++i) {
    const long double w = w_hat[static_cast<std::size_t>(i)];
    term1 += w * w * moments.sigma2[static_cast<std::size_t>(i)];
    wm_sum += w * moments.mu[static_cast<std::size_t>(i)];
  }
  const long double mean_wm = wm_sum / n;
  long double term2 = 0.0L;
  for (int i = 0; i < n; ++i) {
    const long double d =
        static_cast<long double>(w_hat[static_cast<std::size_t>(i)]) * moments.mu[static_cast<std::size_t>(i)] -
        mean_wm;
    term2 += d * d;
  }
  const long double nn = static_cast<long double>(n);
  return static_cast<double>(term1 / (nn * nn) + term2 / (nn * (nn - 1.0L)));
}

// Bilinear extension of the variance estimator. The cross conditional
// variance is taken as the average of the two sides so that
// covariance(w, w) reduces to variance(w).
inline double weights_covariance(std::span<const double> w_g, std::span<const double> w_h,
                                 const MomentEstimates& mg, const MomentEstimates& mh) {
  const int n = static_cast<int>(w_g.size());
  if (n < 2) return 0.0;
  long double term1 = 0.0L;
  long double gm_sum = 0.0L, hm_sum = 0.0L;
  for (int i = 0; i < n; ++i) {
    const long double wg = w_g[static_cast<std::size_t>(i)];
    const long double wh = w_h[static_cast<std::size_t>(i)];
    term1 += wg * wh * 0.5L *
             (mg.sigma2[static_cast<std::size_t>(i)] + mh.sigma2[static_cast<std::size_t>(i)]);
    gm_sum += wg * mg.mu[static_cast<std::size_t>(i)];
    hm_sum += wh * mh.mu[static_cast<std::size_t>(i)];
  }
  const long double mean_g = gm_sum / n;
  const long double mean_h = hm_sum / n;
  long double term2 = 0.0L;
  for (int i = 0; i < n; ++i) {
    const long double dg =
        static_cast<long double>(w_g[static_cast<std::size_t>(i)]) * mg.mu[static_cast<std::size_t>(i)] - mean_g;
    const long double dh =
        static_cast<long double>(w_h[static_cast<std::size_t>(i)]) * mh.mu[static_cast<std::size_t>(i)] - mean_h;
    term2 += dg * dh;
  }
  const long double nn = static_cast<long double>(n);
  return static_cast<double>(term1 / (nn * nn) + term2 / (nn * (nn - 1.0L)));
}

struct EffectEstimate {
  TreatmentPair contrast;
  EffectLevel level = EffectLevel::ate;
  double group_value = 0.0;  // gate only
  int eval_id = -1;          // iate only
  double point = 0.0;
  double variance = 0.0;
  double std_err = 0.0;
  double p_value = 1.0;
};

// Two-sided p-value against a point null from the normal distribution.
inline double t_test_p(double point, double std_err, double null_value = 0.0) {
  if (std_err <= 0.0) return point == null_value ? 1.0 : 0.0;
  return stats::normal_two_sided_p((point - null_value) / std_err);
}

struct WaldResult {
  double stat = 0.0;
  int df = 0;
  double p_value = 1.0;
};

// Wald test that all estimates are equal. Contrasts are differences to the
// first estimate; the covariance of the differences is eigen-clamped to be
// positive semidefinite and pseudo-inverted, with the rank as degrees of
// freedom when it is singular beyond tolerance.
inline WaldResult wald_equality(std::span<const EffectEstimate> estimates,
                                const Eigen::MatrixXd& covariance) {
  const int g = static_cast<int>(estimates.size());
  if (g < 2) throw ConfigError("wald_equality needs at least 2 estimates");
  if (covariance.rows() != g || covariance.cols() != g)
    throw ConfigError("covariance matrix does not match the estimate count");

  Eigen::VectorXd diff(g - 1);
  for (int i = 1; i < g; ++i)
    diff(i - 1) = estimates[static_cast<std::size_t>(i)].point - estimates[0].point;
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(g - 1, g);
  for (int i = 1; i < g; ++i) {
    r(i - 1, 0) = -1.0;
    r(i - 1, i) = 1.0;
  }
  Eigen::MatrixXd v = r * covariance * r.transpose();
  v = 0.5 * (v + v.transpose().eval());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v);
  const Eigen::VectorXd values = eig.eigenvalues();
  const double largest = std::max(values.cwiseAbs().maxCoeff(), 1.0);
  const double tol = 1e-10 * largest;

  WaldResult out;
  Eigen::VectorXd z = eig.eigenvectors().transpose() * diff;
  double stat = 0.0;
  int rank = 0;
  for (int i = 0; i < values.size(); ++i) {
    if (values(i) > tol) {
      stat += z(i) * z(i) / values(i);
      ++rank;
    }
  }
  if (rank == 0) {
    out.stat = 0.0;
    out.df = g - 1;
    out.p_value = 1.0;
    return out;
  }
  out.stat = stat;
  out.df = rank;
  out.p_value = stats::chi_squared_sf(stat, rank);
  return out;
}

// Point estimate, variance, and p-value for one weight vector.
inline EffectEstimate estimate_from_weights(const Forest& f, const WeightVector& w) {
  EffectEstimate e;
  e.contrast = w.contrast;
  e.level = w.tag.level;
  e.group_value = w.tag.group_value;
  e.eval_id = w.tag.eval_id;
  e.point = weight_dot(w, f.y_b);
  const auto w_hat = dense_scaled_weights(w, f.n_b());
  const auto moments = knn_moments(w_hat, f.y_b, f.knn_k());
  e.variance = weights_variance(w_hat, moments);
  e.std_err = std::sqrt(e.variance);
  e.p_value = t_test_p(e.point, e.std_err, 0.0);
  return e;
}

}  // namespace mcf
