// Monte-Carlo harness: synthetic populations with a logistic selection
// process, integer month outcomes, effect specifications tied to the
// propensity, a replication engine, and the quality-metric suite (bias,
// MSE, normality, standard-error accuracy, coverage).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mcf/aggregation.hpp"
#include "mcf/common.hpp"
#include "mcf/forest.hpp"
#include "mcf/inference.hpp"
#include "mcf/stats.hpp"

namespace mcf {

enum class SelectionKind : std::uint8_t { random = 0, logit = 1 };
enum class EffectKind : std::uint8_t { zero = 0, sine = 1, linear_feature = 2 };

struct DgpConfig {
  int p = 10;
  SelectionKind selection = SelectionKind::logit;
  double selection_strength = 1.0;  // scales the logit index
  double target_share = 0.5;        // mean treatment probability
  EffectKind effect = EffectKind::sine;
  double alpha = 2.0;               // effect-size scale
  int effect_feature = 0;           // for linear_feature
  int population_size = 20000;
  int validation_size = 1000;
  std::uint64_t seed = 1;
};

struct Population {
  std::vector<std::vector<double>> columns;  // [p][n]
  std::vector<double> propensity;
  std::vector<double> y0, y1;
  std::vector<double> iate, ite;  // ite is integer-valued
  std::vector<int> validation;    // row indices of the validation sample
  std::vector<int> pool;          // remaining rows, training draws come from here
  double propensity_max = 0.0;

  int n() const { return static_cast<int>(y0.size()); }
  int p() const { return static_cast<int>(columns.size()); }
};

// Non-linear deterministic effect component: sin(1.25 pi p / p_max).
inline double xi(double propensity, double propensity_max) {
  if (!(propensity_max > 0.0)) throw DataError("xi: propensity maximum must be positive");
  if (propensity < 0.0 || propensity > propensity_max)
    throw DataError("xi: propensity outside [0, max]");
  return std::sin(1.25 * M_PI * propensity / propensity_max);
}

// Standardize the effect component to mean zero and standard deviation
// alpha (population denominators).
inline std::vector<double> make_iate(std::span<const double> xi_values, double alpha) {
  std::vector<double> out(xi_values.size(), 0.0);
  if (alpha == 0.0) return out;
  const double mean = stats::mean(xi_values);
  const double sd = std::sqrt(stats::population_variance(xi_values));
  if (!(sd > 0.0))
    throw DataError("make_iate: effect component is constant but alpha > 0");
  for (std::size_t i = 0; i < xi_values.size(); ++i)
    out[i] = alpha * (xi_values[i] - mean) / sd;
  return out;
}

// Deterministic core of the individual-effect noise given the two draws:
// u (Poisson) and v* (uniform). Returns an integer-valued effect with
// conditional expectation equal to iate.
inline double ite_from_draws(double iate, int u, double v_star) {
  const double shifted = iate + static_cast<double>(u);
  const double frac = shifted - std::floor(shifted);
  const double v = (v_star <= frac) ? (1.0 - frac) : (-frac);
  return iate + (1.0 - static_cast<double>(u)) + v;
}

inline double ite_noise(double iate, std::mt19937_64& gen) {
  std::poisson_distribution<int> pois(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return ite_from_draws(iate, pois(gen), unif(gen));
}

// Jarque-Bera statistic (n/6)(S^2 + (K-3)^2/4) with population-moment
// skewness and kurtosis. Chi-squared(2) under normality.
inline double jb_stat(std::span<const double> values) {
  if (values.size() < 8) throw DataError("jb_stat needs at least 8 values");
  const auto m = stats::moments(values);
  if (!(m.variance > 0.0)) throw DataError("jb_stat: zero variance");
  const double s = m.skewness;
  const double k = m.kurtosis;
  return (static_cast<double>(values.size()) / 6.0) *
         (s * s + 0.25 * (k - 3.0) * (k - 3.0));
}

namespace detail {

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Intercept shift so that the mean selection probability hits the target
// within 0.005, by bisection on the shared additive intercept.
inline double shift_intercept(std::span<const double> index, double target) {
  double lo = -30.0, hi = 30.0;
  auto share = [&](double c) {
    long double s = 0.0L;
    for (double v : index) s += logistic(v + c);
    return static_cast<double>(s / static_cast<long double>(index.size()));
  };
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double sh = share(mid);
    if (std::fabs(sh - target) < 0.005) return mid;
    if (sh < target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Synthetic population. Features: the first half of the columns form a
// correlated Gaussian block (AR coefficient 0.5), the rest are independent
// standard normals. Selection follows a logit in the first six features.
// The non-treatment outcome is an integer month count in 0..33 drawn from
// Binomial(33, q(x)) whose success rate loads on the selection index, so
// selection and outcome are confounded. Y1 = Y0 + ITE exactly.
inline Population gen_population(const DgpConfig& cfg) {
  if (!(cfg.target_share > 0.0 && cfg.target_share < 1.0))
    throw ConfigError("target share must lie in (0, 1)");
  if (cfg.alpha < 0.0) throw ConfigError("alpha must be nonnegative");
  if (cfg.effect == EffectKind::linear_feature &&
      (cfg.effect_feature < 0 || cfg.effect_feature >= cfg.p))
    throw ConfigError("effect feature index out of range");
  if (cfg.validation_size >= cfg.population_size)
    throw ConfigError("validation sample must be smaller than the population");

  auto gen = rng::make_stream(cfg.seed, rng::Domain::population, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n = cfg.population_size;
  const int p = cfg.p;

  Population pop;
  pop.columns.assign(static_cast<std::size_t>(p), std::vector<double>(static_cast<std::size_t>(n)));
  const int block = p / 2;
  const double rho = 0.5;
  for (int i = 0; i < n; ++i) {
    double prev = 0.0;
    for (int j = 0; j < p; ++j) {
      const double eps = normal(gen);
      double v;
      if (j < block && j > 0) {
        v = rho * prev + std::sqrt(1.0 - rho * rho) * eps;
      } else {
        v = eps;
      }
      pop.columns[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
      prev = v;
    }
  }

  // Selection index on the first six features, decaying alternating loads.
  static constexpr double kLoads[6] = {1.0, -0.8, 0.6, -0.4, 0.3, 0.2};
  std::vector<double> index(static_cast<std::size_t>(n), 0.0);
  const int k_sel = std::min(6, p);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < k_sel; ++j)
      s += kLoads[j] * pop.columns[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    index[static_cast<std::size_t>(i)] = cfg.selection_strength * s;
  }

  pop.propensity.assign(static_cast<std::size_t>(n), cfg.target_share);
  if (cfg.selection == SelectionKind::logit) {
    const double shift = detail::shift_intercept(index, cfg.target_share);
    for (int i = 0; i < n; ++i)
      pop.propensity[static_cast<std::size_t>(i)] =
          detail::logistic(index[static_cast<std::size_t>(i)] + shift);
  }
  pop.propensity_max = *std::max_element(pop.propensity.begin(), pop.propensity.end());

  // Confounded month-count outcome.
  const double index_sd = std::sqrt(stats::population_variance(index));
  const double index_mean = stats::mean(index);
  pop.y0.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double s_std = index_sd > 0.0
                             ? (index[static_cast<std::size_t>(i)] - index_mean) / index_sd
                             : 0.0;
    const double t = pop.columns[static_cast<std::size_t>(p - 1)][static_cast<std::size_t>(i)];
    const double q = detail::logistic(0.5 * (0.8 * s_std + 0.5 * t) - 0.4);
    std::binomial_distribution<int> months(33, q);
    pop.y0[static_cast<std::size_t>(i)] = static_cast<double>(months(gen));
  }

  // Effect specification.
  std::vector<double> component(static_cast<std::size_t>(n), 0.0);
  switch (cfg.effect) {
    case EffectKind::zero:
      pop.iate.assign(static_cast<std::size_t>(n), 0.0);
      break;
    case EffectKind::sine:
      for (int i = 0; i < n; ++i)
        component[static_cast<std::size_t>(i)] =
            xi(pop.propensity[static_cast<std::size_t>(i)], pop.propensity_max);
      pop.iate = make_iate(component, cfg.alpha);
      break;
    case EffectKind::linear_feature:
      for (int i = 0; i < n; ++i)
        component[static_cast<std::size_t>(i)] =
            pop.columns[static_cast<std::size_t>(cfg.effect_feature)][static_cast<std::size_t>(i)];
      pop.iate = make_iate(component, cfg.alpha);
      break;
  }

  pop.ite.resize(static_cast<std::size_t>(n));
  pop.y1.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    pop.ite[static_cast<std::size_t>(i)] = ite_noise(pop.iate[static_cast<std::size_t>(i)], gen);
    pop.y1[static_cast<std::size_t>(i)] =
        pop.y0[static_cast<std::size_t>(i)] + pop.ite[static_cast<std::size_t>(i)];
  }

  // Validation sample drawn without replacement; the rest is the training pool.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), gen);
  pop.validation.assign(order.begin(), order.begin() + cfg.validation_size);
  pop.pool.assign(order.begin() + cfg.validation_size, order.end());
  std::sort(pop.validation.begin(), pop.validation.end());
  std::sort(pop.pool.begin(), pop.pool.end());
  return pop;
}

// Replication engine ---------------------------------------------------------

struct EmcsGateFamily {
  int feature_index = 0;
  int bins = 0;  // 0 = one group per distinct value
  std::string label;
};

struct EmcsEstimatorSpec {
  std::string name;
  ForestConfig config;
};

struct EmcsOptions {
  int replications = 50;
  int train_n = 1000;
  std::vector<EmcsGateFamily> gates;
  int threads = 1;
  std::string dump_path;  // optional per-replication ATE/GATE dump (CSV)
};

struct MetricsRow {
  std::string estimator;
  std::string level;  // "ate", gate family label, or "iate"
  int groups = 0;
  double avg_bias = 0.0;
  double avg_abs_bias = 0.0;
  double true_xsd = 0.0;
  double est_xsd = 0.0;
  double mse = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;
  double jb = 0.0;
  double se_avg_bias = 0.0;
  double coverage90 = 0.0;
  int replications_used = 0;
  int failures = 0;
};

struct EmcsReplicationRecord {
  int replication = 0;
  std::string estimator;
  std::string level;
  double group_value = 0.0;
  double truth = 0.0;
  double estimate = 0.0;
  double std_err = 0.0;
};

struct EmcsResult {
  std::vector<MetricsRow> rows;
  std::vector<EmcsReplicationRecord> records;  // ATE and GATE rows per replication
};

namespace detail {

struct ParamAccum {
  double truth = 0.0;
  long double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  long double se_sum = 0, sq_err = 0;
  int covered = 0;
  int n = 0;

  void add(double est, double se) {
    const long double e = est;
    s1 += e;
    s2 += e * e;
    s3 += e * e * e;
    s4 += e * e * e * e;
    se_sum += se;
    const long double err = e - truth;
    sq_err += err * err;
    if (std::fabs(est - truth) <= stats::kNormal90 * se) ++covered;
    ++n;
  }

  double bias() const { return n ? static_cast<double>(s1 / n) - truth : 0.0; }
  double mse() const { return n ? static_cast<double>(sq_err / n) : 0.0; }
  double mean_se() const { return n ? static_cast<double>(se_sum / n) : 0.0; }
  double coverage() const {
    return n ? static_cast<double>(covered) / n : std::numeric_limits<double>::quiet_NaN();
  }
  double sd_est() const {  // sample sd across replications
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const long double mean = s1 / n;
    const long double var = (s2 - static_cast<long double>(n) * mean * mean) / (n - 1);
    return var > 0 ? std::sqrt(static_cast<double>(var)) : 0.0;
  }
  // Central moments for skewness/kurtosis/JB over replications.
  void shape(double& skew, double& kurt, double& jb_value) const {
    skew = kurt = jb_value = std::numeric_limits<double>::quiet_NaN();
    if (n < 8) return;
    const long double m = s1 / n;
    const long double m2 = s2 / n - m * m;
    if (!(m2 > 0)) return;
    const long double m3 = s3 / n - 3 * m * (s2 / n) + 2 * m * m * m;
    const long double m4 =
        s4 / n - 4 * m * (s3 / n) + 6 * m * m * (s2 / n) - 3 * m * m * m * m;
    const double s = static_cast<double>(m3 / std::pow(static_cast<double>(m2), 1.5L));
    const double k = static_cast<double>(m4 / (m2 * m2));
    skew = s;
    kurt = k;
    jb_value = (static_cast<double>(n) / 6.0) * (s * s + 0.25 * (k - 3.0) * (k - 3.0));
  }
};

struct LevelAccum {
  std::string label;
  std::vector<double> group_values;  // per parameter (gate levels), empty for ate/iate
  std::vector<ParamAccum> params;
  long double xsd_sum = 0;  // per-replication cross-sectional sd of estimates
  int xsd_n = 0;

  void add_replication(std::span<const double> est, std::span<const double> se) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].add(est[i], se[i]);
    if (params.size() > 1) {
      xsd_sum += std::sqrt(stats::population_variance(est));
      ++xsd_n;
    }
  }

  MetricsRow finalize(const std::string& estimator, int failures) const {
    MetricsRow row;
    row.estimator = estimator;
    row.level = label;
    row.groups = static_cast<int>(params.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    long double bias_sum = 0, abs_bias_sum = 0, mse_sum = 0, se_bias_sum = 0, cov_sum = 0;
    long double skew_sum = 0, kurt_sum = 0, jb_sum = 0;
    int shape_n = 0, se_bias_n = 0;
    std::vector<double> truths;
    for (const auto& pa : params) {
      truths.push_back(pa.truth);
      bias_sum += pa.bias();
      abs_bias_sum += std::fabs(pa.bias());
      mse_sum += pa.mse();
      cov_sum += pa.coverage();
      double s, k, j;
      pa.shape(s, k, j);
      if (!std::isnan(j)) {
        skew_sum += s;
        kurt_sum += k;
        jb_sum += j;
        ++shape_n;
      }
      const double sd = pa.sd_est();
      if (!std::isnan(sd)) {
        se_bias_sum += pa.mean_se() - sd;
        ++se_bias_n;
      }
    }
    const double g = static_cast<double>(params.size());
    row.avg_bias = static_cast<double>(bias_sum) / g;
    row.avg_abs_bias = static_cast<double>(abs_bias_sum) / g;
    row.mse = static_cast<double>(mse_sum) / g;
    row.coverage90 = static_cast<double>(cov_sum) / g;
    row.true_xsd = params.size() > 1 ? std::sqrt(stats::population_variance(truths)) : nan;
    row.est_xsd = xsd_n > 0 ? static_cast<double>(xsd_sum / xsd_n) : nan;
    row.skewness = shape_n ? static_cast<double>(skew_sum) / shape_n : nan;
    row.kurtosis = shape_n ? static_cast<double>(kurt_sum) / shape_n : nan;
    row.jb = shape_n ? static_cast<double>(jb_sum) / shape_n : nan;
    row.se_avg_bias = se_bias_n ? static_cast<double>(se_bias_sum) / se_bias_n : nan;
    row.replications_used = params.empty() ? 0 : params.front().n;
    row.failures = failures;
    return row;
  }
};

}  // namespace detail

inline void write_metrics_csv(std::span<const MetricsRow> rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write metrics file '" + path + "'");
  os << "estimator,level,groups,avg_bias,avg_abs_bias,true_xsd,est_xsd,mse,"
        "skewness,kurtosis,jb,se_avg_bias,coverage90,replications,failures\n";
  os.precision(10);
  for (const auto& r : rows) {
    os << r.estimator << ',' << r.level << ',' << r.groups << ',' << r.avg_bias << ','
       << r.avg_abs_bias << ',' << r.true_xsd << ',' << r.est_xsd << ',' << r.mse << ','
       << r.skewness << ',' << r.kurtosis << ',' << r.jb << ',' << r.se_avg_bias << ','
       << r.coverage90 << ',' << r.replications_used << ',' << r.failures << '\n';
  }
}

// Runs the full replication protocol: draw a training sample from the pool,
// assign treatments from the true propensity, reveal the corresponding
// potential outcome, train every estimator, predict individualized effects
// on the validation sample, aggregate, and score against the known truths.
inline EmcsResult run_emcs(const DgpConfig& dgp,
                           const std::vector<EmcsEstimatorSpec>& estimators,
                           const EmcsOptions& opt) {
  if (estimators.empty()) throw ConfigError("no estimators configured");
  if (opt.replications < 1) throw ConfigError("replications must be positive");

  const Population pop = gen_population(dgp);
  if (opt.train_n > static_cast<int>(pop.pool.size()))
    throw ConfigError("train_n exceeds the available population pool");

  const int n_val = static_cast<int>(pop.validation.size());
  const TreatmentPair contrast{1, 0};

  // Truths on the validation sample.
  std::vector<double> true_iate(static_cast<std::size_t>(n_val));
  for (int i = 0; i < n_val; ++i)
    true_iate[static_cast<std::size_t>(i)] =
        pop.iate[static_cast<std::size_t>(pop.validation[static_cast<std::size_t>(i)])];
  const double true_ate = stats::mean(true_iate);

  // Group assignment per gate family over validation points.
  struct FamilyGroups {
    std::string label;
    std::vector<double> codes;         // per validation point
    std::vector<double> levels;        // ordered distinct codes
  };
  std::vector<FamilyGroups> families;
  for (const auto& g : opt.gates) {
    FamilyGroups fg;
    fg.label = g.label.empty() ? ("x" + std::to_string(g.feature_index)) : g.label;
    std::vector<double> raw(static_cast<std::size_t>(n_val));
    for (int i = 0; i < n_val; ++i)
      raw[static_cast<std::size_t>(i)] =
          pop.columns[static_cast<std::size_t>(g.feature_index)]
                     [static_cast<std::size_t>(pop.validation[static_cast<std::size_t>(i)])];
    fg.codes = g.bins > 0 ? quantile_bins(raw, g.bins) : raw;
    fg.levels = distinct_values(fg.codes);
    families.push_back(std::move(fg));
  }

  // Accumulators per estimator.
  struct EstAccum {
    detail::LevelAccum ate;
    std::vector<detail::LevelAccum> gates;
    detail::LevelAccum iate;
    int failures = 0;
  };
  std::vector<EstAccum> accums(estimators.size());
  for (auto& acc : accums) {
    acc.ate.label = "ate";
    acc.ate.params.resize(1);
    acc.ate.params[0].truth = true_ate;
    acc.iate.label = "iate";
    acc.iate.params.resize(static_cast<std::size_t>(n_val));
    for (int i = 0; i < n_val; ++i)
      acc.iate.params[static_cast<std::size_t>(i)].truth = true_iate[static_cast<std::size_t>(i)];
    for (const auto& fg : families) {
      detail::LevelAccum la;
      la.label = fg.label;
      for (double level : fg.levels) {
        detail::ParamAccum pa;
        long double sum = 0;
        int cnt = 0;
        for (int i = 0; i < n_val; ++i) {
          if (fg.codes[static_cast<std::size_t>(i)] == level) {
            sum += true_iate[static_cast<std::size_t>(i)];
            ++cnt;
          }
        }
        pa.truth = cnt ? static_cast<double>(sum / cnt) : 0.0;
        la.group_values.push_back(level);
        la.params.push_back(pa);
      }
      acc.gates.push_back(std::move(la));
    }
  }

  EmcsResult result;
  std::vector<FeatureSpec> schema;
  for (int j = 0; j < pop.p(); ++j)
    schema.push_back({"x" + std::to_string(j), FeatureKind::ordered, j});

  for (int rep = 0; rep < opt.replications; ++rep) {
    auto gen = rng::make_stream(dgp.seed, rng::Domain::replication,
                                static_cast<std::uint64_t>(rep));
    // Training draw without replacement from the pool.
    std::vector<int> pool = pop.pool;
    for (int i = 0; i < opt.train_n; ++i) {
      std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(gen))]);
    }
    pool.resize(static_cast<std::size_t>(opt.train_n));

    Dataset train;
    train.schema = schema;
    train.m = 2;
    train.original_treatment_levels = {0, 1};
    train.columns.assign(static_cast<std::size_t>(pop.p()), {});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int row : pool) {
      const auto r = static_cast<std::size_t>(row);
      const int d = unif(gen) < pop.propensity[r] ? 1 : 0;
      train.treatment.push_back(d);
      train.outcome.push_back(d == 1 ? pop.y1[r] : pop.y0[r]);
    }
    for (int j = 0; j < pop.p(); ++j) {
      auto& col = train.columns[static_cast<std::size_t>(j)];
      col.reserve(pool.size());
      for (int row : pool)
        col.push_back(pop.columns[static_cast<std::size_t>(j)][static_cast<std::size_t>(row)]);
    }

    for (std::size_t ei = 0; ei < estimators.size(); ++ei) {
      ForestConfig cfg = estimators[ei].config;
      cfg.seed = rng::make_stream(dgp.seed, rng::Domain::replication,
                                  static_cast<std::uint64_t>(rep) * 1000003ULL + ei)();
      cfg.threads = opt.threads;
      try {
        const Forest forest = train_forest(train, cfg);

        std::vector<double> est(static_cast<std::size_t>(n_val));
        std::vector<double> se(static_cast<std::size_t>(n_val));
        std::vector<WeightVector> point_weights(static_cast<std::size_t>(n_val));
        {
          detail::WeightWorkspace ws;
          std::vector<double> x(static_cast<std::size_t>(pop.p()));
          for (int i = 0; i < n_val; ++i) {
            const auto row = static_cast<std::size_t>(pop.validation[static_cast<std::size_t>(i)]);
            for (int j = 0; j < pop.p(); ++j)
              x[static_cast<std::size_t>(j)] = pop.columns[static_cast<std::size_t>(j)][row];
            point_weights[static_cast<std::size_t>(i)] =
                detail::iate_weights_impl(forest, x, contrast, {EffectLevel::iate, 0.0, i}, ws);
            const auto& w = point_weights[static_cast<std::size_t>(i)];
            est[static_cast<std::size_t>(i)] = weight_dot(w, forest.y_b);
            const auto w_hat = dense_scaled_weights(w, forest.n_b());
            const auto moments = knn_moments(w_hat, forest.y_b, forest.knn_k());
            se[static_cast<std::size_t>(i)] = std::sqrt(weights_variance(w_hat, moments));
          }
        }

        auto aggregate = [&](std::span<const int> members, EvalTag tag) {
          WeightAverager avg(forest.n_b());
          for (int i : members) avg.add(point_weights[static_cast<std::size_t>(i)]);
          const WeightVector w = avg.finalize(contrast, tag);
          EffectEstimate e = estimate_from_weights(forest, w);
          return e;
        };

        std::vector<int> all(static_cast<std::size_t>(n_val));
        std::iota(all.begin(), all.end(), 0);
        const EffectEstimate ate = aggregate(all, {EffectLevel::ate, 0.0, -1});
        accums[ei].ate.add_replication(std::span(&ate.point, 1), std::span(&ate.std_err, 1));
        result.records.push_back({rep, estimators[ei].name, "ate", 0.0, true_ate, ate.point,
                                  ate.std_err});

        for (std::size_t fi = 0; fi < families.size(); ++fi) {
          const auto& fg = families[fi];
          std::vector<double> g_est, g_se;
          for (std::size_t gi = 0; gi < fg.levels.size(); ++gi) {
            std::vector<int> members;
            for (int i = 0; i < n_val; ++i)
              if (fg.codes[static_cast<std::size_t>(i)] == fg.levels[gi]) members.push_back(i);
            const EffectEstimate e =
                aggregate(members, {EffectLevel::gate, fg.levels[gi], -1});
            g_est.push_back(e.point);
            g_se.push_back(e.std_err);
            result.records.push_back({rep, estimators[ei].name, fg.label, fg.levels[gi],
                                      accums[ei].gates[fi].params[gi].truth, e.point,
                                      e.std_err});
          }
          accums[ei].gates[fi].add_replication(g_est, g_se);
        }

        accums[ei].iate.add_replication(est, se);
      } catch (const EstimationError&) {
        ++accums[ei].failures;
      } catch (const DataError&) {
        ++accums[ei].failures;
      }
    }
  }

  for (std::size_t ei = 0; ei < estimators.size(); ++ei) {
    const auto& acc = accums[ei];
    result.rows.push_back(acc.ate.finalize(estimators[ei].name, acc.failures));
    for (const auto& g : acc.gates)
      result.rows.push_back(g.finalize(estimators[ei].name, acc.failures));
    result.rows.push_back(acc.iate.finalize(estimators[ei].name, acc.failures));
  }

  if (!opt.dump_path.empty()) {
    std::ofstream os(opt.dump_path);
    if (!os) throw DataError("cannot write replication dump '" + opt.dump_path + "'");
    os << "replication,estimator,level,group,truth,estimate,std_err\n";
    os.precision(10);
    for (const auto& rec : result.records)
      os << rec.replication << ',' << rec.estimator << ',' << rec.level << ','
         << rec.group_value << ',' << rec.truth << ',' << rec.estimate << ','
         << rec.std_err << '\n';
  }
  return result;
}

}  // namespace mcf
