// Small statistics helpers used across the library: moments, normal and
// chi-squared tail probabilities.
#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>

namespace mcf::stats {

inline double mean(std::span<const double> v) {
  long double s = 0.0L;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : static_cast<double>(s / static_cast<long double>(v.size()));
}

// Unbiased sample variance (n-1 denominator); 0 for n < 2.
inline double sample_variance(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n < 2) return 0.0;
  const double m = mean(v);
  long double s = 0.0L;
  for (double x : v) {
    const long double d = x - m;
    s += d * d;
  }
  return static_cast<double>(s / static_cast<long double>(n - 1));
}

// Population variance (1/n denominator).
inline double population_variance(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  const double m = mean(v);
  long double s = 0.0L;
  for (double x : v) {
    const long double d = x - m;
    s += d * d;
  }
  return static_cast<double>(s / static_cast<long double>(n));
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population (1/n)
  double skewness = 0.0;
  double kurtosis = 0.0;  // non-excess; 3 for the normal
};

// Population-moment skewness/kurtosis: m3/m2^1.5 and m4/m2^2.
inline Moments moments(std::span<const double> v) {
  Moments out;
  const std::size_t n = v.size();
  if (n == 0) return out;
  out.mean = mean(v);
  long double m2 = 0.0L, m3 = 0.0L, m4 = 0.0L;
  for (double x : v) {
    const long double d = x - out.mean;
    const long double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  out.variance = static_cast<double>(m2);
  if (m2 > 0.0L) {
    out.skewness = static_cast<double>(m3 / std::pow(static_cast<double>(m2), 1.5));
    out.kurtosis = static_cast<double>(m4 / (m2 * m2));
  } else {
    out.skewness = std::numeric_limits<double>::quiet_NaN();
    out.kurtosis = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Two-sided normal p-value for a z-statistic.
inline double normal_two_sided_p(double z) {
  return std::erfc(std::fabs(z) / std::sqrt(2.0));
}

// Upper tail of the chi-squared distribution.
inline double chi_squared_sf(double stat, int df) {
  if (df <= 0) throw std::invalid_argument("chi_squared_sf: df must be positive");
  if (stat <= 0.0) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(df));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

// 90% two-sided normal quantile used for coverage intervals.
inline constexpr double kNormal90 = 1.6448536269514722;

}  // namespace mcf::stats
