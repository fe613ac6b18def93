#pragma once

#include <cmath>

#include <boost/math/distributions/normal.hpp>

namespace ctd {

inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;

inline double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double norm_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

// CDF of N(mean, variance); a zero variance degenerates to the indicator x >= mean.
inline double normal_cdf(double x, double mean, double variance) {
  if (variance <= 0.0) return x >= mean ? 1.0 : 0.0;
  return norm_cdf((x - mean) / std::sqrt(variance));
}

inline double normal_pdf(double x, double mean, double variance) {
  const double sd = std::sqrt(variance);
  return norm_pdf((x - mean) / sd) / sd;
}

}  // namespace ctd
