#pragma once

// Reference computations used only by the tests. Each one avoids the library
// code path it checks: adaptive Gauss-Kronrod instead of fixed-grid rules,
// golden-section search instead of Brent, mt19937_64 instead of Philox.

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace oracle {

inline double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
inline double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Adaptive 61-point Gauss-Kronrod on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
  double err = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, tol, &err);
}

// Integral split at interior break points (kinks of max(.)).
inline double integrate_pieces(const std::function<double(double)>& f, std::vector<double> cuts, double a, double b) {
  cuts.push_back(a);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = std::max(a, cuts[i]);
    const double hi = std::min(b, cuts[i + 1]);
    if (hi > lo) acc += integrate(f, lo, hi);
  }
  return acc;
}

// Golden-section minimisation on [a, b].
inline double golden_min(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// E[max(0, mu + sigma Z)^m], m in {1, 2}.
inline double max0_moment(double mu, double sigma, int m) {
  const double z = mu / sigma;
  if (m == 1) return mu * Phi(z) + sigma * phi(z);
  return (mu * mu + sigma * sigma) * Phi(z) + mu * sigma * phi(z);
}

// E[max(0, X1, X2)^m] for a bivariate normal by nested adaptive quadrature.
inline double max0_moment2(double m1, double s1, double m2, double s2, double rho, int m) {
  const double orth = std::sqrt(1.0 - rho * rho);
  auto inner = [&](double z1) {
    const double a = std::max(0.0, m1 + s1 * z1);
    const double b = m2 + s2 * rho * z1;
    const double c = s2 * orth;
    auto g = [&](double z2) {
      const double v = std::max(a, b + c * z2);
      return (m == 1 ? v : v * v) * phi(z2);
    };
    if (c == 0.0) return m == 1 ? std::max(a, b) : std::max(a, b) * std::max(a, b);
    return integrate_pieces(g, {(a - b) / c}, -9.0, 9.0);
  };
  return integrate_pieces([&](double z1) { return inner(z1) * phi(z1); }, {-m1 / s1}, -9.0, 9.0);
}

// Sample statistics helper.
struct Stats {
  double n = 0, mean = 0, m2 = 0;
  void add(double x) {
    n += 1;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  double var() const { return m2 / (n - 1); }
  double se() const { return std::sqrt(var() / n); }
};

}  // namespace oracle
