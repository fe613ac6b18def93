#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace ctd::quad {

struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Hermite rule for E[f(Z)], Z ~ N(0, 1): weights sum to one.
Rule gauss_hermite(std::size_t n);

// Gauss-Legendre rule on [a, b].
Rule gauss_legendre(std::size_t n, double a = -1.0, double b = 1.0);

// Composite trapezoid over equally spaced samples.
double trapezoid(std::span<const double> values, double h);

// Composite Simpson with `intervals` rounded up to an even count.
double simpson(const std::function<double(double)>& f, double a, double b, std::size_t intervals);

}  // namespace ctd::quad
