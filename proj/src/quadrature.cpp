#include "ctd/quadrature.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "ctd/errors.hpp"

namespace ctd::quad {

namespace {

// Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix, weights the
// squared first eigenvector components times the total mass.
Rule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& offdiag, double mass) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, offdiag, Eigen::ComputeEigenvectors);
  if (eig.info() != Eigen::Success) throw ConsistencyError("Golub-Welsch eigen-decomposition failed");
  const Eigen::Index n = diag.size();
  Rule r;
  r.nodes.resize(static_cast<std::size_t>(n));
  r.weights.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    r.nodes[static_cast<std::size_t>(i)] = eig.eigenvalues()(i);
    const double v = eig.eigenvectors()(0, i);
    r.weights[static_cast<std::size_t>(i)] = mass * v * v;
  }
  return r;
}

}  // namespace

Rule gauss_hermite(std::size_t n) {
  if (n == 0) throw InputError("gauss_hermite: need at least one node");
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd off(std::max<Eigen::Index>(m - 1, 0));
  for (Eigen::Index k = 1; k < m; ++k) off(k - 1) = std::sqrt(static_cast<double>(k));
  if (n == 1) return Rule{{0.0}, {1.0}};
  return golub_welsch(diag, off, 1.0);
}

Rule gauss_legendre(std::size_t n, double a, double b) {
  if (n == 0) throw InputError("gauss_legendre: need at least one node");
  const auto m = static_cast<Eigen::Index>(n);
  Rule r;
  if (n == 1) {
    r = Rule{{0.0}, {2.0}};
  } else {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd off(m - 1);
    for (Eigen::Index k = 1; k < m; ++k) {
      const double kk = static_cast<double>(k);
      off(k - 1) = kk / std::sqrt(4.0 * kk * kk - 1.0);
    }
    r = golub_welsch(diag, off, 2.0);
  }
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  for (std::size_t i = 0; i < n; ++i) {
    r.nodes[i] = mid + half * r.nodes[i];
    r.weights[i] *= half;
  }
  return r;
}

double trapezoid(std::span<const double> values, double h) {
  if (values.size() < 2) return 0.0;
  double acc = 0.5 * (values.front() + values.back());
  for (std::size_t i = 1; i + 1 < values.size(); ++i) acc += values[i];
  return acc * h;
}

double simpson(const std::function<double(double)>& f, double a, double b, std::size_t intervals) {
  if (intervals < 2) intervals = 2;
  if (intervals % 2 != 0) ++intervals;
  const double h = (b - a) / static_cast<double>(intervals);
  double odd = 0.0;
  double even = 0.0;
  for (std::size_t i = 1; i < intervals; ++i) {
    const double v = f(a + static_cast<double>(i) * h);
    (i % 2 ? odd : even) += v;
  }
  return h / 3.0 * (f(a) + f(b) + 4.0 * odd + 2.0 * even);
}

}  // namespace ctd::quad
