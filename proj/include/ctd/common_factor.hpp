#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

// Common-factor approximation of a Gaussian vector q_i ~ N(mu_i, sigma_i^2):
//
//   q~_i = C + A_i,   C ~ N(0, sigma_min^2 gamma),   A_i ~ N(mu_i, sigma_i^2 - Var C)
//
// with C, A_1, ..., A_N independent. The maximum max(0, q~_1, ..., q~_N) then
// has CDF H = f_C * F_{max A} on [0, inf), evaluated here by FFT convolution.

namespace ctd {

enum class MomentRule {
  trapezoid,      // composite trapezoid on [0, L]
  left_endpoint,  // left Riemann sum on [0, L)
};

struct ConvolutionSettings {
  double delta = 5e-5;       // grid step
  double eps_tail = 1e-10;   // 1 - H(L) threshold defining the cutoff L
  double eps_gamma = 1e-10;  // gamma is clamped to [0, 1 - eps_gamma]
  double tau_cdf = 1e-9;     // tolerated monotonicity violation of a sampled CDF
  double tau_prob = 1e-8;    // tolerated mass deficiency of the probability quadrature
  double tau_var = 1e-12;    // tolerated negative central variance
  double quad_width = 8.0;   // quadrature half-width in standard deviations
  MomentRule rule = MomentRule::trapezoid;  // quadrature of E[M~] in the estimator pipeline
  std::size_t hermite_nodes = 48;  // per axis, two-group quadrature

  void validate() const;
};

struct GammaFit {
  double gamma = 0.0;          // in [0, 1 - eps_gamma]
  double unconstrained = 0.0;  // minimiser without the [0, 1) constraint
  bool clamped = false;
};

// Frobenius distance between the common-factor correlation matrix for `gamma`
// and `target_corr` (diagonals agree by construction and do not contribute).
double gamma_objective(std::span<const double> sigmas, const Eigen::MatrixXd& target_corr, double gamma);

// N = 2 uses the exact match gamma = rho * max(sigma) / min(sigma); N >= 3 a
// bounded Brent search on [0, 1 - eps_gamma]. Both are clamped identically.
GammaFit optimize_gamma(std::span<const double> sigmas, const Eigen::MatrixXd& target_corr,
                        double eps_gamma = 1e-10);

struct FactorComponent {
  double a_mean = 0.0;
  double a_variance = 0.0;
};

struct FactorDecomposition {
  double gamma = 0.0;
  double sigma_min_sq = 0.0;
  double c_variance = 0.0;  // sigma_min_sq * gamma
  std::vector<FactorComponent> components;

  std::size_t size() const { return components.size(); }
  double total_variance(std::size_t i) const { return components[i].a_variance + c_variance; }
};

// Zero sigmas are allowed and denote constant components (their presence forces Var C = 0).
FactorDecomposition decompose(std::span<const double> mus, std::span<const double> sigmas, double gamma);

// P[max_i A_i <= x]; zero-variance components contribute the indicator x >= mu_i.
double independent_max_cdf(const FactorDecomposition& dec, double x);

struct GridSpec {
  double x_lo = 0.0;
  double delta = 0.0;
  std::size_t intervals = 0;
};

// Samples on x_lo + i * delta, i = 0..n-1.
class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(double x_lo, double delta, std::vector<double> values);

  double x_lo() const { return x_lo_; }
  double x_hi() const { return x(values_.size() - 1); }
  double delta() const { return delta_; }
  std::size_t size() const { return values_.size(); }
  double x(std::size_t i) const { return x_lo_ + static_cast<double>(i) * delta_; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

  // Linear interpolation, clamped to the end values outside [x_lo, x_hi].
  double at(double x) const;

 private:
  double x_lo_ = 0.0;
  double delta_ = 0.0;
  std::vector<double> values_;
};

// H(x) = P[C + max_i A_i <= x] on the grid via linear FFT convolution of the
// sampled density of C against independent_max_cdf. Bypasses the convolution when Var C = 0.
GridFunction shifted_max_cdf(const FactorDecomposition& dec, const GridSpec& grid,
                             const ConvolutionSettings& settings = {});

// E[max(0, .)] = int_0^L (1 - H). H must start at x = 0 and reach 1 - H(L) < eps_tail.
double max_expectation(const GridFunction& cdf, double eps_tail = 1e-10, MomentRule rule = MomentRule::trapezoid);

// E[max(0, .)^2] = int_0^L 2x (1 - H).
double max_raw_second_moment(const GridFunction& cdf, double eps_tail = 1e-10,
                             MomentRule rule = MomentRule::trapezoid);

// raw_second - mean^2, clamped at zero; throws ConsistencyError below -tau_var.
double max_variance(double mean, double raw_second, double tau_var = 1e-12);

struct MaxProbabilities {
  std::vector<double> probs;  // P[max = q~_i]
  double residual = 1.0;      // P[max = 0]
};

// P[max = q~_i] = int f_{A_i}(x) F_C(x) prod_{j != i} F_{A_j}(x) dx by composite Simpson.
MaxProbabilities max_probabilities(const FactorDecomposition& dec, const ConvolutionSettings& settings = {});

// Conservative start for the cutoff search: max mu + z * max sigma with a union bound over components.
double analytic_tail_bound(std::span<const double> means, std::span<const double> sds, double eps_tail);

struct CdfOnSupport {
  GridFunction cdf;  // H on [0, cutoff]
  double cutoff = 0.0;
  bool domain_grown = false;  // the analytic bound had to be extended
};

using CdfSampler = std::function<GridFunction(const GridSpec&)>;

// Samples H on [0, bound], extending the domain until the tail threshold is
// reached, then truncates at the first grid point with 1 - H < eps_tail.
CdfOnSupport cdf_on_support(const CdfSampler& sampler, double analytic_bound, double delta, double eps_tail);

CdfOnSupport max_cdf_on_support(const FactorDecomposition& dec, const ConvolutionSettings& settings = {});

// Smallest grid-aligned L >= 0 with 1 - H(L) < eps_tail.
double tail_cutoff(const FactorDecomposition& dec, double eps_tail, const ConvolutionSettings& settings = {});

// Two groups with their own common factors C1, C2 of correlation c_corr.
struct TwoGroupFactors {
  FactorDecomposition group[2];
  std::vector<std::size_t> members[2];  // original component indices
  double c_corr = 0.0;
  bool clamped = false;
};

// Fits Var C1, Var C2 (Frobenius distance to target_corr over all off-diagonal
// entries, cross-group entries modelled as c_corr sqrt(Var C1 Var C2) / (sigma_i sigma_j)).
// membership[i] in {0, 1}; both groups must be non-empty.
TwoGroupFactors fit_two_group(std::span<const double> mus, std::span<const double> sigmas,
                              const Eigen::MatrixXd& target_corr, std::span<const int> membership, double c_corr,
                              double eps_gamma = 1e-10);

// P[max(0, C1 + max A^(1), C2 + max A^(2)) <= z] by tensor Gauss-Hermite
// quadrature against the bivariate normal (C1, C2).
double two_group_max_cdf(const FactorDecomposition& g1, const FactorDecomposition& g2, double c_corr, double z,
                         std::size_t hermite_nodes = 48);

GridFunction two_group_shifted_max_cdf(const FactorDecomposition& g1, const FactorDecomposition& g2, double c_corr,
                                       const GridSpec& grid, std::size_t hermite_nodes = 48);

CdfOnSupport two_group_cdf_on_support(const TwoGroupFactors& f, const ConvolutionSettings& settings = {});

// Probabilities ordered as group 0 members followed by group 1 members.
MaxProbabilities two_group_max_probabilities(const TwoGroupFactors& f, const ConvolutionSettings& settings = {});

}  // namespace ctd
