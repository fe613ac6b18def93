#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

// Hull-White model of collateral spreads
//
//   dq_i(t) = kappa_i (theta_i(t) - q_i(t)) dt + xi_i dW_i(t),   d[W_i, W_j] = rho_ij dt
//
// Marginal moments, pairwise correlations and the conversion of a set of
// collateral-rate parameters into spread parameters against a base rate.

namespace ctd {

// Piecewise-constant long-term mean. Segment i carries values[i] on
// (knots[i-1], knots[i]] with knots[-1] = 0; the curve is defined on [0, knots.back()].
class ThetaCurve {
 public:
  ThetaCurve() : ThetaCurve(0.0) {}
  explicit ThetaCurve(double constant_value);
  ThetaCurve(std::vector<double> knots, std::vector<double> values);

  double value_at(double t) const;
  double end() const { return knots_.back(); }
  bool is_constant() const { return values_.size() == 1; }

  // kappa * int_0^t theta(s) exp(-kappa (t - s)) ds, closed form per segment.
  double mean_reversion_integral(double kappa, double t) const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& values() const { return values_; }

  bool operator==(const ThetaCurve&) const = default;

 private:
  std::vector<double> knots_;
  std::vector<double> values_;
};

struct SpreadParams {
  double kappa = 0.0;  // 1/year
  double xi = 0.0;     // absolute volatility
  ThetaCurve theta;
  double q0 = 0.0;

  // Throws InputError unless kappa > 0, xi >= 0 and theta covers [0, horizon].
  void validate(double horizon) const;

  bool operator==(const SpreadParams&) const = default;
};

// Instantaneous correlation matrix of the driving Brownian motions.
class CorrelationSpec {
 public:
  CorrelationSpec() = default;
  // Validates symmetry, unit diagonal, entries in [-1, 1] and positive semi-definiteness.
  explicit CorrelationSpec(Eigen::MatrixXd rho);

  static CorrelationSpec identity(std::size_t n);
  static CorrelationSpec uniform(std::size_t n, double rho);

  std::size_t size() const { return static_cast<std::size_t>(rho_.rows()); }
  double operator()(std::size_t i, std::size_t j) const {
    return rho_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const Eigen::MatrixXd& matrix() const { return rho_; }

  // The single-factor model needs off-diagonal entries in [0, 1).
  bool is_base_model_admissible() const;
  void require_base_model() const;

  bool operator==(const CorrelationSpec& other) const { return rho_ == other.rho_; }

 private:
  Eigen::MatrixXd rho_;
};

// Uniform grid t_k = k T / R, k = 0..R.
class TimeGrid {
 public:
  TimeGrid(double maturity, double dt);

  double maturity() const { return maturity_; }
  double dt() const { return dt_; }
  std::size_t steps() const { return steps_; }
  std::size_t size() const { return steps_ + 1; }
  double operator[](std::size_t k) const;

 private:
  double maturity_;
  double dt_;
  std::size_t steps_;
};

double spread_mean(const SpreadParams& p, double t);
double spread_variance(const SpreadParams& p, double t);

// corr(q_i(t), q_j(t)) for t > 0.
double pair_correlation(const SpreadParams& pi, const SpreadParams& pj, double rho_ij, double t);

// Hull-White parameters of one collateral rate.
struct RateParams {
  double kappa = 0.0;
  double xi = 0.0;
  double r0 = 0.0;
};

struct SpreadConversion {
  std::vector<SpreadParams> spreads;  // theta held constant at q0
  Eigen::MatrixXd spread_corr;        // derived instantaneous spread correlation
  std::vector<double> q0;             // r_i(0) - r_0(0)
  std::vector<std::string> warnings;
};

// Averages each rate's mean reversion with the base rate, scales the mean
// volatility by sqrt(2 - 2 rho_0i) and derives spread-spread correlations from
// increment covariances. `rate_corr` is (N+1)x(N+1) with the base rate at index 0.
SpreadConversion rates_to_spreads(const RateParams& base, std::span<const RateParams> others,
                                  const CorrelationSpec& rate_corr);

}  // namespace ctd
