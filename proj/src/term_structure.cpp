#include "ctd/term_structure.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ctd/errors.hpp"

namespace ctd {

namespace {

constexpr double kSymmetryTol = 1e-12;
constexpr double kPsdTol = 1e-10;

// Horizon comparisons allow for the rounding in k * T / R.
bool within_horizon(double t, double end) { return t <= end * (1.0 + 1e-12) + 1e-14; }

}  // namespace

ThetaCurve::ThetaCurve(double constant_value)
    : knots_{std::numeric_limits<double>::infinity()}, values_{constant_value} {
  if (!std::isfinite(constant_value)) throw InputError("theta value must be finite");
}

ThetaCurve::ThetaCurve(std::vector<double> knots, std::vector<double> values)
    : knots_(std::move(knots)), values_(std::move(values)) {
  if (knots_.empty() || knots_.size() != values_.size())
    throw InputError("theta curve needs one value per segment end point");
  double prev = 0.0;
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    if (!(knots_[i] > prev))
      throw InputError(fmt::format("theta knots must be strictly increasing and positive (knot {})", i));
    if (!std::isfinite(values_[i])) throw InputError(fmt::format("theta value {} is not finite", i));
    prev = knots_[i];
  }
}

double ThetaCurve::value_at(double t) const {
  if (t < 0.0 || !within_horizon(t, end()))
    throw DomainError(fmt::format("t = {} outside theta domain [0, {}]", t, end()));
  auto it = std::lower_bound(knots_.begin(), knots_.end(), t);
  if (it == knots_.end()) --it;
  return values_[static_cast<std::size_t>(it - knots_.begin())];
}

double ThetaCurve::mean_reversion_integral(double kappa, double t) const {
  if (t < 0.0 || !within_horizon(t, end()))
    throw DomainError(fmt::format("t = {} outside theta domain [0, {}]", t, end()));
  double acc = 0.0;
  double lo = 0.0;
  for (std::size_t i = 0; i < knots_.size() && lo < t; ++i) {
    const double hi = std::min(knots_[i], t);
    // v * (exp(-kappa (t - hi)) - exp(-kappa (t - lo)))
    acc += -values_[i] * std::exp(-kappa * (t - hi)) * std::expm1(-kappa * (hi - lo));
    lo = hi;
  }
  return acc;
}

void SpreadParams::validate(double horizon) const {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw InputError(fmt::format("kappa must be positive, got {}", kappa));
  if (!(xi >= 0.0) || !std::isfinite(xi)) throw InputError(fmt::format("xi must be non-negative, got {}", xi));
  if (!std::isfinite(q0)) throw InputError("q0 must be finite");
  if (!within_horizon(horizon, theta.end()))
    throw InputError(fmt::format("theta curve ends at {} before the horizon {}", theta.end(), horizon));
}

CorrelationSpec::CorrelationSpec(Eigen::MatrixXd rho) : rho_(std::move(rho)) {
  const Eigen::Index n = rho_.rows();
  if (n == 0 || rho_.cols() != n) throw InputError("correlation matrix must be square and non-empty");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(rho_(i, i) - 1.0) > kSymmetryTol)
      throw InputError(fmt::format("correlation diagonal entry ({0},{0}) must be 1", i));
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::isfinite(rho_(i, j)) || std::abs(rho_(i, j)) > 1.0)
        throw InputError(fmt::format("correlation entry ({},{}) must lie in [-1, 1]", i, j));
      if (std::abs(rho_(i, j) - rho_(j, i)) > kSymmetryTol)
        throw InputError(fmt::format("correlation matrix is not symmetric at ({},{})", i, j));
    }
  }
  rho_ = 0.5 * (rho_ + rho_.transpose()).eval();
  rho_.diagonal().setOnes();
  if (n > 1) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(rho_, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -kPsdTol)
      throw InputError(fmt::format("correlation matrix is not positive semi-definite (min eigenvalue {:.3e})",
                                   eig.eigenvalues().minCoeff()));
  }
}

CorrelationSpec CorrelationSpec::identity(std::size_t n) {
  return CorrelationSpec(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)));
}

CorrelationSpec CorrelationSpec::uniform(std::size_t n, double rho) {
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(m, m, rho);
  r.diagonal().setOnes();
  return CorrelationSpec(std::move(r));
}

bool CorrelationSpec::is_base_model_admissible() const {
  for (Eigen::Index i = 0; i < rho_.rows(); ++i)
    for (Eigen::Index j = 0; j < rho_.cols(); ++j)
      if (i != j && (rho_(i, j) < 0.0 || rho_(i, j) >= 1.0)) return false;
  return true;
}

void CorrelationSpec::require_base_model() const {
  if (!is_base_model_admissible())
    throw InputError(
        "off-diagonal correlations must lie in [0, 1) for the single common-factor model; "
        "negative correlations need a two-group split");
}

TimeGrid::TimeGrid(double maturity, double dt) : maturity_(maturity), dt_(dt), steps_(0) {
  if (!(maturity > 0.0) || !std::isfinite(maturity)) throw InputError("maturity must be positive");
  if (!(dt > 0.0) || dt > maturity) throw InputError("time step must lie in (0, maturity]");
  const double r = maturity / dt;
  const double rounded = std::round(r);
  if (std::abs(r - rounded) > 1e-9 * std::max(1.0, r))
    throw InputError(fmt::format("maturity {} is not an integer multiple of dt {}", maturity, dt));
  steps_ = static_cast<std::size_t>(rounded);
}

double TimeGrid::operator[](std::size_t k) const {
  if (k == steps_) return maturity_;
  return static_cast<double>(k) * maturity_ / static_cast<double>(steps_);
}

double spread_mean(const SpreadParams& p, double t) {
  if (t < 0.0) throw DomainError(fmt::format("spread_mean: negative time {}", t));
  return p.q0 * std::exp(-p.kappa * t) + p.theta.mean_reversion_integral(p.kappa, t);
}

double spread_variance(const SpreadParams& p, double t) {
  if (t < 0.0) throw DomainError(fmt::format("spread_variance: negative time {}", t));
  if (p.xi == 0.0) return 0.0;
  return -p.xi * p.xi * std::expm1(-2.0 * p.kappa * t) / (2.0 * p.kappa);
}

double pair_correlation(const SpreadParams& pi, const SpreadParams& pj, double rho_ij, double t) {
  if (!(t > 0.0)) throw DomainError("pair_correlation: undefined at t <= 0");
  if (pi.xi == 0.0 || pj.xi == 0.0) throw DomainError("pair_correlation: degenerate zero-variance spread");
  const double ks = pi.kappa + pj.kappa;
  const double num = -std::expm1(-ks * t);
  const double den = std::sqrt(std::expm1(-2.0 * pi.kappa * t) * std::expm1(-2.0 * pj.kappa * t));
  return 2.0 * rho_ij * std::sqrt(pi.kappa * pj.kappa) / ks * num / den;
}

SpreadConversion rates_to_spreads(const RateParams& base, std::span<const RateParams> others,
                                  const CorrelationSpec& rate_corr) {
  const std::size_t n = others.size();
  if (n == 0) throw InputError("rates_to_spreads: need at least one non-base rate");
  if (rate_corr.size() != n + 1)
    throw InputError(fmt::format("rate correlation must be {0}x{0} (base rate first)", n + 1));
  auto check = [](const RateParams& r, const char* what) {
    if (!(r.kappa > 0.0)) throw InputError(fmt::format("{}: kappa must be positive", what));
    if (!(r.xi >= 0.0)) throw InputError(fmt::format("{}: xi must be non-negative", what));
  };
  check(base, "base rate");
  for (const auto& r : others) check(r, "rate");

  SpreadConversion out;
  out.spreads.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const RateParams& r = others[i];
    const double rho0 = rate_corr(0, i + 1);
    SpreadParams s;
    s.kappa = 0.5 * (r.kappa + base.kappa);
    s.xi = std::sqrt(std::max(0.0, 2.0 - 2.0 * rho0)) * 0.5 * (r.xi + base.xi);
    s.q0 = r.r0 - base.r0;
    s.theta = ThetaCurve(s.q0);
    if (s.xi == 0.0)
      out.warnings.push_back(fmt::format("spread {} has zero volatility (rate perfectly correlated with base)", i + 1));
    out.q0.push_back(s.q0);
    out.spreads.push_back(std::move(s));
  }

  const auto m = static_cast<Eigen::Index>(n);
  out.spread_corr = Eigen::MatrixXd::Identity(m, m);
  const double x0 = base.xi;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double xi_i = out.spreads[i].xi;
      const double xi_j = out.spreads[j].xi;
      double rho = 0.0;
      if (xi_i > 0.0 && xi_j > 0.0) {
        const double cov = rate_corr(i + 1, j + 1) * others[i].xi * others[j].xi -
                           rate_corr(0, i + 1) * x0 * others[i].xi - rate_corr(0, j + 1) * x0 * others[j].xi +
                           x0 * x0;
        rho = cov / (xi_i * xi_j);
        if (std::abs(rho) > 1.0) {
          out.warnings.push_back(
              fmt::format("derived correlation of spreads {} and {} ({:.6f}) clipped to [-1, 1]", i + 1, j + 1, rho));
          rho = std::clamp(rho, -1.0, 1.0);
        }
        if (rho < 0.0)
          out.warnings.push_back(fmt::format(
              "derived correlation of spreads {} and {} is negative ({:.6f}); requires a two-group split", i + 1,
              j + 1, rho));
      }
      out.spread_corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rho;
      out.spread_corr(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = rho;
    }
  }
  return out;
}

}  // namespace ctd
