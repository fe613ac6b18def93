#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctd/common_factor.hpp"
#include "ctd/term_structure.hpp"

// CTD discount-factor estimators built on the per-time moments of the
// common-factor maximum M~(t_k):
//
//   CF1  = exp(-sum_k E[M~(t_k)] dt)
//   CF2  = CF1 (1 + Var/2), with Var the diffusion estimate Psi or the
//          mean-reversion estimate chi of Var[int_0^T M(t) dt].

namespace ctd {

enum class VarianceMode { central, raw_second_moment };
enum class InnerVariable { s, t };

struct GroupSplit {
  std::vector<int> membership;  // 0 or 1 per spread
  double c_corr = 0.0;          // correlation of the two common factors

  bool operator==(const GroupSplit&) const = default;
};

struct EstimatorSelection {
  bool diffusion = true;       // Psi and CF2(1)
  bool mean_reversion = true;  // probabilities, chi and CF2(2)

  bool operator==(const EstimatorSelection&) const = default;
};

struct EstimatorSettings {
  ConvolutionSettings conv;
  VarianceMode variance_mode = VarianceMode::central;
  InnerVariable inner_variable = InnerVariable::s;
  EstimatorSelection select;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::optional<double> base_discount;
  std::optional<GroupSplit> groups;
};

struct TimePointMoments {
  double t = 0.0;
  double mean = 0.0;
  double raw_second = 0.0;
  double variance = 0.0;  // central
  std::vector<double> probs;
  double residual = 1.0;
  double cutoff = 0.0;
  std::size_t grid_points = 0;  // samples of H in [0, cutoff]
  double gamma = 0.0;
  bool gamma_clamped = false;
  bool domain_grown = false;
  bool analytic = false;  // deterministic maximum, no convolution

  double selected_variance(VarianceMode mode) const {
    return mode == VarianceMode::central ? variance : raw_second;
  }
};

struct MaxMomentSeries {
  std::vector<TimePointMoments> points;  // one per t_k, k = 0..R
  std::vector<std::string> warnings;
  bool has_probabilities = false;

  std::size_t size() const { return points.size(); }
};

// Runs the per-time pipeline at every grid point (in parallel over t_k).
MaxMomentSeries moment_series(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                              const EstimatorSettings& settings = {});

// Left sum of E[M~(t_k)] dt, the estimate of E[Y(T)].
double expectation_integral(const MaxMomentSeries& series, const TimeGrid& grid);

double cf1(const MaxMomentSeries& series, const TimeGrid& grid);

// Psi(T) = 2 dt^2 sum_{k<R} (R - k) W_k, W the running sum of clamped variance increments.
double diffusion_variance(const MaxMomentSeries& series, const TimeGrid& grid,
                          VarianceMode mode = VarianceMode::central);

// kappa~(t_k) = sum_i P[M~ = q~_i] kappa_i.
std::vector<double> weighted_kappa(const MaxMomentSeries& series, std::span<const double> kappas);

// chi(T) = 2 int_0^T exp(-K(t)) int_0^t exp(K(s)) V(s) ds dt with K' = kappa~, left sums throughout.
double mr_variance(const MaxMomentSeries& series, std::span<const double> kappa_tilde, const TimeGrid& grid,
                   VarianceMode mode = VarianceMode::central, InnerVariable inner = InnerVariable::s);

struct EstimateReport {
  double cf1 = 1.0;
  double psi = 0.0;
  double chi = 0.0;
  double cf2_diffusion = 1.0;
  double cf2_mr = 1.0;
  double expectation_integral = 0.0;
  VarianceMode variance_mode = VarianceMode::central;
  std::optional<double> base_discount;
  MaxMomentSeries series;
  std::vector<double> kappa_tilde;
  std::vector<std::string> warnings;

  // Estimates multiplied by base_discount when one is set.
  double discounted(double value) const { return base_discount ? value * *base_discount : value; }
};

// Largest uniform off-diagonal correlation for which the fitted gamma stays
// below 1 - eps_gamma at every t_k > 0 (capped at 1).
double admissible_correlation_bound(std::span<const SpreadParams> spreads, const TimeGrid& grid,
                                    double eps_gamma = 1e-10);

EstimateReport estimate(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                        const EstimatorSettings& settings = {});

}  // namespace ctd
