#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ctd/term_structure.hpp"

// Monte Carlo reference for the CTD integral Y(T) = int_0^T max(0, q_1, ..., q_N) dt
// (left sums on the time grid) using exact OU transitions, plus small
// Gauss-Legendre oracles for E[max(0, .)^m] of one or two normals.

namespace ctd {

struct McSettings {
  std::size_t n_paths = 1'000'000;
  std::uint64_t seed = 20240611;
  bool antithetic = false;
  std::size_t batch_size = 8192;  // paths (pairs when antithetic) per RNG stream
  std::size_t threads = 0;        // 0: hardware concurrency

  void validate() const;
};

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
};

// Streaming mean and central moments up to order four with pairwise merging.
class RunningMoments {
 public:
  void add(double x);
  void merge(const RunningMoments& o);

  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double std_error() const { return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }
  // Standard error of the sample variance from the fourth central moment.
  double variance_std_error() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0, m2_ = 0.0, m3_ = 0.0, m4_ = 0.0;
};

// Exact covariance of the one-step transition noise.
Eigen::MatrixXd simulate_step_cov(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, double dt);

McEstimate mc_discount_factor(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                              const McSettings& mc);

struct IntegralMoments {
  double horizon = 0.0;
  McEstimate mean;             // E[Y]
  McEstimate variance;         // Var[Y]
  McEstimate discount_factor;  // E[exp(-Y)]
};

IntegralMoments mc_integral_moments(std::span<const SpreadParams> spreads, const CorrelationSpec& corr,
                                    const TimeGrid& grid, const McSettings& mc);

// One simulation to the grid end, reporting Y at the listed step counts (each in 1..R).
std::vector<IntegralMoments> mc_integral_moments_at(std::span<const SpreadParams> spreads, const CorrelationSpec& corr,
                                                    const TimeGrid& grid, std::span<const std::size_t> checkpoints,
                                                    const McSettings& mc);

// Sample marginal statistics of q(t_k) and of max(0, q(t_k)) at every grid point.
struct MarginalSample {
  std::size_t n_paths = 0;
  std::vector<Eigen::VectorXd> mean;  // per t_k
  std::vector<Eigen::MatrixXd> cov;   // per t_k, unbiased
  std::vector<McEstimate> max_mean;   // E[max(0, q)]
  std::vector<McEstimate> max_second; // E[max(0, q)^2]
};

// Single-threaded, plain sampling (antithetic flag ignored).
MarginalSample mc_marginals(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                            const McSettings& mc);

// E[max(0, X_1, ..., X_N)^order], N in {1, 2}, X normal with correlation corr2,
// by Gauss-Legendre panels over +-8 standard deviations split at the kinks.
double quad_max_moments(std::span<const double> mus, std::span<const double> sigmas, double corr2, int order,
                        std::size_t nodes = 256);

}  // namespace ctd
