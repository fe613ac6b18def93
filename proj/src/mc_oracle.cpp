#include "ctd/mc_oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <boost/random/normal_distribution.hpp>
#include <fmt/format.h>

#include "ctd/errors.hpp"
#include "ctd/normal.hpp"
#include "ctd/quadrature.hpp"
#include "ctd/random.hpp"

namespace ctd {

void McSettings::validate() const {
  if (n_paths < 2) throw InputError("Monte Carlo needs at least two paths");
  if (antithetic && n_paths < 4) throw InputError("antithetic Monte Carlo needs at least four paths");
  if (batch_size == 0) throw InputError("Monte Carlo batch size must be positive");
}

void RunningMoments::add(double x) {
  const double n1 = static_cast<double>(n_);
  ++n_;
  const double n = static_cast<double>(n_);
  const double delta = x - mean_;
  const double dn = delta / n;
  const double dn2 = dn * dn;
  const double term1 = delta * dn * n1;
  mean_ += dn;
  m4_ += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2_ - 4.0 * dn * m3_;
  m3_ += term1 * dn * (n - 2.0) - 3.0 * dn * m2_;
  m2_ += term1;
}

void RunningMoments::merge(const RunningMoments& o) {
  if (o.n_ == 0) return;
  if (n_ == 0) {
    *this = o;
    return;
  }
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(o.n_);
  const double n = na + nb;
  const double d = o.mean_ - mean_;
  const double d2 = d * d;
  const double d3 = d2 * d;
  const double d4 = d2 * d2;
  const double m2 = m2_ + o.m2_ + d2 * na * nb / n;
  const double m3 = m3_ + o.m3_ + d3 * na * nb * (na - nb) / (n * n) + 3.0 * d * (na * o.m2_ - nb * m2_) / n;
  const double m4 = m4_ + o.m4_ + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
                    6.0 * d2 * (na * na * o.m2_ + nb * nb * m2_) / (n * n) + 4.0 * d * (na * o.m3_ - nb * m3_) / n;
  mean_ = (na * mean_ + nb * o.mean_) / n;
  m2_ = m2;
  m3_ = m3;
  m4_ = m4;
  n_ += o.n_;
}

double RunningMoments::variance_std_error() const {
  if (n_ < 4) return 0.0;
  const double n = static_cast<double>(n_);
  const double mu4 = m4_ / n;
  const double s2 = m2_ / n;
  return std::sqrt(std::max(0.0, (mu4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n));
}

Eigen::MatrixXd simulate_step_cov(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, double dt) {
  if (!(dt > 0.0)) throw InputError("simulate_step_cov: dt must be positive");
  const std::size_t n = spreads.size();
  if (corr.size() != n) throw InputError("simulate_step_cov: correlation size mismatch");
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd cov(m, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double ks = spreads[i].kappa + spreads[j].kappa;
      const double rho = i == j ? 1.0 : corr(i, j);
      cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          -rho * spreads[i].xi * spreads[j].xi * std::expm1(-ks * dt) / ks;
    }
  if (n > 1) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    const double scale = std::max(cov.diagonal().maxCoeff(), 1e-300);
    if (eig.eigenvalues().minCoeff() < -1e-10 * scale)
      throw InputError("step covariance is not positive semi-definite; inconsistent correlations");
  }
  return cov;
}

namespace {

// Square-root factor of a PSD matrix: Cholesky when positive definite, symmetric root otherwise.
Eigen::MatrixXd sqrt_factor(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

struct Simulator {
  std::size_t n = 0;
  std::size_t steps = 0;
  double dt = 0.0;
  std::vector<double> mean;  // steps x n, mu_i(t_k) for k < steps
  Eigen::VectorXd decay;
  Eigen::MatrixXd factor;

  Simulator(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid)
      : n(spreads.size()), steps(grid.steps()), dt(grid.dt()) {
    if (spreads.empty()) throw InputError("Monte Carlo needs at least one spread");
    for (const auto& s : spreads) s.validate(grid.maturity());
    mean.resize(steps * n);
    for (std::size_t k = 0; k < steps; ++k)
      for (std::size_t i = 0; i < n; ++i) mean[k * n + i] = spread_mean(spreads[i], grid[k]);
    decay.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) decay(static_cast<Eigen::Index>(i)) = std::exp(-spreads[i].kappa * dt);
    factor = sqrt_factor(simulate_step_cov(spreads, corr, dt));
  }

  // Y at each checkpoint along one path driven by `z` (steps x n normals), sign-flipped when `flip`.
  void path(const std::vector<double>& z, bool flip, std::span<const std::size_t> checkpoints, double* y_out) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    Eigen::VectorXd noise(static_cast<Eigen::Index>(n));
    double y = 0.0;
    std::size_t c = 0;
    const double sign = flip ? -1.0 : 1.0;
    for (std::size_t k = 0; k < steps; ++k) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, mean[k * n + i] + x(static_cast<Eigen::Index>(i)));
      y += m * dt;
      while (c < checkpoints.size() && checkpoints[c] == k + 1) y_out[c++] = y;
      if (k + 1 == steps) break;
      const Eigen::Map<const Eigen::VectorXd> zk(z.data() + k * n, static_cast<Eigen::Index>(n));
      noise.noalias() = factor * zk;
      x = decay.cwiseProduct(x) + sign * noise;
    }
  }
};

struct CheckpointAccumulator {
  RunningMoments y_unit;  // per path, or per antithetic pair average
  RunningMoments df_unit;
  RunningMoments y_all;   // individual paths, for the variance

  void merge(const CheckpointAccumulator& o) {
    y_unit.merge(o.y_unit);
    df_unit.merge(o.df_unit);
    y_all.merge(o.y_all);
  }
};

std::size_t worker_count(std::size_t requested, std::size_t batches) {
  std::size_t w = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(w, batches));
}

template <class Job>
void run_batches(std::size_t batches, std::size_t threads, Job job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= batches) return;
      try {
        job(b);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(batches);
        return;
      }
    }
  };
  const std::size_t workers = worker_count(threads, batches);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
}

std::vector<IntegralMoments> simulate(std::span<const SpreadParams> spreads, const CorrelationSpec& corr,
                                      const TimeGrid& grid, std::span<const std::size_t> checkpoints,
                                      const McSettings& mc) {
  mc.validate();
  if (corr.size() != spreads.size()) throw InputError("correlation size does not match the spreads");
  if (checkpoints.empty()) throw InputError("need at least one checkpoint");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] == 0 || checkpoints[i] > grid.steps()) throw InputError("checkpoint outside 1..R");
    if (i > 0 && checkpoints[i] <= checkpoints[i - 1]) throw InputError("checkpoints must be strictly increasing");
  }
  const Simulator sim(spreads, corr, grid);
  const std::size_t units = mc.antithetic ? mc.n_paths / 2 : mc.n_paths;
  const std::size_t batches = (units + mc.batch_size - 1) / mc.batch_size;
  const std::size_t nc = checkpoints.size();
  std::vector<std::vector<CheckpointAccumulator>> partial(batches, std::vector<CheckpointAccumulator>(nc));

  run_batches(batches, mc.threads, [&](std::size_t b) {
    Philox4x64 rng(mc.seed, b);
    boost::random::normal_distribution<double> normal;
    const std::size_t begin = b * mc.batch_size;
    const std::size_t end = std::min(units, begin + mc.batch_size);
    std::vector<double> z(sim.steps * sim.n);
    std::vector<double> y_plus(nc), y_minus(nc);
    auto& acc = partial[b];
    for (std::size_t u = begin; u < end; ++u) {
      for (double& v : z) v = normal(rng);
      sim.path(z, false, checkpoints, y_plus.data());
      if (mc.antithetic) {
        sim.path(z, true, checkpoints, y_minus.data());
        for (std::size_t c = 0; c < nc; ++c) {
          acc[c].y_unit.add(0.5 * (y_plus[c] + y_minus[c]));
          acc[c].df_unit.add(0.5 * (std::exp(-y_plus[c]) + std::exp(-y_minus[c])));
          acc[c].y_all.add(y_plus[c]);
          acc[c].y_all.add(y_minus[c]);
        }
      } else {
        for (std::size_t c = 0; c < nc; ++c) {
          acc[c].y_unit.add(y_plus[c]);
          acc[c].df_unit.add(std::exp(-y_plus[c]));
          acc[c].y_all.add(y_plus[c]);
        }
      }
    }
  });

  std::vector<CheckpointAccumulator> total(nc);
  for (const auto& part : partial)
    for (std::size_t c = 0; c < nc; ++c) total[c].merge(part[c]);

  const std::size_t paths = mc.antithetic ? 2 * units : units;
  std::vector<IntegralMoments> out(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    out[c].horizon = grid[checkpoints[c]];
    out[c].mean = {total[c].y_unit.mean(), total[c].y_unit.std_error(), paths};
    out[c].discount_factor = {total[c].df_unit.mean(), total[c].df_unit.std_error(), paths};
    // Antithetic paths are not independent; the pair count gives a conservative error for the variance.
    double var_se = total[c].y_all.variance_std_error();
    if (mc.antithetic) var_se *= std::sqrt(2.0);
    out[c].variance = {total[c].y_all.variance(), var_se, paths};
  }
  return out;
}

}  // namespace

McEstimate mc_discount_factor(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                              const McSettings& mc) {
  return mc_integral_moments(spreads, corr, grid, mc).discount_factor;
}

IntegralMoments mc_integral_moments(std::span<const SpreadParams> spreads, const CorrelationSpec& corr,
                                    const TimeGrid& grid, const McSettings& mc) {
  const std::size_t last = grid.steps();
  return simulate(spreads, corr, grid, std::span<const std::size_t>(&last, 1), mc).front();
}

std::vector<IntegralMoments> mc_integral_moments_at(std::span<const SpreadParams> spreads, const CorrelationSpec& corr,
                                                    const TimeGrid& grid, std::span<const std::size_t> checkpoints,
                                                    const McSettings& mc) {
  return simulate(spreads, corr, grid, checkpoints, mc);
}

MarginalSample mc_marginals(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                            const McSettings& mc) {
  mc.validate();
  if (corr.size() != spreads.size()) throw InputError("correlation size does not match the spreads");
  const std::size_t n = spreads.size();
  const auto m = static_cast<Eigen::Index>(n);
  const std::size_t points = grid.size();
  std::vector<Eigen::VectorXd> mu(points, Eigen::VectorXd(m));
  for (std::size_t k = 0; k < points; ++k)
    for (std::size_t i = 0; i < n; ++i) mu[k](static_cast<Eigen::Index>(i)) = spread_mean(spreads[i], grid[k]);
  Eigen::VectorXd decay(m);
  for (std::size_t i = 0; i < n; ++i) decay(static_cast<Eigen::Index>(i)) = std::exp(-spreads[i].kappa * grid.dt());
  const Eigen::MatrixXd factor = sqrt_factor(simulate_step_cov(spreads, corr, grid.dt()));

  std::vector<Eigen::VectorXd> sx(points, Eigen::VectorXd::Zero(m));
  std::vector<Eigen::MatrixXd> sxx(points, Eigen::MatrixXd::Zero(m, m));
  std::vector<RunningMoments> mx(points), mx2(points);
  const std::size_t batches = (mc.n_paths + mc.batch_size - 1) / mc.batch_size;
  Eigen::VectorXd x(m), z(m);
  boost::random::normal_distribution<double> normal;
  for (std::size_t b = 0; b < batches; ++b) {
    Philox4x64 rng(mc.seed, b);
    const std::size_t end = std::min(mc.n_paths, (b + 1) * mc.batch_size);
    for (std::size_t p = b * mc.batch_size; p < end; ++p) {
      x.setZero();
      for (std::size_t k = 0; k < points; ++k) {
        if (k > 0) {
          for (Eigen::Index i = 0; i < m; ++i) z(i) = normal(rng);
          x = decay.cwiseProduct(x) + factor * z;
        }
        sx[k] += x;
        sxx[k].noalias() += x * x.transpose();
        const double top = std::max(0.0, (mu[k] + x).maxCoeff());
        mx[k].add(top);
        mx2[k].add(top * top);
      }
    }
  }

  MarginalSample out;
  out.n_paths = mc.n_paths;
  const double cnt = static_cast<double>(mc.n_paths);
  for (std::size_t k = 0; k < points; ++k) {
    const Eigen::VectorXd xbar = sx[k] / cnt;
    out.mean.push_back(mu[k] + xbar);
    out.cov.push_back((sxx[k] - cnt * xbar * xbar.transpose()) / (cnt - 1.0));
    out.max_mean.push_back({mx[k].mean(), mx[k].std_error(), mc.n_paths});
    out.max_second.push_back({mx2[k].mean(), mx2[k].std_error(), mc.n_paths});
  }
  return out;
}

namespace {

// Gauss-Legendre over [a, b] split at the interior break points.
template <class F>
double panels(F f, double a, double b, std::vector<double> breaks, std::size_t nodes) {
  breaks.push_back(a);
  breaks.push_back(b);
  std::sort(breaks.begin(), breaks.end());
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double lo = std::max(a, breaks[i]);
    const double hi = std::min(b, breaks[i + 1]);
    if (!(hi > lo)) continue;
    const quad::Rule r = quad::gauss_legendre(nodes, lo, hi);
    for (std::size_t k = 0; k < nodes; ++k) acc += r.weights[k] * f(r.nodes[k]);
  }
  return acc;
}

}  // namespace

double quad_max_moments(std::span<const double> mus, std::span<const double> sigmas, double corr2, int order,
                        std::size_t nodes) {
  if (mus.size() != sigmas.size() || mus.empty()) throw InputError("quad_max_moments: size mismatch");
  if (mus.size() > 2) throw InputError("quad_max_moments: only one or two variables are supported");
  if (order != 1 && order != 2) throw InputError("quad_max_moments: order must be 1 or 2");
  if (!(std::abs(corr2) <= 1.0)) throw InputError("quad_max_moments: correlation outside [-1, 1]");
  for (double s : sigmas)
    if (!(s > 0.0)) throw InputError("quad_max_moments: sigmas must be positive");
  constexpr double w = 8.0;
  auto power = [order](double v) { return order == 1 ? v : v * v; };

  if (mus.size() == 1) {
    const double kink = -mus[0] / sigmas[0];
    return panels([&](double z) { return power(std::max(0.0, mus[0] + sigmas[0] * z)) * norm_pdf(z); }, -w, w,
                  {kink}, nodes);
  }
  const double orth = std::sqrt(std::max(0.0, 1.0 - corr2 * corr2));
  auto inner = [&](double z1) {
    const double a = std::max(0.0, mus[0] + sigmas[0] * z1);
    const double b = mus[1] + sigmas[1] * corr2 * z1;
    const double c = sigmas[1] * orth;
    if (c == 0.0) return power(std::max(a, b));
    const double kink = (a - b) / c;
    return panels([&](double z2) { return power(std::max(a, b + c * z2)) * norm_pdf(z2); }, -w, w, {kink}, nodes);
  };
  return panels([&](double z1) { return inner(z1) * norm_pdf(z1); }, -w, w, {-mus[0] / sigmas[0]}, nodes);
}

}  // namespace ctd
