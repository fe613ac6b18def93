#include "ctd/estimators.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "ctd/errors.hpp"

namespace ctd {

namespace {

// Deterministic maximum of constants; ties go to the zero component, then to the lowest index.
TimePointMoments deterministic_point(double t, std::span<const double> mus) {
  TimePointMoments p;
  p.t = t;
  p.analytic = true;
  p.probs.assign(mus.size(), 0.0);
  double best = 0.0;
  std::size_t arg = mus.size();
  for (std::size_t i = 0; i < mus.size(); ++i)
    if (mus[i] > best) {
      best = mus[i];
      arg = i;
    }
  p.mean = best;
  p.raw_second = best * best;
  p.variance = 0.0;
  if (arg < mus.size()) {
    p.probs[arg] = 1.0;
    p.residual = 0.0;
  }
  return p;
}

Eigen::MatrixXd target_correlation(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, double t) {
  const auto n = static_cast<Eigen::Index>(spreads.size());
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto ui = static_cast<std::size_t>(i);
      const auto uj = static_cast<std::size_t>(j);
      r(i, j) = r(j, i) = pair_correlation(spreads[ui], spreads[uj], corr(ui, uj), t);
    }
  return r;
}

struct PointContext {
  std::span<const SpreadParams> spreads;
  const CorrelationSpec& corr;
  const EstimatorSettings& settings;
};

TimePointMoments compute_point(const PointContext& ctx, double t) {
  const std::size_t n = ctx.spreads.size();
  std::vector<double> mus(n), sigmas(n);
  bool any_zero = false;
  bool all_zero = true;
  for (std::size_t i = 0; i < n; ++i) {
    mus[i] = spread_mean(ctx.spreads[i], t);
    sigmas[i] = std::sqrt(spread_variance(ctx.spreads[i], t));
    any_zero = any_zero || sigmas[i] == 0.0;
    all_zero = all_zero && sigmas[i] == 0.0;
  }
  if (t == 0.0 || all_zero) {
    TimePointMoments p = deterministic_point(t, mus);
    p.grid_points = 1;
    return p;
  }

  const ConvolutionSettings& conv = ctx.settings.conv;
  const bool want_probs = ctx.settings.select.mean_reversion;
  TimePointMoments p;
  p.t = t;
  CdfOnSupport support;

  if (ctx.settings.groups) {
    const GroupSplit& split = *ctx.settings.groups;
    const Eigen::MatrixXd target =
        any_zero ? Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))
                 : target_correlation(ctx.spreads, ctx.corr, t);
    const TwoGroupFactors f = fit_two_group(mus, sigmas, target, split.membership, split.c_corr, conv.eps_gamma);
    p.gamma_clamped = f.clamped;
    p.gamma = std::max(f.group[0].gamma, f.group[1].gamma);
    support = two_group_cdf_on_support(f, conv);
    if (want_probs) {
      const MaxProbabilities mp = two_group_max_probabilities(f, conv);
      p.probs.assign(n, 0.0);
      std::size_t k = 0;
      for (int g = 0; g < 2; ++g)
        for (std::size_t idx : f.members[g]) p.probs[idx] = mp.probs[k++];
      p.residual = mp.residual;
    }
  } else {
    double gamma = 0.0;
    if (!any_zero && n > 1) {
      const GammaFit fit = optimize_gamma(sigmas, target_correlation(ctx.spreads, ctx.corr, t), conv.eps_gamma);
      gamma = fit.gamma;
      p.gamma_clamped = fit.clamped;
    }
    p.gamma = gamma;
    const FactorDecomposition dec = decompose(mus, sigmas, gamma);
    support = max_cdf_on_support(dec, conv);
    if (want_probs) {
      const MaxProbabilities mp = max_probabilities(dec, conv);
      p.probs = mp.probs;
      p.residual = mp.residual;
    }
  }

  p.cutoff = support.cutoff;
  p.grid_points = support.cdf.size();
  p.domain_grown = support.domain_grown;
  // The second moment and the central variance always use the trapezoid rule;
  // `rule` only selects the quadrature of E[M~] (a left sum carries an O(delta) bias
  // that would swamp small variances).
  const double mean_trap = max_expectation(support.cdf, conv.eps_tail, MomentRule::trapezoid);
  p.mean = conv.rule == MomentRule::trapezoid ? mean_trap : max_expectation(support.cdf, conv.eps_tail, conv.rule);
  p.raw_second = max_raw_second_moment(support.cdf, conv.eps_tail, MomentRule::trapezoid);
  p.variance = max_variance(mean_trap, p.raw_second, conv.tau_var);
  return p;
}

void validate_inputs(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                     const EstimatorSettings& settings) {
  if (spreads.empty()) throw InputError("need at least one spread");
  if (corr.size() != spreads.size())
    throw InputError(fmt::format("correlation is {0}x{0} but there are {1} spreads", corr.size(), spreads.size()));
  for (const auto& s : spreads) s.validate(grid.maturity());
  settings.conv.validate();
  if (settings.groups) {
    if (settings.groups->membership.size() != spreads.size())
      throw InputError("group membership must list one group per spread");
    if (!(std::abs(settings.groups->c_corr) < 1.0))
      throw InputError("common-factor correlation must lie in (-1, 1)");
  } else {
    corr.require_base_model();
  }
  if (settings.base_discount && !(*settings.base_discount > 0.0)) throw InputError("base discount must be positive");
}

}  // namespace

MaxMomentSeries moment_series(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                              const EstimatorSettings& settings) {
  validate_inputs(spreads, corr, grid, settings);
  const std::size_t count = grid.size();
  MaxMomentSeries series;
  series.points.resize(count);
  series.has_probabilities = settings.select.mean_reversion;

  const PointContext ctx{spreads, corr, settings};
  std::size_t workers = settings.threads ? settings.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= count) return;
      try {
        series.points[k] = compute_point(ctx, grid[k]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  std::size_t clamped = 0;
  std::size_t grown = 0;
  double first_clamped = 0.0;
  for (const auto& p : series.points) {
    if (p.gamma_clamped && clamped++ == 0) first_clamped = p.t;
    if (p.domain_grown) ++grown;
  }
  if (clamped)
    series.warnings.push_back(fmt::format(
        "gamma clamped to 1 - eps_gamma at {} of {} time points (first at t = {}): target correlation not attainable",
        clamped, count, first_clamped));
  if (grown)
    series.warnings.push_back(
        fmt::format("tail domain grown beyond the analytic bound at {} of {} time points", grown, count));

  std::size_t decreasing = 0;
  for (std::size_t k = 1; k < count; ++k)
    if (series.points[k].selected_variance(settings.variance_mode) <
        series.points[k - 1].selected_variance(settings.variance_mode))
      ++decreasing;
  if (decreasing && settings.select.diffusion)
    series.warnings.push_back(
        fmt::format("variance of the maximum decreases at {} time steps; increments clamped to zero", decreasing));
  return series;
}

double expectation_integral(const MaxMomentSeries& series, const TimeGrid& grid) {
  if (series.size() != grid.size()) throw InputError("moment series does not cover the time grid");
  double acc = 0.0;
  for (std::size_t k = 0; k < grid.steps(); ++k) acc += series.points[k].mean;
  return acc * grid.dt();
}

double cf1(const MaxMomentSeries& series, const TimeGrid& grid) { return std::exp(-expectation_integral(series, grid)); }

double diffusion_variance(const MaxMomentSeries& series, const TimeGrid& grid, VarianceMode mode) {
  if (series.size() != grid.size()) throw InputError("moment series does not cover the time grid");
  const std::size_t r = grid.steps();
  double w = series.points[0].selected_variance(mode);
  double acc = 0.0;
  for (std::size_t k = 0; k < r; ++k) {
    if (k > 0)
      w += std::max(0.0, series.points[k].selected_variance(mode) - series.points[k - 1].selected_variance(mode));
    acc += static_cast<double>(r - k) * w;
  }
  return 2.0 * grid.dt() * grid.dt() * acc;
}

std::vector<double> weighted_kappa(const MaxMomentSeries& series, std::span<const double> kappas) {
  std::vector<double> out(series.size(), 0.0);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& probs = series.points[k].probs;
    if (probs.size() != kappas.size())
      throw InputError(fmt::format("time point {} carries {} probabilities for {} spreads", k, probs.size(), kappas.size()));
    for (std::size_t i = 0; i < kappas.size(); ++i) out[k] += probs[i] * kappas[i];
  }
  return out;
}

double mr_variance(const MaxMomentSeries& series, std::span<const double> kappa_tilde, const TimeGrid& grid,
                   VarianceMode mode, InnerVariable inner) {
  if (series.size() != grid.size() || kappa_tilde.size() != grid.size())
    throw InputError("series and weighted kappa must cover the time grid");
  const double dt = grid.dt();
  // running = sum_{m<=j} exp(K_m - K_j) g_m, updated by one damping factor per step.
  double running = 0.0;
  double acc = 0.0;
  for (std::size_t j = 0; j < grid.steps(); ++j) {
    if (j > 0) running *= std::exp(-kappa_tilde[j - 1] * dt);
    const double vj = series.points[j].selected_variance(mode);
    if (inner == InnerVariable::s) {
      running += vj;
      acc += running;
    } else {
      running += 1.0;
      acc += vj * running;
    }
  }
  return 2.0 * dt * dt * acc;
}

double admissible_correlation_bound(std::span<const SpreadParams> spreads, const TimeGrid& grid, double eps_gamma) {
  const std::size_t n = spreads.size();
  if (n < 2) return 1.0;
  const CorrelationSpec unit = CorrelationSpec::uniform(n, 1.0);
  double bound = 1.0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    std::vector<double> sigmas(n);
    for (std::size_t i = 0; i < n; ++i) sigmas[i] = std::sqrt(spread_variance(spreads[i], grid[k]));
    if (std::any_of(sigmas.begin(), sigmas.end(), [](double s) { return s == 0.0; })) continue;
    // The unconstrained gamma is linear in a uniform correlation scale.
    const double g1 = optimize_gamma(sigmas, target_correlation(spreads, unit, grid[k]), eps_gamma).unconstrained;
    if (g1 > 0.0) bound = std::min(bound, (1.0 - eps_gamma) / g1);
  }
  return bound;
}

EstimateReport estimate(std::span<const SpreadParams> spreads, const CorrelationSpec& corr, const TimeGrid& grid,
                        const EstimatorSettings& settings) {
  EstimateReport rep;
  rep.variance_mode = settings.variance_mode;
  rep.base_discount = settings.base_discount;
  rep.series = moment_series(spreads, corr, grid, settings);
  rep.warnings = rep.series.warnings;
  rep.expectation_integral = expectation_integral(rep.series, grid);
  rep.cf1 = std::exp(-rep.expectation_integral);
  if (settings.select.diffusion) rep.psi = diffusion_variance(rep.series, grid, settings.variance_mode);
  if (settings.select.mean_reversion) {
    std::vector<double> kappas;
    for (const auto& s : spreads) kappas.push_back(s.kappa);
    rep.kappa_tilde = weighted_kappa(rep.series, kappas);
    rep.chi = mr_variance(rep.series, rep.kappa_tilde, grid, settings.variance_mode, settings.inner_variable);
  }
  rep.cf2_diffusion = rep.cf1 * (1.0 + 0.5 * rep.psi);
  rep.cf2_mr = rep.cf1 * (1.0 + 0.5 * rep.chi);
  return rep;
}

}  // namespace ctd
