#include "ctd/common_factor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>

#include "ctd/errors.hpp"
#include "ctd/fft_convolution.hpp"
#include "ctd/normal.hpp"
#include "ctd/quadrature.hpp"

namespace ctd {

namespace {

constexpr double kSymmetryTol = 1e-12;
constexpr std::size_t kMaxGridPoints = 50'000'000;
constexpr std::size_t kMaxQuadIntervals = 4'000'000;

void check_target(const Eigen::MatrixXd& target, std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n);
  if (target.rows() != m || target.cols() != m)
    throw InputError(fmt::format("target correlation must be {0}x{0}", n));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j)
      if (std::abs(target(i, j) - target(j, i)) > kSymmetryTol)
        throw InputError(fmt::format("target correlation is not symmetric at ({},{})", i, j));
}

double min_sigma_sq(std::span<const double> sigmas) {
  double s = std::numeric_limits<double>::infinity();
  for (double v : sigmas) s = std::min(s, v * v);
  return s;
}

// Brent minimisation of f on [lo, hi] at full working precision.
template <class F>
double brent_min(F f, double lo, double hi) {
  if (!(hi > lo)) return lo;
  boost::uintmax_t iters = 200;
  const auto r = boost::math::tools::brent_find_minima(f, lo, hi, std::numeric_limits<double>::digits / 2, iters);
  // Boundary minima: Brent never evaluates the end points exactly.
  double best = r.first;
  double fbest = r.second;
  for (double x : {lo, hi}) {
    const double fx = f(x);
    if (fx < fbest) {
      best = x;
      fbest = fx;
    }
  }
  return best;
}

double component_sd(const FactorDecomposition& dec, std::size_t i) { return std::sqrt(dec.components[i].a_variance); }

// P[C >= -a] for C ~ N(0, c_var), with the zero-variance case breaking ties toward the zero component.
double factor_survival(double a, double c_var) {
  if (c_var <= 0.0) return a > 0.0 ? 1.0 : 0.0;
  return norm_cdf(a / std::sqrt(c_var));
}

// Tie-aware CDF of component j evaluated at the location of component i:
// among equal-valued constants the lower index wins.
double rival_cdf(const FactorComponent& cj, std::size_t j, std::size_t i, double x) {
  if (cj.a_variance > 0.0) return norm_cdf((x - cj.a_mean) / std::sqrt(cj.a_variance));
  if (j < i) return cj.a_mean < x ? 1.0 : 0.0;
  return cj.a_mean <= x ? 1.0 : 0.0;
}

std::size_t simpson_intervals(double width, double step) {
  const double n = std::ceil(width / step);
  if (!(n < static_cast<double>(kMaxQuadIntervals))) return kMaxQuadIntervals;
  return std::max<std::size_t>(2, static_cast<std::size_t>(n));
}

// Finest grid step needed to resolve the narrowest positive standard deviation.
double resolving_step(double delta, std::span<const double> sds) {
  double step = delta;
  for (double sd : sds)
    if (sd > 0.0) step = std::min(step, sd / 16.0);
  return step;
}

}  // namespace

void ConvolutionSettings::validate() const {
  if (!(delta > 0.0)) throw InputError("convolution delta must be positive");
  if (!(eps_tail > 0.0 && eps_tail < 0.5)) throw InputError("eps_tail must lie in (0, 0.5)");
  if (!(eps_gamma > 0.0 && eps_gamma < 1.0)) throw InputError("eps_gamma must lie in (0, 1)");
  if (!(tau_cdf >= 0.0) || !(tau_prob >= 0.0) || !(tau_var >= 0.0)) throw InputError("tolerances must be non-negative");
  if (!(quad_width > 0.0)) throw InputError("quadrature width must be positive");
  if (hermite_nodes == 0) throw InputError("hermite_nodes must be positive");
}

double gamma_objective(std::span<const double> sigmas, const Eigen::MatrixXd& target_corr, double gamma) {
  const std::size_t n = sigmas.size();
  const double smin = min_sigma_sq(sigmas);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double model = smin * std::abs(gamma) / (sigmas[i] * sigmas[j]);
      const double d = model - target_corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

GammaFit optimize_gamma(std::span<const double> sigmas, const Eigen::MatrixXd& target_corr, double eps_gamma) {
  const std::size_t n = sigmas.size();
  if (n == 0) throw InputError("optimize_gamma: need at least one component");
  for (double s : sigmas)
    if (!(s > 0.0) || !std::isfinite(s)) throw InputError("optimize_gamma: sigmas must be strictly positive");
  if (!(eps_gamma > 0.0 && eps_gamma < 1.0)) throw InputError("optimize_gamma: eps_gamma must lie in (0, 1)");
  check_target(target_corr, n);

  GammaFit fit;
  if (n == 1) return fit;
  const double upper = 1.0 - eps_gamma;
  const double smin = min_sigma_sq(sigmas);

  // Least-squares minimiser over the real line; the objective is quadratic in gamma.
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double a = smin / (sigmas[i] * sigmas[j]);
      num += a * target_corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      den += a * a;
    }
  fit.unconstrained = num / den;

  if (n == 2) {
    const double hi = std::max(sigmas[0], sigmas[1]);
    const double lo = std::min(sigmas[0], sigmas[1]);
    fit.unconstrained = target_corr(0, 1) * hi / lo;
    fit.gamma = std::clamp(fit.unconstrained, 0.0, upper);
  } else {
    fit.gamma = brent_min([&](double g) { return gamma_objective(sigmas, target_corr, g); }, 0.0, upper);
  }
  fit.clamped = fit.unconstrained > upper || fit.unconstrained < 0.0;
  return fit;
}

FactorDecomposition decompose(std::span<const double> mus, std::span<const double> sigmas, double gamma) {
  if (mus.size() != sigmas.size() || mus.empty())
    throw InputError("decompose: means and sigmas must be non-empty and of equal length");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError(fmt::format("decompose: gamma {} outside [0, 1)", gamma));
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] >= 0.0) || !std::isfinite(sigmas[i]))
      throw InputError(fmt::format("decompose: sigma {} must be finite and non-negative", i));
    if (!std::isfinite(mus[i])) throw InputError(fmt::format("decompose: mean {} is not finite", i));
  }
  FactorDecomposition dec;
  dec.gamma = gamma;
  dec.sigma_min_sq = min_sigma_sq(sigmas);
  dec.c_variance = dec.sigma_min_sq * std::abs(gamma);
  dec.components.reserve(mus.size());
  for (std::size_t i = 0; i < mus.size(); ++i)
    dec.components.push_back({mus[i], std::max(0.0, sigmas[i] * sigmas[i] - dec.c_variance)});
  return dec;
}

double independent_max_cdf(const FactorDecomposition& dec, double x) {
  double p = 1.0;
  for (const auto& c : dec.components) {
    p *= normal_cdf(x, c.a_mean, c.a_variance);
    if (p == 0.0) break;
  }
  return p;
}

GridFunction::GridFunction(double x_lo, double delta, std::vector<double> values)
    : x_lo_(x_lo), delta_(delta), values_(std::move(values)) {
  if (!(delta > 0.0)) throw InputError("grid step must be positive");
  if (values_.empty()) throw InputError("grid function needs at least one sample");
}

double GridFunction::at(double xv) const {
  const double u = (xv - x_lo_) / delta_;
  if (u <= 0.0) return values_.front();
  const double last = static_cast<double>(values_.size() - 1);
  if (u >= last) return values_.back();
  const auto i = static_cast<std::size_t>(u);
  const double w = u - static_cast<double>(i);
  return (1.0 - w) * values_[i] + w * values_[i + 1];
}

namespace {

// Clamps to [0, 1] and removes monotonicity violations up to tau; larger ones are errors.
void sanitize_cdf(std::vector<double>& h, double tau) {
  double running = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    double v = std::clamp(h[i], 0.0, 1.0);
    if (v < running) {
      if (running - v > tau)
        throw ConsistencyError(fmt::format("sampled CDF decreases by {:.3e} at grid index {}", running - v, i));
      v = running;
    }
    h[i] = running = v;
  }
}

}  // namespace

GridFunction shifted_max_cdf(const FactorDecomposition& dec, const GridSpec& grid, const ConvolutionSettings& s) {
  if (!(grid.delta > 0.0)) throw InputError("shifted_max_cdf: grid step must be positive");
  if (grid.intervals + 1 > kMaxGridPoints) throw DomainError("shifted_max_cdf: grid too large");
  const std::size_t n = grid.intervals + 1;
  const double d = grid.delta;
  std::vector<double> h(n);

  if (dec.c_variance <= 0.0) {
    for (std::size_t i = 0; i < n; ++i) h[i] = independent_max_cdf(dec, grid.x_lo + static_cast<double>(i) * d);
    sanitize_cdf(h, s.tau_cdf);
    return GridFunction(grid.x_lo, d, std::move(h));
  }

  const double sd_c = std::sqrt(dec.c_variance);
  const auto half = static_cast<std::size_t>(std::ceil(s.quad_width * sd_c / d));
  if (2 * half + n > kMaxGridPoints) throw DomainError("shifted_max_cdf: common-factor kernel too wide for the grid step");

  // Density weights of C, normalised to unit mass on the sampled support.
  std::vector<double> f(2 * half + 1);
  double mass = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double z = (static_cast<double>(j) - static_cast<double>(half)) * d / sd_c;
    f[j] = norm_pdf(z);
    mass += f[j];
  }
  for (double& v : f) v /= mass;

  std::vector<double> fa(n + 2 * half);
  for (std::size_t m = 0; m < fa.size(); ++m)
    fa[m] = independent_max_cdf(dec, grid.x_lo + (static_cast<double>(m) - static_cast<double>(half)) * d);

  const std::vector<double> conv = linear_convolution(f, fa);
  for (std::size_t i = 0; i < n; ++i) h[i] = conv[i + 2 * half];
  sanitize_cdf(h, s.tau_cdf);
  return GridFunction(grid.x_lo, d, std::move(h));
}

namespace {

void check_moment_domain(const GridFunction& cdf, double eps_tail) {
  if (std::abs(cdf.x_lo()) > 1e-14) throw InputError("moment integrals need a CDF grid starting at x = 0");
  if (!(1.0 - cdf.values().back() < eps_tail))
    throw DomainError(fmt::format("insufficient domain: 1 - H(L) = {:.3e} at L = {} exceeds eps_tail {:.1e}",
                                  1.0 - cdf.values().back(), cdf.x_hi(), eps_tail));
}

template <class G>
double integrate_tail(const GridFunction& cdf, MomentRule rule, G weight) {
  const std::size_t n = cdf.size();
  if (n < 2) return 0.0;
  double acc = 0.0;
  if (rule == MomentRule::trapezoid) {
    acc = 0.5 * (weight(cdf.x(0)) * (1.0 - cdf[0]) + weight(cdf.x(n - 1)) * (1.0 - cdf[n - 1]));
    for (std::size_t i = 1; i + 1 < n; ++i) acc += weight(cdf.x(i)) * (1.0 - cdf[i]);
  } else {
    for (std::size_t i = 0; i + 1 < n; ++i) acc += weight(cdf.x(i)) * (1.0 - cdf[i]);
  }
  return acc * cdf.delta();
}

}  // namespace

double max_expectation(const GridFunction& cdf, double eps_tail, MomentRule rule) {
  check_moment_domain(cdf, eps_tail);
  return integrate_tail(cdf, rule, [](double) { return 1.0; });
}

double max_raw_second_moment(const GridFunction& cdf, double eps_tail, MomentRule rule) {
  check_moment_domain(cdf, eps_tail);
  return integrate_tail(cdf, rule, [](double x) { return 2.0 * x; });
}

double max_variance(double mean, double raw_second, double tau_var) {
  const double v = raw_second - mean * mean;
  if (v < -tau_var)
    throw ConsistencyError(fmt::format("negative central variance {:.3e} (raw {:.6e}, mean {:.6e})", v, raw_second, mean));
  return std::max(0.0, v);
}

MaxProbabilities max_probabilities(const FactorDecomposition& dec, const ConvolutionSettings& s) {
  const std::size_t n = dec.size();
  if (n == 0) throw InputError("max_probabilities: empty decomposition");
  double mu_lo = std::numeric_limits<double>::infinity();
  double mu_hi = -mu_lo;
  double sd_max = 0.0;
  std::vector<double> sds(n);
  for (std::size_t i = 0; i < n; ++i) {
    mu_lo = std::min(mu_lo, dec.components[i].a_mean);
    mu_hi = std::max(mu_hi, dec.components[i].a_mean);
    sds[i] = component_sd(dec, i);
    sd_max = std::max(sd_max, std::sqrt(dec.total_variance(i)));
  }
  const double full_lo = mu_lo - s.quad_width * sd_max;
  const double hi = mu_hi + s.quad_width * sd_max;
  // Without a common factor the event {max = q_i} needs A_i > 0.
  const double lo = dec.c_variance > 0.0 ? full_lo : std::max(full_lo, 0.0);
  const double step = resolving_step(s.delta, sds);

  MaxProbabilities out;
  out.probs.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const FactorComponent& ci = dec.components[i];
    if (ci.a_variance <= 0.0) {
      double p = factor_survival(ci.a_mean, dec.c_variance);
      for (std::size_t j = 0; j < n && p > 0.0; ++j)
        if (j != i) p *= rival_cdf(dec.components[j], j, i, ci.a_mean);
      out.probs[i] = p;
      continue;
    }
    const double sd = sds[i];
    const double deficiency = 1.0 - (norm_cdf((hi - ci.a_mean) / sd) - norm_cdf((full_lo - ci.a_mean) / sd));
    if (deficiency > s.tau_prob)
      throw DomainError(fmt::format("max_probabilities: quadrature domain misses {:.3e} of component {} mass",
                                    deficiency, i));
    if (!(hi > lo)) continue;
    // Panels end at the jumps of constant rivals (and at 0 when Var C = 0);
    // the step factors take their limits from inside the panel.
    double panel_lo = lo, panel_hi = hi;
    auto integrand = [&](double x) {
      const double xr = std::clamp(x, std::nextafter(panel_lo, panel_hi), std::nextafter(panel_hi, panel_lo));
      double v = normal_pdf(x, ci.a_mean, ci.a_variance) * factor_survival(xr, dec.c_variance);
      for (std::size_t j = 0; j < n && v != 0.0; ++j)
        if (j != i) v *= rival_cdf(dec.components[j], j, i, xr);
      return v;
    };
    std::vector<double> cuts{lo, hi};
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && dec.components[j].a_variance <= 0.0 && dec.components[j].a_mean > lo && dec.components[j].a_mean < hi)
        cuts.push_back(dec.components[j].a_mean);
    std::sort(cuts.begin(), cuts.end());
    double p = 0.0;
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      panel_lo = cuts[c];
      panel_hi = cuts[c + 1];
      const double width = cuts[c + 1] - cuts[c];
      if (width > 0.0) p += quad::simpson(integrand, cuts[c], cuts[c + 1], simpson_intervals(width, step));
    }
    out.probs[i] = std::clamp(p, 0.0, 1.0);
  }
  double total = 0.0;
  for (double p : out.probs) total += p;
  out.residual = 1.0 - total;
  return out;
}

double analytic_tail_bound(std::span<const double> means, std::span<const double> sds, double eps_tail) {
  if (means.empty() || means.size() != sds.size()) throw InputError("analytic_tail_bound: size mismatch");
  if (!(eps_tail > 0.0 && eps_tail < 0.5)) throw InputError("eps_tail must lie in (0, 0.5)");
  double mu = -std::numeric_limits<double>::infinity();
  double sd = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    mu = std::max(mu, means[i]);
    sd = std::max(sd, sds[i]);
  }
  const double z = -norm_quantile(eps_tail / static_cast<double>(means.size()));
  return std::max(0.0, mu + z * sd);
}

CdfOnSupport cdf_on_support(const CdfSampler& sampler, double analytic_bound, double delta, double eps_tail) {
  if (!(delta > 0.0)) throw InputError("cdf_on_support: delta must be positive");
  if (!(analytic_bound >= 0.0) || !std::isfinite(analytic_bound))
    throw InputError("cdf_on_support: bound must be finite and non-negative");
  double nd = std::ceil(analytic_bound / delta - 1e-9);
  if (nd > static_cast<double>(kMaxGridPoints)) throw DomainError("cdf_on_support: tail bound needs too many grid points");
  auto intervals = std::max<std::size_t>(1, static_cast<std::size_t>(nd));

  CdfOnSupport out;
  for (int attempt = 0; attempt < 24; ++attempt) {
    GridFunction h = sampler(GridSpec{0.0, delta, intervals});
    const auto& v = h.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (1.0 - v[i] < eps_tail) {
        out.cdf = GridFunction(0.0, delta, std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(i + 1)));
        out.cutoff = static_cast<double>(i) * delta;
        return out;
      }
    }
    out.domain_grown = true;
    if (2 * intervals > kMaxGridPoints) break;
    intervals *= 2;
  }
  throw DomainError("cdf_on_support: tail threshold not reached after growing the domain");
}

CdfOnSupport max_cdf_on_support(const FactorDecomposition& dec, const ConvolutionSettings& s) {
  const std::size_t n = dec.size();
  std::vector<double> means(n), sds(n);
  for (std::size_t i = 0; i < n; ++i) {
    means[i] = dec.components[i].a_mean;
    sds[i] = std::sqrt(dec.total_variance(i));
  }
  const double bound = analytic_tail_bound(means, sds, s.eps_tail);
  return cdf_on_support([&](const GridSpec& g) { return shifted_max_cdf(dec, g, s); }, bound, s.delta, s.eps_tail);
}

double tail_cutoff(const FactorDecomposition& dec, double eps_tail, const ConvolutionSettings& settings) {
  ConvolutionSettings s = settings;
  s.eps_tail = eps_tail;
  return max_cdf_on_support(dec, s).cutoff;
}

TwoGroupFactors fit_two_group(std::span<const double> mus, std::span<const double> sigmas,
                              const Eigen::MatrixXd& target_corr, std::span<const int> membership, double c_corr,
                              double eps_gamma) {
  const std::size_t n = mus.size();
  if (sigmas.size() != n || membership.size() != n) throw InputError("fit_two_group: size mismatch");
  if (!(std::abs(c_corr) < 1.0)) throw InputError("fit_two_group: common-factor correlation must lie in (-1, 1)");
  check_target(target_corr, n);

  TwoGroupFactors out;
  out.c_corr = c_corr;
  for (std::size_t i = 0; i < n; ++i) {
    if (membership[i] != 0 && membership[i] != 1)
      throw InputError(fmt::format("fit_two_group: component {} has group {} (expected 0 or 1)", i, membership[i]));
    if (!(sigmas[i] >= 0.0)) throw InputError("fit_two_group: sigmas must be non-negative");
    out.members[membership[i]].push_back(i);
  }
  if (out.members[0].empty() || out.members[1].empty()) throw InputError("fit_two_group: both groups must be non-empty");

  double upper[2];
  for (int g = 0; g < 2; ++g) {
    double smin = std::numeric_limits<double>::infinity();
    for (std::size_t i : out.members[g]) smin = std::min(smin, sigmas[i] * sigmas[i]);
    upper[g] = smin * (1.0 - eps_gamma);
  }

  auto objective = [&](double v0, double v1) {
    const double v[2] = {v0, v1};
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double ss = sigmas[i] * sigmas[j];
        if (ss <= 0.0) continue;
        const int gi = membership[i];
        const int gj = membership[j];
        const double cov = gi == gj ? v[gi] : c_corr * std::sqrt(v0 * v1);
        const double d = cov / ss - target_corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        acc += d * d;
      }
    }
    return acc;
  };

  double v[2] = {0.5 * upper[0], 0.5 * upper[1]};
  for (int sweep = 0; sweep < 200; ++sweep) {
    const double prev0 = v[0];
    const double prev1 = v[1];
    v[0] = brent_min([&](double x) { return objective(x, v[1]); }, 0.0, upper[0]);
    v[1] = brent_min([&](double x) { return objective(v[0], x); }, 0.0, upper[1]);
    const double scale = std::max({upper[0], upper[1], 1e-300});
    if (std::abs(v[0] - prev0) + std::abs(v[1] - prev1) < 1e-12 * scale) break;
  }

  for (int g = 0; g < 2; ++g) {
    std::vector<double> gm, gs;
    for (std::size_t i : out.members[g]) {
      gm.push_back(mus[i]);
      gs.push_back(sigmas[i]);
    }
    const double smin = upper[g] / (1.0 - eps_gamma);
    const double gamma = smin > 0.0 ? std::min(v[g] / smin, 1.0 - eps_gamma) : 0.0;
    out.group[g] = decompose(gm, gs, gamma);
    if (upper[g] > 0.0 && v[g] >= upper[g] * (1.0 - 1e-9)) out.clamped = true;
  }
  return out;
}

namespace {

struct BivariateNodes {
  std::vector<double> x1, x2, w;
};

BivariateNodes bivariate_nodes(double v1, double v2, double c_corr, std::size_t nodes) {
  const quad::Rule gh = quad::gauss_hermite(nodes);
  const double s1 = std::sqrt(std::max(v1, 0.0));
  const double s2 = std::sqrt(std::max(v2, 0.0));
  const double orth = std::sqrt(1.0 - c_corr * c_corr);
  BivariateNodes b;
  for (std::size_t a = 0; a < nodes; ++a) {
    for (std::size_t c = 0; c < nodes; ++c) {
      b.x1.push_back(s1 * gh.nodes[a]);
      b.x2.push_back(s2 * (c_corr * gh.nodes[a] + orth * gh.nodes[c]));
      b.w.push_back(gh.weights[a] * gh.weights[c]);
    }
  }
  return b;
}

void check_groups(const FactorDecomposition& g1, const FactorDecomposition& g2, double c_corr) {
  if (g1.size() == 0 || g2.size() == 0) throw InputError("two-group CDF: both groups must be non-empty");
  if (!(std::abs(c_corr) < 1.0)) throw InputError("two-group CDF: common-factor correlation must lie in (-1, 1)");
}

double two_group_at(const FactorDecomposition& g1, const FactorDecomposition& g2, const BivariateNodes& b, double z) {
  if (z < 0.0) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < b.w.size(); ++k) {
    const double f1 = independent_max_cdf(g1, z - b.x1[k]);
    if (f1 == 0.0) continue;
    acc += b.w[k] * f1 * independent_max_cdf(g2, z - b.x2[k]);
  }
  return std::clamp(acc, 0.0, 1.0);
}

}  // namespace

double two_group_max_cdf(const FactorDecomposition& g1, const FactorDecomposition& g2, double c_corr, double z,
                         std::size_t hermite_nodes) {
  check_groups(g1, g2, c_corr);
  return two_group_at(g1, g2, bivariate_nodes(g1.c_variance, g2.c_variance, c_corr, hermite_nodes), z);
}

GridFunction two_group_shifted_max_cdf(const FactorDecomposition& g1, const FactorDecomposition& g2, double c_corr,
                                       const GridSpec& grid, std::size_t hermite_nodes) {
  check_groups(g1, g2, c_corr);
  if (!(grid.delta > 0.0)) throw InputError("two_group_shifted_max_cdf: grid step must be positive");
  const BivariateNodes b = bivariate_nodes(g1.c_variance, g2.c_variance, c_corr, hermite_nodes);
  std::vector<double> h(grid.intervals + 1);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = two_group_at(g1, g2, b, grid.x_lo + static_cast<double>(i) * grid.delta);
  sanitize_cdf(h, 1e-9);
  return GridFunction(grid.x_lo, grid.delta, std::move(h));
}

CdfOnSupport two_group_cdf_on_support(const TwoGroupFactors& f, const ConvolutionSettings& s) {
  std::vector<double> means, sds;
  for (const auto& g : f.group)
    for (std::size_t i = 0; i < g.size(); ++i) {
      means.push_back(g.components[i].a_mean);
      sds.push_back(std::sqrt(g.total_variance(i)));
    }
  const double bound = analytic_tail_bound(means, sds, s.eps_tail);
  return cdf_on_support(
      [&](const GridSpec& g) { return two_group_shifted_max_cdf(f.group[0], f.group[1], f.c_corr, g, s.hermite_nodes); },
      bound, s.delta, s.eps_tail);
}

MaxProbabilities two_group_max_probabilities(const TwoGroupFactors& f, const ConvolutionSettings& s) {
  check_groups(f.group[0], f.group[1], f.c_corr);
  const quad::Rule gh = quad::gauss_hermite(s.hermite_nodes);
  MaxProbabilities out;

  for (int g = 0; g < 2; ++g) {
    const FactorDecomposition& own = f.group[g];
    const FactorDecomposition& other = f.group[1 - g];
    // D = C_other - C_own; C_own | D = d ~ N(beta d, s2).
    const double v_own = own.c_variance;
    const double v_oth = other.c_variance;
    const double cov = f.c_corr * std::sqrt(v_own * v_oth);
    const double var_d = v_own + v_oth - 2.0 * cov;
    const double cov_own_d = cov - v_own;
    const bool d_degenerate = var_d <= 1e-300;
    const double beta = d_degenerate ? 0.0 : cov_own_d / var_d;
    const double s2 = d_degenerate ? v_own : std::max(0.0, v_own - cov_own_d * cov_own_d / var_d);
    const double sd_d = d_degenerate ? 0.0 : std::sqrt(var_d);

    // E_D[P(C_own >= -a | D) prod_other F(a - D)]
    auto conditional = [&](double a) {
      double acc = 0.0;
      for (std::size_t k = 0; k < gh.nodes.size(); ++k) {
        const double d = sd_d * gh.nodes[k];
        const double surv = factor_survival(a + beta * d, s2);
        if (surv == 0.0) continue;
        acc += gh.weights[k] * surv * independent_max_cdf(other, a - d);
      }
      return acc;
    };

    const std::size_t n = own.size();
    std::vector<double> sds(n);
    for (std::size_t i = 0; i < n; ++i) sds[i] = component_sd(own, i);
    const double step = resolving_step(s.delta, sds);
    for (std::size_t i = 0; i < n; ++i) {
      const FactorComponent& ci = own.components[i];
      auto rivals = [&](double a) {
        double p = 1.0;
        for (std::size_t j = 0; j < n && p > 0.0; ++j)
          if (j != i) p *= rival_cdf(own.components[j], j, i, a);
        return p;
      };
      if (ci.a_variance <= 0.0) {
        out.probs.push_back(rivals(ci.a_mean) * conditional(ci.a_mean));
        continue;
      }
      const double lo = ci.a_mean - s.quad_width * sds[i];
      const double hi = ci.a_mean + s.quad_width * sds[i];
      auto integrand = [&](double a) {
        const double r = normal_pdf(a, ci.a_mean, ci.a_variance) * rivals(a);
        return r == 0.0 ? 0.0 : r * conditional(a);
      };
      out.probs.push_back(std::clamp(quad::simpson(integrand, lo, hi, simpson_intervals(hi - lo, step)), 0.0, 1.0));
    }
  }
  double total = 0.0;
  for (double p : out.probs) total += p;
  out.residual = 1.0 - total;
  return out;
}

}  // namespace ctd
