#include "ctd/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <boost/random/uniform_real_distribution.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "ctd/errors.hpp"
#include "ctd/random.hpp"

namespace ctd {

namespace {

std::string num(double v) { return format_number(v); }
std::string num(std::size_t v) { return std::to_string(v); }

std::vector<double> linspace(double lo, double hi, std::size_t steps) {
  if (steps < 2) return {lo};
  std::vector<double> v(steps);
  for (std::size_t i = 0; i < steps; ++i)
    v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
  v.back() = hi;
  return v;
}

std::vector<double> geomspace(double lo, double hi, std::size_t steps) {
  if (!(lo > 0.0 && hi > 0.0)) throw InputError("geometric axis needs a positive range");
  std::vector<double> v = linspace(std::log(lo), std::log(hi), steps);
  for (double& x : v) x = std::exp(x);
  v.front() = lo;
  if (steps >= 2) v.back() = hi;
  return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void append_warnings(CommandResult& r, const std::vector<std::string>& w, const std::string& prefix = {}) {
  for (const auto& s : w) r.warnings.push_back(prefix.empty() ? s : prefix + ": " + s);
}

double mean_of(const std::vector<SpreadParams>& s, double SpreadParams::*field) {
  double acc = 0.0;
  for (const auto& p : s) acc += p.*field;
  return acc / static_cast<double>(s.size());
}

}  // namespace

std::string format_number(double v) { return fmt::format("{:.17g}", v); }

RunConfig apply_overrides(RunConfig cfg, const CommandOptions& opt) {
  if (opt.maturity) cfg.maturity = *opt.maturity;
  if (opt.dt) cfg.dt = *opt.dt;
  if (opt.delta) cfg.estimator.conv.delta = *opt.delta;
  if (opt.paths) cfg.mc.n_paths = *opt.paths;
  if (opt.seed) cfg.mc.seed = *opt.seed;
  if (opt.variance_mode) cfg.estimator.variance_mode = *opt.variance_mode;
  try {
    (void)cfg.grid();
    for (const auto& s : cfg.spreads) s.validate(cfg.maturity);
    cfg.estimator.conv.validate();
    cfg.mc.validate();
  } catch (const InputError& e) {
    throw ConfigError("command line", e.what());
  }
  return cfg;
}

CommandResult cmd_price(const RunConfig& cfg, const CommandOptions& opt) {
  const TimeGrid grid = cfg.grid();
  const EstimateReport rep = estimate(cfg.spreads, cfg.corr, grid, cfg.estimator);
  CommandResult r;
  Table t{"price", {"metric", "value"}, {}};
  auto row = [&t](const std::string& k, double v) { t.rows.push_back({k, num(v)}); };
  row("cf1", rep.cf1);
  row("psi", rep.psi);
  row("chi", rep.chi);
  row("cf2_diffusion", rep.cf2_diffusion);
  row("cf2_mr", rep.cf2_mr);
  row("expectation_integral", rep.expectation_integral);
  if (rep.base_discount) {
    row("base_discount", *rep.base_discount);
    row("discounted_cf1", rep.discounted(rep.cf1));
    row("discounted_cf2_diffusion", rep.discounted(rep.cf2_diffusion));
    row("discounted_cf2_mr", rep.discounted(rep.cf2_mr));
  }
  r.tables.push_back(std::move(t));
  if (opt.diagnostics) {
    Table d{"diagnostics",
            {"t", "mean", "raw_second", "variance", "residual", "kappa_tilde", "cutoff", "grid_points", "gamma",
             "gamma_clamped"},
            {}};
    for (std::size_t k = 0; k < rep.series.size(); ++k) {
      const auto& p = rep.series.points[k];
      d.rows.push_back({num(p.t), num(p.mean), num(p.raw_second), num(p.variance), num(p.residual),
                        rep.kappa_tilde.empty() ? "" : num(rep.kappa_tilde[k]), num(p.cutoff), num(p.grid_points),
                        num(p.gamma), p.gamma_clamped ? "1" : "0"});
    }
    r.tables.push_back(std::move(d));
  }
  append_warnings(r, rep.warnings);
  r.metadata = {{"variance_mode", to_string(cfg.estimator.variance_mode)},
                {"rule", to_string(cfg.estimator.conv.rule)},
                {"inner_variable", to_string(cfg.estimator.inner_variable)}};
  return r;
}

CommandResult cmd_sweep(const RunConfig& cfg, const CommandOptions& opt) {
  const TimeGrid grid = cfg.grid();
  const std::string& axis = opt.axis;
  std::vector<double> values;
  CommandResult r;
  if (axis == "corr") {
    if (cfg.spreads.size() < 2) throw ConfigError("--axis", "a correlation sweep needs at least two spreads");
    const auto [lo, hi] = opt.range.value_or(std::pair{0.0, 0.75});
    values = linspace(lo, hi, opt.steps.value_or(16));
    const double bound = admissible_correlation_bound(cfg.spreads, grid, cfg.estimator.conv.eps_gamma);
    const auto kept = std::count_if(values.begin(), values.end(), [&](double v) { return v < bound; });
    if (static_cast<std::size_t>(kept) < values.size()) {
      r.warnings.push_back(fmt::format(
          "correlation axis truncated at the clamping boundary rho = {:.6f}; {} of {} points dropped", bound,
          values.size() - static_cast<std::size_t>(kept), values.size()));
      values.resize(static_cast<std::size_t>(kept));
    }
    r.metadata.emplace_back("correlation_boundary", num(bound));
  } else if (axis == "kappa") {
    const auto [lo, hi] = opt.range.value_or(std::pair{0.1, 10.0});
    values = geomspace(lo, hi, opt.steps.value_or(9));
  } else if (axis == "vol") {
    const auto [lo, hi] = opt.range.value_or(std::pair{1.0, 4.0});
    values = linspace(lo, hi, opt.steps.value_or(7));
  } else {
    throw ConfigError("--axis", fmt::format("unknown axis '{}' (corr|kappa|vol)", axis));
  }

  Table t{"sweep",
          {"axis_value", "scale", "cf1", "cf2_diffusion", "cf2_mr", "mc", "mc_std_error", "err_cf1",
           "err_cf2_diffusion", "err_cf2_mr"},
          {}};
  for (double v : values) {
    std::vector<SpreadParams> spreads = cfg.spreads;
    CorrelationSpec corr = cfg.corr;
    double axis_value = v;
    double scale = 1.0;
    if (axis == "corr") {
      corr = CorrelationSpec::uniform(spreads.size(), v);
    } else if (axis == "kappa") {
      for (auto& s : spreads) s.kappa *= v;
      axis_value = mean_of(spreads, &SpreadParams::kappa);
      scale = v;
    } else {
      for (auto& s : spreads) s.xi *= v;
      axis_value = mean_of(spreads, &SpreadParams::xi);
      scale = v;
    }
    const EstimateReport rep = estimate(spreads, corr, grid, cfg.estimator);
    const McEstimate mc = mc_discount_factor(spreads, corr, grid, cfg.mc);
    t.rows.push_back({num(axis_value), num(scale), num(rep.cf1), num(rep.cf2_diffusion), num(rep.cf2_mr),
                      num(mc.value), num(mc.std_error), num(std::abs(rep.cf1 - mc.value)),
                      num(std::abs(rep.cf2_diffusion - mc.value)), num(std::abs(rep.cf2_mr - mc.value))});
    append_warnings(r, rep.warnings, fmt::format("{} = {}", axis, num(axis_value)));
  }
  r.tables.push_back(std::move(t));
  r.metadata.emplace_back("axis", axis);
  r.metadata.emplace_back("paths", num(cfg.mc.n_paths));
  return r;
}

CommandResult cmd_table_moments(const RunConfig& cfg, const CommandOptions& opt) {
  const std::vector<double> deltas = opt.deltas.empty() ? std::vector<double>{5e-4, 5e-5, 5e-6} : opt.deltas;
  std::vector<double> mats = opt.maturities.empty() ? std::vector<double>{5.0, 10.0, 15.0, 20.0} : opt.maturities;
  std::sort(mats.begin(), mats.end());
  const double t_max = mats.back();
  for (const auto& s : cfg.spreads)
    if (s.theta.end() < t_max) throw ConfigError("--maturities", "theta curve does not cover the longest maturity");
  const TimeGrid full(t_max, cfg.dt);
  std::vector<std::size_t> checkpoints;
  for (double m : mats) {
    const TimeGrid g(m, cfg.dt);  // validates the multiple of dt
    checkpoints.push_back(g.steps());
  }
  checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()), checkpoints.end());
  const std::vector<IntegralMoments> mc = mc_integral_moments_at(cfg.spreads, cfg.corr, full, checkpoints, cfg.mc);

  CommandResult r;
  Table t{"table_moments",
          {"delta", "maturity", "grid_points", "expectation", "mc_mean", "mc_mean_std_error", "err_expectation",
           "psi_central", "psi_raw", "mc_var", "mc_var_std_error", "err_psi_central", "err_psi_raw"},
          {}};
  for (double delta : deltas) {
    EstimatorSettings es = cfg.estimator;
    es.conv.delta = delta;
    es.select = {true, false};
    const MaxMomentSeries series = moment_series(cfg.spreads, cfg.corr, full, es);
    append_warnings(r, series.warnings, fmt::format("delta = {}", num(delta)));
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      const TimeGrid g(mc[c].horizon, cfg.dt);
      MaxMomentSeries prefix;
      prefix.points.assign(series.points.begin(), series.points.begin() + static_cast<std::ptrdiff_t>(g.size()));
      const double e = expectation_integral(prefix, g);
      const double pc = diffusion_variance(prefix, g, VarianceMode::central);
      const double pr = diffusion_variance(prefix, g, VarianceMode::raw_second_moment);
      const auto& m = mc[c];
      t.rows.push_back({num(delta), num(m.horizon), num(prefix.points.back().grid_points), num(e), num(m.mean.value),
                        num(m.mean.std_error), num(std::abs(e - m.mean.value)), num(pc), num(pr),
                        num(m.variance.value), num(m.variance.std_error), num(std::abs(pc - m.variance.value)),
                        num(std::abs(pr - m.variance.value))});
    }
  }
  r.tables.push_back(std::move(t));
  r.metadata = {{"rule", to_string(cfg.estimator.conv.rule)}, {"paths", num(cfg.mc.n_paths)}};
  return r;
}

CommandResult cmd_convert(const RateConfig& rc, const CommandOptions&) {
  const std::size_t n = rc.rates.size();
  std::vector<std::size_t> order{rc.base};
  for (std::size_t i = 0; i < n; ++i)
    if (i != rc.base) order.push_back(i);
  std::vector<RateParams> others;
  Eigen::MatrixXd rho(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      rho(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rc.corr(order[i], order[j]);
  for (std::size_t i = 1; i < n; ++i) others.push_back(rc.rates[order[i]]);
  const SpreadConversion conv = rates_to_spreads(rc.rates[rc.base], others, CorrelationSpec(rho));

  CommandResult r;
  append_warnings(r, conv.warnings);
  RunConfig out;
  out.maturity = rc.maturity;
  out.dt = rc.dt;
  out.spreads = conv.spreads;
  Table t{"spreads", {"spread", "kappa", "xi", "q0_rate_difference", "q0_used"}, {}};
  for (std::size_t i = 0; i < out.spreads.size(); ++i) {
    if (rc.q0_overrides) {
      const double q = (*rc.q0_overrides)[i];
      if (q != conv.q0[i])
        r.warnings.push_back(fmt::format(
            "spread {} ({}): q0 override {} differs from the rate difference r_i(0) - r_0(0) = {}", i + 1,
            rc.names[order[i + 1]], num(q), num(conv.q0[i])));
      out.spreads[i].q0 = q;
      out.spreads[i].theta = ThetaCurve(q);
    }
    t.rows.push_back({rc.names[order[i + 1]], num(out.spreads[i].kappa), num(out.spreads[i].xi), num(conv.q0[i]),
                      num(out.spreads[i].q0)});
  }
  Eigen::MatrixXd sc = conv.spread_corr;
  try {
    out.corr = CorrelationSpec(sc);
  } catch (const InputError&) {
    out.corr = CorrelationSpec(nearest_correlation(sc));
    r.warnings.push_back("derived spread correlation is not positive semi-definite; projected to the nearest one");
  }
  Table c{"correlation", {"spread_i", "spread_j", "rho"}, {}};
  for (std::size_t i = 0; i < out.spreads.size(); ++i)
    for (std::size_t j = i + 1; j < out.spreads.size(); ++j)
      c.rows.push_back({rc.names[order[i + 1]], rc.names[order[j + 1]], num(out.corr(i, j))});
  r.tables.push_back(std::move(t));
  r.tables.push_back(std::move(c));
  r.document = emit_run_config(out);
  if (!out.corr.is_base_model_admissible())
    r.warnings.push_back("converted correlations include negative entries: add a 'groups' section before pricing");
  return r;
}

CommandResult cmd_mc(const RunConfig& cfg, const CommandOptions&) {
  const IntegralMoments m = mc_integral_moments(cfg.spreads, cfg.corr, cfg.grid(), cfg.mc);
  CommandResult r;
  Table t{"mc", {"quantity", "value", "std_error", "n_paths"}, {}};
  t.rows.push_back({"discount_factor", num(m.discount_factor.value), num(m.discount_factor.std_error),
                    num(m.discount_factor.n_paths)});
  t.rows.push_back({"mean_Y", num(m.mean.value), num(m.mean.std_error), num(m.mean.n_paths)});
  t.rows.push_back({"var_Y", num(m.variance.value), num(m.variance.std_error), num(m.variance.n_paths)});
  r.tables.push_back(std::move(t));
  r.metadata = {{"antithetic", cfg.mc.antithetic ? "true" : "false"}, {"paths", num(cfg.mc.n_paths)}};
  return r;
}

Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(1e-8);
  Eigen::MatrixXd p = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  const Eigen::VectorXd d = p.diagonal().cwiseSqrt().cwiseInverse();
  p = d.asDiagonal() * p * d.asDiagonal();
  p = 0.5 * (p + p.transpose()).eval();
  p.diagonal().setOnes();
  return p;
}

BenchCase bench_case(const RunConfig& cfg, std::size_t count, std::uint64_t seed) {
  if (count < 2) throw InputError("bench needs at least two currencies");
  const std::size_t want = count - 1;
  const std::size_t capacity = std::max<std::size_t>(want, 8);
  const std::size_t fixed = std::min(cfg.spreads.size(), capacity);

  // Draws in a fixed order so spread k is the same for every currency count.
  Philox4x64 rng(seed, 0xBE7C);
  boost::random::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<SpreadParams> all(cfg.spreads.begin(), cfg.spreads.begin() + static_cast<std::ptrdiff_t>(fixed));
  while (all.size() < capacity) {
    SpreadParams p;
    p.kappa = 0.005 + 0.005 * u01(rng);
    p.xi = 0.0015 + 0.001 * u01(rng);
    p.q0 = 0.003 * u01(rng);
    p.theta = ThetaCurve(p.q0);
    all.push_back(std::move(p));
  }
  const auto cap = static_cast<Eigen::Index>(capacity);
  Eigen::MatrixXd rho = Eigen::MatrixXd::Identity(cap, cap);
  for (Eigen::Index i = 0; i < cap; ++i)
    for (Eigen::Index j = i + 1; j < cap; ++j) {
      const double draw = 0.1 + 0.4 * u01(rng);
      const bool configured = static_cast<std::size_t>(j) < fixed;
      rho(i, j) = rho(j, i) =
          configured ? cfg.corr(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) : draw;
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(rho, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < 0.0) rho = nearest_correlation(rho);

  BenchCase out;
  out.spreads.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(want));
  const auto w = static_cast<Eigen::Index>(want);
  out.corr = CorrelationSpec(rho.topLeftCorner(w, w).eval());
  return out;
}

CommandResult cmd_bench(const RunConfig& cfg, const CommandOptions& opt) {
  std::vector<std::size_t> counts = opt.counts.empty() ? std::vector<std::size_t>{3, 4, 5, 6, 7, 8} : opt.counts;
  std::sort(counts.begin(), counts.end());
  if (counts.front() < 3) throw ConfigError("--counts", "currency counts must be at least 3");
  const TimeGrid grid = cfg.grid();
  const std::size_t repeats = std::max<std::size_t>(1, opt.repeats);

  struct Timing {
    double total = 0.0;
    double moments = 0.0;
  };
  auto time_one = [&](const BenchCase& bc, EstimatorSelection sel) {
    EstimatorSettings es = cfg.estimator;
    es.select = sel;
    es.threads = 1;
    Timing best{1e300, 0.0};
    for (std::size_t rep = 0; rep < repeats; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      const MaxMomentSeries series = moment_series(bc.spreads, bc.corr, grid, es);
      const double tm = seconds_since(t0);
      double v = 0.0;
      if (sel.diffusion) v += diffusion_variance(series, grid, es.variance_mode);
      if (sel.mean_reversion) {
        std::vector<double> kappas;
        for (const auto& s : bc.spreads) kappas.push_back(s.kappa);
        v += mr_variance(series, weighted_kappa(series, kappas), grid, es.variance_mode, es.inner_variable);
      }
      volatile double sink = cf1(series, grid) * (1.0 + 0.5 * v);
      (void)sink;
      const double total = seconds_since(t0);
      if (total < best.total) best = {total, tm};
    }
    return best;
  };

  CommandResult r;
  Table t{"bench",
          {"currencies", "spreads", "time_cf2_diffusion_s", "time_cf2_mr_s", "rel_cf2_diffusion", "rel_cf2_mr",
           "moment_fraction_diffusion", "moment_fraction_mr"},
          {}};
  Timing base1, base2;
  for (std::size_t c : counts) {
    const BenchCase bc = bench_case(cfg, c, cfg.mc.seed);
    const Timing t1 = time_one(bc, {true, false});
    const Timing t2 = time_one(bc, {false, true});
    if (c == counts.front()) {
      base1 = t1;
      base2 = t2;
    }
    t.rows.push_back({num(c), num(bc.spreads.size()), num(t1.total), num(t2.total), num(t1.total / base1.total),
                      num(t2.total / base2.total), num(t1.moments / t1.total), num(t2.moments / t2.total)});
  }
  r.tables.push_back(std::move(t));
  r.metadata = {{"bench_seed", num(static_cast<std::size_t>(cfg.mc.seed))}, {"repeats", num(repeats)}};
  return r;
}

void render_human(const CommandResult& r, std::ostream& os) {
  for (const auto& t : r.tables) {
    os << "== " << t.name << " ==\n";
    std::vector<std::size_t> width(t.columns.size());
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      width[c] = t.columns[c].size();
      for (const auto& row : t.rows) width[c] = std::max(width[c], row[c].size());
    }
    for (std::size_t c = 0; c < t.columns.size(); ++c) os << fmt::format("{:<{}}  ", t.columns[c], width[c]);
    os << '\n';
    for (const auto& row : t.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) os << fmt::format("{:<{}}  ", row[c], width[c]);
      os << '\n';
    }
    os << '\n';
  }
  for (const auto& w : r.warnings) os << "warning: " << w << '\n';
}

void render_machine(const Table& t, OutputFormat format, std::ostream& os) {
  if (format == OutputFormat::csv) {
    os << fmt::format("{}\n", fmt::join(t.columns, ","));
    for (const auto& row : t.rows) os << fmt::format("{}\n", fmt::join(row, ","));
    return;
  }
  for (const auto& row : t.rows) {
    std::vector<std::string> kv{"table=" + t.name};
    for (std::size_t c = 0; c < row.size(); ++c) kv.push_back(t.columns[c] + "=" + row[c]);
    os << fmt::format("{}\n", fmt::join(kv, ","));
  }
}

std::string metadata_record(const CommandResult& r, const std::string& command, std::uint64_t config_hash,
                            std::optional<std::uint64_t> seed) {
  std::string out;
  out += fmt::format("command={}\n", command);
  out += fmt::format("version={}\n", kVersion);
  out += fmt::format("config_hash=fnv1a64:{:016x}\n", config_hash);
  out += seed ? fmt::format("seed={}\n", *seed) : std::string("seed=none\n");
  for (const auto& [k, v] : r.metadata) out += fmt::format("{}={}\n", k, v);
  for (const auto& w : r.warnings) out += fmt::format("warning={}\n", w);
  return out;
}

void write_outputs(const CommandResult& r, const std::string& command, const std::string& path, OutputFormat format,
                   std::uint64_t config_hash, std::optional<std::uint64_t> seed) {
  auto open = [](const std::string& p) {
    std::ofstream f(p);
    if (!f) throw ConfigError("--out", fmt::format("cannot write '{}'", p));
    return f;
  };
  std::size_t first_table = 0;
  if (!r.document.empty()) {
    open(path) << r.document;
  } else if (!r.tables.empty()) {
    auto f = open(path);
    render_machine(r.tables[0], format, f);
    first_table = 1;
  }
  for (std::size_t i = first_table; i < r.tables.size(); ++i) {
    auto f = open(path + "." + r.tables[i].name + (format == OutputFormat::csv ? ".csv" : ".rec"));
    render_machine(r.tables[i], format, f);
  }
  open(path + ".meta") << metadata_record(r, command, config_hash, seed);
}

}  // namespace ctd
