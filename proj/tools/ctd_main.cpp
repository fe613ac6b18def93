// ctd: cheapest-to-deliver discount factor estimators and Monte Carlo checks.
//
//   ctd price --config run.yaml [--diagnostics] [--out result.csv]
//   ctd sweep --config run.yaml --axis kappa --range 0.1 10 --steps 9
//   ctd table-moments --config run.yaml --paths 1000000
//   ctd convert --config rates.yaml --out spreads.yaml
//   ctd mc --config run.yaml --seed 7
//   ctd bench --config run.yaml --counts 3 4 5 6 7 8
//
// Exit status: 0 success, 2 configuration error, 3 numerical-domain error.

#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ctd/commands.hpp"
#include "ctd/errors.hpp"

int main(int argc, char** argv) {
  using namespace ctd;
  CLI::App app{"Cheapest-to-deliver discount factor estimators"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);

  std::string config_path;
  CommandOptions opt;
  double maturity = 0, dt = 0, delta = 0;
  std::size_t paths = 0, steps = 0;
  std::uint64_t seed = 0;
  std::string variance_mode, format = "csv", out;
  std::vector<double> range;

  app.add_option("--config", config_path, "Run configuration (rate configuration for convert)")->required();
  auto* o_mat = app.add_option("--maturity", maturity, "Maturity T in years");
  auto* o_dt = app.add_option("--dt", dt, "Time step in years");
  auto* o_delta = app.add_option("--delta", delta, "Convolution grid step");
  auto* o_paths = app.add_option("--paths", paths, "Monte Carlo paths");
  auto* o_seed = app.add_option("--seed", seed, "Monte Carlo seed");
  auto* o_vm = app.add_option("--variance-mode", variance_mode, "central|raw")->check(CLI::IsMember({"central", "raw"}));
  app.add_option("--axis", opt.axis, "Sweep axis: corr|kappa|vol")->check(CLI::IsMember({"corr", "kappa", "vol"}));
  auto* o_range = app.add_option("--range", range, "Sweep range: LO HI")->expected(2);
  auto* o_steps = app.add_option("--steps", steps, "Sweep points");
  app.add_option("--deltas", opt.deltas, "Grid steps for table-moments");
  app.add_option("--maturities", opt.maturities, "Maturities for table-moments");
  app.add_option("--counts", opt.counts, "Currency counts for bench");
  app.add_option("--repeats", opt.repeats, "Timing repeats for bench (minimum is kept)");
  app.add_flag("--diagnostics", opt.diagnostics, "Per-time diagnostics for price");
  auto* o_out = app.add_option("--out", out, "Machine-readable output path (sidecar PATH.meta)");
  app.add_option("--format", format, "csv|record")->check(CLI::IsMember({"csv", "record"}));

  for (const char* name : {"price", "sweep", "table-moments", "convert", "mc", "bench"}) app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  if (*o_mat) opt.maturity = maturity;
  if (*o_dt) opt.dt = dt;
  if (*o_delta) opt.delta = delta;
  if (*o_paths) opt.paths = paths;
  if (*o_seed) opt.seed = seed;
  if (*o_steps) opt.steps = steps;
  if (*o_range) opt.range = std::pair{range[0], range[1]};
  if (*o_out) opt.out = out;
  opt.format = format == "record" ? OutputFormat::record : OutputFormat::csv;

  try {
    if (*o_vm) opt.variance_mode = parse_variance_mode(variance_mode);
    CommandResult result;
    std::uint64_t hash = 0;
    std::optional<std::uint64_t> seed_used;
    if (command == "convert") {
      const RateConfig rc = load_rate_config(config_path);
      result = cmd_convert(rc, opt);
      hash = fnv1a(result.document);
    } else {
      const RunConfig cfg = apply_overrides(load_run_config(config_path), opt);
      hash = fnv1a(emit_run_config(cfg));
      seed_used = cfg.mc.seed;
      if (command == "price") {
        result = cmd_price(cfg, opt);
        seed_used.reset();
      } else if (command == "sweep") {
        result = cmd_sweep(cfg, opt);
      } else if (command == "table-moments") {
        result = cmd_table_moments(cfg, opt);
      } else if (command == "mc") {
        result = cmd_mc(cfg, opt);
      } else {
        result = cmd_bench(cfg, opt);
      }
    }
    render_human(result, std::cout);
    if (!result.document.empty() && !opt.out) std::cout << '\n' << result.document;
    if (opt.out) write_outputs(result, command, *opt.out, opt.format, hash, seed_used);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const ConsistencyError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
