#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctd/estimators.hpp"
#include "ctd/mc_oracle.hpp"
#include "ctd/term_structure.hpp"

// YAML run configuration. Example:
//
//   maturity: 20
//   dt: 0.1
//   spreads:
//     - {kappa: 0.0078, xi: 0.0018, q0: 0.000845, theta: 0.000845}
//     - {kappa: 0.0076, xi: 0.0023, q0: 0.001514, theta: [[10, 0.0015], [20, 0.0016]]}
//   correlation: 0.3            # scalar or full matrix
//   convolution: {delta: 5e-5, rule: trapezoid}
//   estimator: {variance_mode: central, inner_variable: s, select: [cf1, cf2_diffusion, cf2_mr]}
//   mc: {paths: 1000000, seed: 7, antithetic: false}
//   base_discount: 0.97         # optional
//   groups: {membership: [0, 1], c_corr: -0.2}   # optional
//
// Every field except spreads is optional. Errors name the file position.

namespace ctd {

struct RunConfig {
  double maturity = 20.0;
  double dt = 0.1;
  std::vector<SpreadParams> spreads;
  CorrelationSpec corr;
  EstimatorSettings estimator;
  McSettings mc;

  TimeGrid grid() const { return TimeGrid(maturity, dt); }
};

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::string& path);

// Canonical YAML with every number at 17 significant digits; parse(emit(c)) == c.
std::string emit_run_config(const RunConfig& cfg);

// Collateral-rate parameters for the spread conversion, base rate designated by index.
struct RateConfig {
  std::vector<RateParams> rates;
  std::vector<std::string> names;
  std::size_t base = 0;
  CorrelationSpec corr;
  std::optional<std::vector<double>> q0_overrides;  // one per non-base rate
  double maturity = 20.0;
  double dt = 0.1;
};

RateConfig parse_rate_config(const std::string& text, const std::string& origin = "<rates>");
RateConfig load_rate_config(const std::string& path);

std::uint64_t fnv1a(std::string_view data);

std::string to_string(VarianceMode m);
std::string to_string(MomentRule r);
std::string to_string(InnerVariable v);
VarianceMode parse_variance_mode(std::string_view s);

}  // namespace ctd
