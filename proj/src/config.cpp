#include "ctd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <yaml-cpp/yaml.h>

#include "ctd/errors.hpp"

namespace ctd {

namespace {

std::string where(const std::string& origin, const YAML::Node& node, const std::string& field) {
  const YAML::Mark m = node.Mark();
  if (m.is_null()) return fmt::format("{}: field '{}'", origin, field);
  return fmt::format("{}:{}:{}: field '{}'", origin, m.line + 1, m.column + 1, field);
}

class Reader {
 public:
  explicit Reader(std::string origin) : origin_(std::move(origin)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& field, const std::string& what) const {
    throw ConfigError(where(origin_, node, field), what);
  }

  void require_map(const YAML::Node& node, const std::string& field) const {
    if (!node.IsMap()) fail(node, field, "expected a mapping");
  }

  void only_keys(const YAML::Node& node, const std::string& field, std::initializer_list<const char*> allowed) const {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!ok.count(key)) fail(kv.first, field.empty() ? key : field + "." + key, "unknown key");
    }
  }

  double number(const YAML::Node& node, const std::string& field) const {
    if (!node.IsScalar()) fail(node, field, "expected a number");
    try {
      const std::string s = node.Scalar();
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) fail(node, field, fmt::format("'{}' is not a number", s));
      if (!std::isfinite(v)) fail(node, field, "number must be finite");
      return v;
    } catch (const std::logic_error&) {
      fail(node, field, fmt::format("'{}' is not a number", node.Scalar()));
    }
  }

  std::uint64_t count(const YAML::Node& node, const std::string& field) const {
    if (!node.IsScalar()) fail(node, field, "expected a non-negative integer");
    const std::string s = node.Scalar();
    try {
      std::size_t used = 0;
      if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
      const unsigned long long v = std::stoull(s, &used, 0);
      if (used != s.size()) {
        // Accept integral values written in floating notation (1e6).
        const double d = number(node, field);
        if (d < 0.0 || d != std::floor(d) || d > 1.8e19) throw std::invalid_argument("not integral");
        return static_cast<std::uint64_t>(d);
      }
      return v;
    } catch (const std::logic_error&) {
      fail(node, field, fmt::format("'{}' is not a non-negative integer", s));
    }
  }

  bool flag(const YAML::Node& node, const std::string& field) const {
    try {
      return node.as<bool>();
    } catch (const YAML::Exception&) {
      fail(node, field, "expected true or false");
    }
  }

  std::string text(const YAML::Node& node, const std::string& field) const {
    if (!node.IsScalar()) fail(node, field, "expected a string");
    return node.Scalar();
  }

  std::vector<double> numbers(const YAML::Node& node, const std::string& field) const {
    if (!node.IsSequence()) fail(node, field, "expected a list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < node.size(); ++i) out.push_back(number(node[i], fmt::format("{}[{}]", field, i)));
    return out;
  }

  CorrelationSpec correlation(const YAML::Node& node, const std::string& field, std::size_t n) const {
    try {
      if (node.IsScalar()) return n == 1 ? CorrelationSpec::identity(1) : CorrelationSpec::uniform(n, number(node, field));
      if (!node.IsSequence() || node.size() != n) fail(node, field, fmt::format("expected a scalar or a {0}x{0} matrix", n));
      Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = numbers(node[i], fmt::format("{}[{}]", field, i));
        if (row.size() != n) fail(node[i], fmt::format("{}[{}]", field, i), fmt::format("row must have {} entries", n));
        for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
      }
      return CorrelationSpec(std::move(m));
    } catch (const InputError& e) {
      fail(node, field, e.what());
    }
  }

  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
};

YAML::Node parse_yaml(const std::string& text, const std::string& origin) {
  try {
    YAML::Node root = YAML::Load(text);
    if (!root.IsMap()) throw ConfigError(origin, "top level must be a mapping");
    return root;
  } catch (const YAML::ParserException& e) {
    throw ConfigError(fmt::format("{}:{}:{}", origin, e.mark.line + 1, e.mark.column + 1), e.msg);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ThetaCurve parse_theta(const Reader& r, const YAML::Node& node, const std::string& field) {
  if (node.IsScalar()) return ThetaCurve(r.number(node, field));
  if (!node.IsSequence() || node.size() == 0) r.fail(node, field, "expected a number or a list of [until, value] pairs");
  std::vector<double> knots, values;
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string f = fmt::format("{}[{}]", field, i);
    const auto pair = r.numbers(node[i], f);
    if (pair.size() != 2) r.fail(node[i], f, "expected [until, value]");
    knots.push_back(pair[0]);
    values.push_back(pair[1]);
  }
  try {
    return ThetaCurve(std::move(knots), std::move(values));
  } catch (const InputError& e) {
    r.fail(node, field, e.what());
  }
}

MomentRule parse_rule(const Reader& r, const YAML::Node& node) {
  const std::string s = r.text(node, "convolution.rule");
  if (s == "trapezoid") return MomentRule::trapezoid;
  if (s == "left" || s == "left_endpoint") return MomentRule::left_endpoint;
  r.fail(node, "convolution.rule", fmt::format("unknown rule '{}' (trapezoid|left)", s));
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

std::string to_string(VarianceMode m) { return m == VarianceMode::central ? "central" : "raw"; }
std::string to_string(MomentRule r) { return r == MomentRule::trapezoid ? "trapezoid" : "left"; }
std::string to_string(InnerVariable v) { return v == InnerVariable::s ? "s" : "t"; }

VarianceMode parse_variance_mode(std::string_view s) {
  if (s == "central") return VarianceMode::central;
  if (s == "raw" || s == "raw_second_moment") return VarianceMode::raw_second_moment;
  throw ConfigError("variance_mode", fmt::format("unknown variance mode '{}' (central|raw)", s));
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  const YAML::Node root = parse_yaml(text, origin);
  const Reader r(origin);
  r.only_keys(root, "",
              {"maturity", "dt", "spreads", "correlation", "convolution", "estimator", "mc", "base_discount", "groups"});
  RunConfig cfg;
  if (root["maturity"]) cfg.maturity = r.number(root["maturity"], "maturity");
  if (root["dt"]) cfg.dt = r.number(root["dt"], "dt");
  try {
    (void)cfg.grid();
  } catch (const InputError& e) {
    r.fail(root["dt"] ? root["dt"] : root, "dt", e.what());
  }

  const YAML::Node spreads = root["spreads"];
  if (!spreads) throw ConfigError(origin, "missing required field 'spreads'");
  if (!spreads.IsSequence() || spreads.size() == 0) r.fail(spreads, "spreads", "expected a non-empty list");
  for (std::size_t i = 0; i < spreads.size(); ++i) {
    const std::string f = fmt::format("spreads[{}]", i);
    const YAML::Node s = spreads[i];
    r.require_map(s, f);
    r.only_keys(s, f, {"kappa", "xi", "q0", "theta"});
    SpreadParams p;
    for (const char* key : {"kappa", "xi", "q0"})
      if (!s[key]) r.fail(s, f, fmt::format("missing '{}'", key));
    p.kappa = r.number(s["kappa"], f + ".kappa");
    p.xi = r.number(s["xi"], f + ".xi");
    p.q0 = r.number(s["q0"], f + ".q0");
    p.theta = s["theta"] ? parse_theta(r, s["theta"], f + ".theta") : ThetaCurve(p.q0);
    try {
      p.validate(cfg.maturity);
    } catch (const InputError& e) {
      r.fail(s, f, e.what());
    }
    cfg.spreads.push_back(std::move(p));
  }
  const std::size_t n = cfg.spreads.size();
  cfg.corr = root["correlation"] ? r.correlation(root["correlation"], "correlation", n) : CorrelationSpec::identity(n);

  EstimatorSettings& est = cfg.estimator;
  if (const YAML::Node c = root["convolution"]) {
    r.require_map(c, "convolution");
    r.only_keys(c, "convolution",
                {"delta", "eps_tail", "eps_gamma", "tau_cdf", "tau_prob", "tau_var", "quad_width", "rule", "hermite_nodes"});
    ConvolutionSettings& cs = est.conv;
    if (c["delta"]) cs.delta = r.number(c["delta"], "convolution.delta");
    if (c["eps_tail"]) cs.eps_tail = r.number(c["eps_tail"], "convolution.eps_tail");
    if (c["eps_gamma"]) cs.eps_gamma = r.number(c["eps_gamma"], "convolution.eps_gamma");
    if (c["tau_cdf"]) cs.tau_cdf = r.number(c["tau_cdf"], "convolution.tau_cdf");
    if (c["tau_prob"]) cs.tau_prob = r.number(c["tau_prob"], "convolution.tau_prob");
    if (c["tau_var"]) cs.tau_var = r.number(c["tau_var"], "convolution.tau_var");
    if (c["quad_width"]) cs.quad_width = r.number(c["quad_width"], "convolution.quad_width");
    if (c["rule"]) cs.rule = parse_rule(r, c["rule"]);
    if (c["hermite_nodes"]) cs.hermite_nodes = r.count(c["hermite_nodes"], "convolution.hermite_nodes");
    try {
      cs.validate();
    } catch (const InputError& e) {
      r.fail(c, "convolution", e.what());
    }
  }

  if (const YAML::Node e = root["estimator"]) {
    r.require_map(e, "estimator");
    r.only_keys(e, "estimator", {"variance_mode", "inner_variable", "select", "threads"});
    if (e["variance_mode"]) {
      try {
        est.variance_mode = parse_variance_mode(r.text(e["variance_mode"], "estimator.variance_mode"));
      } catch (const ConfigError& err) {
        r.fail(e["variance_mode"], "estimator.variance_mode", err.what());
      }
    }
    if (e["inner_variable"]) {
      const std::string v = r.text(e["inner_variable"], "estimator.inner_variable");
      if (v == "s") est.inner_variable = InnerVariable::s;
      else if (v == "t") est.inner_variable = InnerVariable::t;
      else r.fail(e["inner_variable"], "estimator.inner_variable", "expected s or t");
    }
    if (const YAML::Node sel = e["select"]) {
      if (!sel.IsSequence()) r.fail(sel, "estimator.select", "expected a list of estimator names");
      est.select = {false, false};
      for (std::size_t i = 0; i < sel.size(); ++i) {
        const std::string name = r.text(sel[i], "estimator.select");
        if (name == "cf2_diffusion") est.select.diffusion = true;
        else if (name == "cf2_mr") est.select.mean_reversion = true;
        else if (name != "cf1")
          r.fail(sel[i], "estimator.select", fmt::format("unknown estimator '{}' (cf1|cf2_diffusion|cf2_mr)", name));
      }
    }
    if (e["threads"]) est.threads = r.count(e["threads"], "estimator.threads");
  }

  if (const YAML::Node m = root["mc"]) {
    r.require_map(m, "mc");
    r.only_keys(m, "mc", {"paths", "seed", "antithetic", "batch_size", "threads"});
    if (m["paths"]) cfg.mc.n_paths = r.count(m["paths"], "mc.paths");
    if (m["seed"]) cfg.mc.seed = r.count(m["seed"], "mc.seed");
    if (m["antithetic"]) cfg.mc.antithetic = r.flag(m["antithetic"], "mc.antithetic");
    if (m["batch_size"]) cfg.mc.batch_size = r.count(m["batch_size"], "mc.batch_size");
    if (m["threads"]) cfg.mc.threads = r.count(m["threads"], "mc.threads");
    try {
      cfg.mc.validate();
    } catch (const InputError& err) {
      r.fail(m, "mc", err.what());
    }
  }

  if (const YAML::Node b = root["base_discount"]) {
    const double v = r.number(b, "base_discount");
    if (!(v > 0.0)) r.fail(b, "base_discount", "must be positive");
    est.base_discount = v;
  }

  if (const YAML::Node g = root["groups"]) {
    r.require_map(g, "groups");
    r.only_keys(g, "groups", {"membership", "c_corr"});
    if (!g["membership"] || !g["c_corr"]) r.fail(g, "groups", "needs 'membership' and 'c_corr'");
    GroupSplit split;
    const YAML::Node mem = g["membership"];
    if (!mem.IsSequence() || mem.size() != n) r.fail(mem, "groups.membership", fmt::format("expected {} group ids", n));
    bool seen[2] = {false, false};
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = r.count(mem[i], fmt::format("groups.membership[{}]", i));
      if (id > 1) r.fail(mem[i], fmt::format("groups.membership[{}]", i), "group id must be 0 or 1");
      seen[id] = true;
      split.membership.push_back(static_cast<int>(id));
    }
    if (!seen[0] || !seen[1]) r.fail(mem, "groups.membership", "both groups must be non-empty");
    split.c_corr = r.number(g["c_corr"], "groups.c_corr");
    if (!(std::abs(split.c_corr) < 1.0)) r.fail(g["c_corr"], "groups.c_corr", "must lie in (-1, 1)");
    est.groups = std::move(split);
  } else if (!cfg.corr.is_base_model_admissible()) {
    r.fail(root["correlation"], "correlation",
           "off-diagonal entries must lie in [0, 1) without a two-group split ('groups' section)");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_file(path), path); }

std::string emit_run_config(const RunConfig& cfg) {
  std::string out;
  auto line = [&out](const std::string& s) {
    out += s;
    out += '\n';
  };
  line("maturity: " + num(cfg.maturity));
  line("dt: " + num(cfg.dt));
  line("spreads:");
  for (const auto& s : cfg.spreads) {
    std::string theta;
    if (s.theta.is_constant()) {
      theta = num(s.theta.values()[0]);
    } else {
      std::vector<std::string> seg;
      for (std::size_t i = 0; i < s.theta.knots().size(); ++i)
        seg.push_back(fmt::format("[{}, {}]", num(s.theta.knots()[i]), num(s.theta.values()[i])));
      theta = fmt::format("[{}]", fmt::join(seg, ", "));
    }
    line(fmt::format("  - {{kappa: {}, xi: {}, q0: {}, theta: {}}}", num(s.kappa), num(s.xi), num(s.q0), theta));
  }
  line("correlation:");
  const std::size_t n = cfg.corr.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> row;
    for (std::size_t j = 0; j < n; ++j) row.push_back(num(cfg.corr(i, j)));
    line(fmt::format("  - [{}]", fmt::join(row, ", ")));
  }
  const ConvolutionSettings& c = cfg.estimator.conv;
  line("convolution:");
  line("  delta: " + num(c.delta));
  line("  eps_tail: " + num(c.eps_tail));
  line("  eps_gamma: " + num(c.eps_gamma));
  line("  tau_cdf: " + num(c.tau_cdf));
  line("  tau_prob: " + num(c.tau_prob));
  line("  tau_var: " + num(c.tau_var));
  line("  quad_width: " + num(c.quad_width));
  line("  rule: " + to_string(c.rule));
  line(fmt::format("  hermite_nodes: {}", c.hermite_nodes));
  const EstimatorSettings& e = cfg.estimator;
  line("estimator:");
  line("  variance_mode: " + to_string(e.variance_mode));
  line("  inner_variable: " + to_string(e.inner_variable));
  std::vector<std::string> sel{"cf1"};
  if (e.select.diffusion) sel.emplace_back("cf2_diffusion");
  if (e.select.mean_reversion) sel.emplace_back("cf2_mr");
  line(fmt::format("  select: [{}]", fmt::join(sel, ", ")));
  line(fmt::format("  threads: {}", e.threads));
  line("mc:");
  line(fmt::format("  paths: {}", cfg.mc.n_paths));
  line(fmt::format("  seed: {}", cfg.mc.seed));
  line(fmt::format("  antithetic: {}", cfg.mc.antithetic ? "true" : "false"));
  line(fmt::format("  batch_size: {}", cfg.mc.batch_size));
  line(fmt::format("  threads: {}", cfg.mc.threads));
  if (e.base_discount) line("base_discount: " + num(*e.base_discount));
  if (e.groups) {
    line("groups:");
    line(fmt::format("  membership: [{}]", fmt::join(e.groups->membership, ", ")));
    line("  c_corr: " + num(e.groups->c_corr));
  }
  return out;
}

RateConfig parse_rate_config(const std::string& text, const std::string& origin) {
  const YAML::Node root = parse_yaml(text, origin);
  const Reader r(origin);
  r.only_keys(root, "", {"rates", "base", "correlation", "overrides", "maturity", "dt"});
  RateConfig cfg;
  const YAML::Node rates = root["rates"];
  if (!rates) throw ConfigError(origin, "missing required field 'rates'");
  if (!rates.IsSequence() || rates.size() < 2) r.fail(rates, "rates", "expected a list of at least two rates");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const std::string f = fmt::format("rates[{}]", i);
    const YAML::Node x = rates[i];
    r.require_map(x, f);
    r.only_keys(x, f, {"name", "kappa", "xi", "r0"});
    for (const char* key : {"kappa", "xi", "r0"})
      if (!x[key]) r.fail(x, f, fmt::format("missing '{}'", key));
    RateParams p{r.number(x["kappa"], f + ".kappa"), r.number(x["xi"], f + ".xi"), r.number(x["r0"], f + ".r0")};
    if (!(p.kappa > 0.0)) r.fail(x["kappa"], f + ".kappa", "must be positive");
    if (!(p.xi >= 0.0)) r.fail(x["xi"], f + ".xi", "must be non-negative");
    cfg.rates.push_back(p);
    cfg.names.push_back(x["name"] ? r.text(x["name"], f + ".name") : fmt::format("rate{}", i));
  }
  if (root["base"]) {
    cfg.base = r.count(root["base"], "base");
    if (cfg.base >= cfg.rates.size()) r.fail(root["base"], "base", "index outside the rate list");
  }
  if (!root["correlation"]) throw ConfigError(origin, "missing required field 'correlation'");
  cfg.corr = r.correlation(root["correlation"], "correlation", cfg.rates.size());
  if (root["maturity"]) cfg.maturity = r.number(root["maturity"], "maturity");
  if (root["dt"]) cfg.dt = r.number(root["dt"], "dt");
  if (const YAML::Node o = root["overrides"]) {
    r.require_map(o, "overrides");
    r.only_keys(o, "overrides", {"q0"});
    if (o["q0"]) {
      auto q = r.numbers(o["q0"], "overrides.q0");
      if (q.size() != cfg.rates.size() - 1)
        r.fail(o["q0"], "overrides.q0", fmt::format("expected {} values (one per non-base rate)", cfg.rates.size() - 1));
      cfg.q0_overrides = std::move(q);
    }
  }
  return cfg;
}

RateConfig load_rate_config(const std::string& path) { return parse_rate_config(read_file(path), path); }

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ctd
