#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ctd/config.hpp"

// Subcommands of the `ctd` tool. Each returns tables plus warnings; rendering
// to the terminal and to machine-readable files is shared.

namespace ctd {

inline constexpr const char* kVersion = "1.0.0";

enum class OutputFormat { csv, record };

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

struct CommandResult {
  std::vector<Table> tables;
  std::vector<std::string> warnings;
  std::vector<std::pair<std::string, std::string>> metadata;  // sidecar fields beyond hash/seed/version
  std::string document;  // optional payload, e.g. a generated config
};

struct CommandOptions {
  std::optional<double> maturity;
  std::optional<double> dt;
  std::optional<double> delta;
  std::optional<std::size_t> paths;
  std::optional<std::uint64_t> seed;
  std::optional<VarianceMode> variance_mode;
  std::string axis = "corr";
  std::optional<std::pair<double, double>> range;
  std::optional<std::size_t> steps;
  std::vector<double> deltas;
  std::vector<double> maturities;
  std::vector<std::size_t> counts;
  std::size_t repeats = 3;
  bool diagnostics = false;
  std::optional<std::string> out;
  OutputFormat format = OutputFormat::csv;
};

// CLI overrides applied on top of the file configuration.
RunConfig apply_overrides(RunConfig cfg, const CommandOptions& opt);

CommandResult cmd_price(const RunConfig& cfg, const CommandOptions& opt);
CommandResult cmd_sweep(const RunConfig& cfg, const CommandOptions& opt);
CommandResult cmd_table_moments(const RunConfig& cfg, const CommandOptions& opt);
CommandResult cmd_convert(const RateConfig& rates, const CommandOptions& opt);
CommandResult cmd_mc(const RunConfig& cfg, const CommandOptions& opt);
CommandResult cmd_bench(const RunConfig& cfg, const CommandOptions& opt);

// Spreads and correlation for `count` currencies (count - 1 spreads): the
// configured spreads first, then randomised ones drawn from `seed`.
struct BenchCase {
  std::vector<SpreadParams> spreads;
  CorrelationSpec corr;
};
BenchCase bench_case(const RunConfig& cfg, std::size_t count, std::uint64_t seed);

// Nearest correlation matrix in the eigenvalue-clipping sense, unit diagonal restored.
Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& m);

std::string format_number(double v);

void render_human(const CommandResult& r, std::ostream& os);
void render_machine(const Table& t, OutputFormat format, std::ostream& os);
std::string metadata_record(const CommandResult& r, const std::string& command, std::uint64_t config_hash,
                            std::optional<std::uint64_t> seed);

// Writes the primary table to `path`, further tables to `path.<name>.csv`,
// the sidecar metadata to `path.meta` and the document (if any) to `path` instead
// of a table when there are no tables.
void write_outputs(const CommandResult& r, const std::string& command, const std::string& path, OutputFormat format,
                   std::uint64_t config_hash, std::optional<std::uint64_t> seed);

}  // namespace ctd
