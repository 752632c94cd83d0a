#pragma once

#include "mfg/core.hpp"
#include "mfg/ode.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfg::cli {

/// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInputError = 1,
  kExitNotSolvable = 2,
  kExitUnresolved = 3,
};

/// Malformed or inconsistent configuration. The message names the offending
/// field (e.g. "model.R") or the parse position.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SimStrategy { Centralized, Decentralized, Compare };

struct RunOptions {
  int N = 5;                          // solve-finite
  std::vector<int> N_values{8, 16, 32, 64};  // converge, simulate
  int replications = 200;
  std::uint64_t seed = 0;
  std::vector<Vector> initial_means;  // empty, one shared, or one per agent
  Matrix initial_cov;                 // empty: deterministic initial states
  std::optional<Vector> x0;
  SimStrategy strategy = SimStrategy::Centralized;
  int sde_steps = 400;
  int keep_paths = 0;
  int path_thin = 1;
  /// Skip the solvability certificate before simulating.
  bool exploratory = false;
};

struct RunConfig {
  ModelParams model;
  int steps = kDefaultSteps;
  double threshold = kDefaultBlowupThreshold;
  int refinements = 8;
  RunOptions run;
};

/// Strict parse: unknown keys, wrong types and invalid models are errors.
/// `source` prefixes diagnostics.
RunConfig parse_config(const std::string& text,
                       const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

/// Normalized JSON echo of the whole config; parse_config(to_json_text(c))
/// reproduces c.
std::string to_json_text(const RunConfig& config);

struct Overrides {
  std::optional<int> steps;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
};

void apply(const Overrides& overrides, RunConfig& config);

/// Outcome of one command: exit code, a one-line summary and the files
/// written (relative to the output directory, in write order).
struct CommandResult {
  int exit_code = kExitOk;
  std::string message;
  std::vector<std::string> files;
  std::vector<std::string> warnings;
};

CommandResult cmd_check(const RunConfig& config, const std::filesystem::path& out);
CommandResult cmd_solve(const RunConfig& config, const std::filesystem::path& out);
CommandResult cmd_solve_finite(const RunConfig& config,
                               const std::filesystem::path& out);
CommandResult cmd_converge(const RunConfig& config,
                           const std::filesystem::path& out);
CommandResult cmd_simulate(const RunConfig& config,
                           const std::filesystem::path& out);

/// Full command-line entry point; never throws.
int run(int argc, char** argv);

}  // namespace mfg::cli
