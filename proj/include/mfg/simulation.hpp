#pragma once

#include "mfg/core.hpp"
#include "mfg/finite_n.hpp"
#include "mfg/limit.hpp"
#include "mfg/ode.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace mfg {

/// dXbar/dt = (A - M (Lambda1 + Lambda2) + G) Xbar - M chi1, Xbar(0) = x0.
struct MeanFieldTrajectory {
  std::optional<MatrixTrajectory> xbar;  // n x 1
};

MeanFieldTrajectory solve_xbar(const LimitSolution& limit,
                               const ModelParams& params, const Vector& x0,
                               const TimeGrid& grid);

/// u_i = gain_self X_i + gain_mf Xbar + offset; needs no other agent's state.
struct DecentralizedStrategy {
  std::optional<MatrixTrajectory> gain_self;  // -R^{-1} B' Lambda1
  std::optional<MatrixTrajectory> gain_mf;    // -R^{-1} B' Lambda2
  std::optional<MatrixTrajectory> offset;     // -R^{-1} B' chi1
};

DecentralizedStrategy decentralized_strategy(const LimitSolution& limit,
                                             const ModelParams& params);

enum class StrategyKind { CentralizedFiniteN, Decentralized };

struct SimulationConfig {
  int N = 2;
  int replications = 1;
  std::uint64_t seed = 0;
  /// Mean of X_i(0) per agent. Size N, or size 1 to share one mean; empty
  /// means zero.
  std::vector<Vector> initial_means;
  /// Shared covariance of the Gaussian initial states (n x n, PSD). Empty
  /// means deterministic initial states.
  Matrix initial_cov;
  StrategyKind strategy = StrategyKind::Decentralized;
  /// Euler-Maruyama steps; must divide the ODE grid's step count.
  int sde_steps = 400;
  /// Xbar(0). Defaults to the average of the initial means.
  std::optional<Vector> x0;
  /// Random stream label of each agent (size N); defaults to 0..N-1.
  std::vector<std::uint32_t> agent_streams;
  /// Keep all agents' paths for the first this-many replications.
  int keep_paths = 0;
  /// Keep every path_thin-th SDE node of kept paths.
  int path_thin = 1;
};

struct Estimate {
  double value = 0.0;
  /// Absent when fewer than two replications contributed.
  std::optional<double> std_error;
  int node = 0;
  double t = 0.0;
};

struct SimulationResult {
  int N = 0;
  int replications = 0;  // requested
  int used = 0;          // finished without a non-finite state
  std::uint64_t seed = 0;
  std::vector<int> flagged;  // replications that hit a non-finite state

  std::vector<double> times;          // SDE nodes
  std::vector<double> mf_sq_mean;     // mean of |X^(N)(t) - Xbar(t)|^2
  std::vector<double> mf_sq_var;      // sample variance (NaN if used < 2)
  std::vector<double> xbar;           // |Xbar(t)| at SDE nodes, for reference
  Estimate mf_error_sup;

  std::vector<double> cost_mean;  // per agent
  std::vector<double> cost_se;    // per agent, NaN if used < 2
  /// replications x N realized costs; rows of flagged replications are NaN.
  Matrix replication_costs;

  /// paths[r][m] is the n x N state matrix at kept node m of replication r.
  std::vector<std::vector<Matrix>> paths;
  std::vector<double> path_times;
};

/// Euler-Maruyama simulation of the N-player closed loop. Centralized runs
/// need `reduced` for config.N; decentralized runs need the completed limit.
SimulationResult simulate_population(const ModelParams& params,
                                     const LimitSolution& limit,
                                     const ReducedSolution* reduced,
                                     const SimulationConfig& config);

/// max over nodes of the mean squared mean-field error, with the standard
/// error at the maximizing node.
Estimate estimate_mf_error(const SimulationResult& result);

struct StrategyComparison {
  int N = 0;
  int paired = 0;
  /// Per-agent mean and standard error of J_centralized - J_decentralized.
  std::vector<double> gap_mean;
  std::vector<double> gap_se;
  /// Average over agents of the paired gap, with its standard error.
  double mean_gap = 0.0;
  double mean_gap_se = 0.0;
  SimulationResult centralized;
  SimulationResult decentralized;
};

/// Paired simulations (same seed, so common random numbers) under both
/// strategies. config.N and config.strategy are overridden.
StrategyComparison compare_strategies(const ModelParams& params, int N,
                                      const TimeGrid& grid,
                                      SimulationConfig config);

}  // namespace mfg
