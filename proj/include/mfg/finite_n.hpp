#pragma once

#include "mfg/core.hpp"
#include "mfg/ode.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mfg {

/// Largest N * n the dense full-system solver accepts.
inline constexpr int kMaxFullDimension = 60;

/// Solution of the full coupled Riccati system for all N players. Player i's
/// value function is x' P_i x + 2 S_i' x + r_i on the stacked state x.
struct FullSolution {
  int N = 0;
  Status status = Status::Completed;
  std::optional<Interval> escape_bracket;
  std::vector<MatrixTrajectory> P;  // Nn x Nn each
  std::vector<MatrixTrajectory> S;  // Nn x 1 each; empty on escape
  std::vector<MatrixTrajectory> r;  // 1 x 1 each; empty on escape

  bool completed() const { return status == Status::Completed; }
};

/// Symmetry-reduced finite-N solution. P_1 is Pi1 in block (1,1), Pi2 along
/// the rest of the first block row, Pi3 on the remaining diagonal blocks and
/// Pi4 elsewhere. S_1 is theta1 in block 1 and theta2 elsewhere; all r_i
/// coincide.
struct ReducedSolution {
  int N = 0;
  Status status = Status::Completed;
  std::optional<Interval> escape_bracket;
  /// Empty unless escaped: the Pi1..Pi4 trajectories up to the escape.
  std::vector<MatrixTrajectory> partial;
  std::optional<MatrixTrajectory> Pi1, Pi2, Pi3, Pi4;
  std::optional<MatrixTrajectory> theta1, theta2, r;

  bool completed() const { return status == Status::Completed; }
  const TimeGrid& grid() const;
};

/// Block-swap permutation J_ij on N blocks of size n (0-based i, j).
Matrix exchange_matrix(int N, int n, int i, int j);

/// Full oracle: integrates the Nn-dimensional coupled system for
/// (P_1..P_N), then the linear systems for S_i and r_i. Requires N >= 2 and
/// N * n <= kMaxFullDimension.
FullSolution solve_full_oracle(const ModelParams& params, int N,
                               const TimeGrid& grid,
                               double blowup_threshold = kDefaultBlowupThreshold);

/// Integrates the four coupled n x n equations for Pi1..Pi4, then theta1,
/// theta2 and r with Pi sampled at fourth order inside each RK4 stage.
/// Pi4 is an independent unknown so that Pi3 == Pi4 stays a checkable fact.
ReducedSolution solve_reduced(const ModelParams& params, int N,
                              const TimeGrid& grid,
                              double blowup_threshold = kDefaultBlowupThreshold);

/// P_1 from its four blocks.
Matrix assemble_P1(const Matrix& Pi1, const Matrix& Pi2, const Matrix& Pi3,
                   const Matrix& Pi4, int N);
Matrix assemble_P1(const ReducedSolution& reduced, double t);

/// S_1 = [theta1; theta2; ...; theta2].
Matrix assemble_S1(const Matrix& theta1, const Matrix& theta2, int N);

struct RepresentationViolation {
  int node = 0;
  double t = 0.0;
  std::string what;  // "block-pattern", "exchange", "S-pattern", "r-equal"
  int player = 0;    // 0-based; 0 for checks on P_1 itself
  double magnitude = 0.0;
};

struct RepresentationReport {
  std::vector<RepresentationViolation> violations;
  double max_block_pattern = 0.0;
  double max_exchange = 0.0;
  double max_s_pattern = 0.0;
  double max_r_spread = 0.0;
  /// Largest |Pi3 - Pi4| (l1) read off P_1's blocks.
  double max_pi3_pi4 = 0.0;

  bool ok() const { return violations.empty(); }
};

/// Checks the block structure of P_1, P_i = J_1i' P_1 J_1i, the theta
/// pattern of every S_i and r_1 = ... = r_N at every node.
RepresentationReport check_representation(const FullSolution& full, double tol);

/// sup_t |Pi1| + N |Pi2| + N^2 |Pi3| in the l1 norm.
double finite_n_norm_stat(const ReducedSolution& reduced);

/// Feedback Nash law u_i = gain_self X_i + gain_other sum_{j != i} X_j + offset.
struct FeedbackStrategyFiniteN {
  int N = 0;
  std::optional<MatrixTrajectory> gain_self;   // -R^{-1} B' Pi1
  std::optional<MatrixTrajectory> gain_other;  // -R^{-1} B' Pi2
  std::optional<MatrixTrajectory> offset;      // -R^{-1} B' theta1
};

FeedbackStrategyFiniteN synthesize_strategies(const ReducedSolution& reduced,
                                              const ModelParams& params);

struct BestResponseReport {
  bool certified = false;
  std::optional<Interval> escape_bracket;
  double gain_gap = 0.0;    // sup_t l1 of the gain difference
  double offset_gap = 0.0;  // sup_t l1 of the offset difference
  double gap = 0.0;         // sup_t of their sum
};

/// Fixes players 2..N at `strategy`, solves player 1's LQ problem on the
/// stacked state from scratch and compares its optimal feedback with the
/// strategy's law for player 1.
BestResponseReport best_response_check(const ModelParams& params, int N,
                                       const FeedbackStrategyFiniteN& strategy,
                                       const TimeGrid& grid);

}  // namespace mfg
