#pragma once

#include "mfg/core.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace mfg {

inline constexpr double kDefaultBlowupThreshold = 1e8;
inline constexpr int kDefaultSteps = 4000;

/// The state of every system here is a tuple of dense matrices.
using State = std::vector<Matrix>;

/// dydt = f(t, y); dydt arrives already shaped like y.
using Rhs = std::function<void(double t, const State& y, State& dydt)>;

struct Shape {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

/// A matrix ODE posed backward from a terminal condition at t = T.
struct OdeSystem {
  std::vector<Shape> state_shape;
  Rhs rhs;
  State terminal_state;

  /// Fills state_shape from terminal_state.
  static OdeSystem from_terminal(State terminal, Rhs rhs);
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  bool contains(const Interval& inner) const {
    return lo <= inner.lo && inner.hi <= hi;
  }
  bool overlaps(const Interval& other) const {
    return lo <= other.hi && other.lo <= hi;
  }
};

/// Values of one state component on the nodes k = first_node..K of a grid.
/// first_node > 0 marks a trajectory cut short by an escape.
class MatrixTrajectory {
 public:
  MatrixTrajectory(TimeGrid grid, int first_node, std::vector<Matrix> values);

  const TimeGrid& grid() const { return grid_; }
  int first_node() const { return first_node_; }
  bool complete() const { return first_node_ == 0; }
  Eigen::Index rows() const { return values_.front().rows(); }
  Eigen::Index cols() const { return values_.front().cols(); }
  const std::vector<Matrix>& values() const { return values_; }

  /// Value at grid node k (absolute index). Throws std::out_of_range when
  /// k is not stored.
  const Matrix& at_node(int k) const;
  bool has_node(int k) const {
    return k >= first_node_ && k <= grid_.num_steps();
  }

  /// Earliest time with a stored value.
  double start_time() const { return grid_.node(first_node_); }

 private:
  TimeGrid grid_;
  int first_node_;
  std::vector<Matrix> values_;
};

enum class Status { Completed, Escaped };

struct IntegrationOutcome {
  Status status = Status::Completed;
  /// One trajectory per state component, all with the same first_node.
  std::vector<MatrixTrajectory> trajectory;
  /// Forward-time interval whose lower end is the first node where a
  /// component became non-finite or exceeded the threshold in l1 norm.
  std::optional<Interval> escape_bracket;
  /// Component that tripped the detector, -1 when completed.
  int escaped_component = -1;
  double threshold = kDefaultBlowupThreshold;

  bool completed() const { return status == Status::Completed; }
  const TimeGrid& grid() const { return trajectory.front().grid(); }
  /// Last node that passed the detector.
  int first_valid_node() const { return trajectory.front().first_node(); }
  State state_at_node(int k) const;
};

/// Classic RK4 backward from t = T to t = 0 on the grid. Throws
/// std::invalid_argument for a non-finite terminal state or a threshold not
/// above the terminal norms.
IntegrationOutcome integrate_backward(
    const OdeSystem& system, const TimeGrid& grid,
    double blowup_threshold = kDefaultBlowupThreshold);

/// Classic RK4 forward from `initial` at t = 0. No blow-up detection; a
/// non-finite node throws std::runtime_error.
std::vector<MatrixTrajectory> integrate_forward(const Rhs& rhs,
                                                const State& initial,
                                                const TimeGrid& grid);

struct EscapeBracket {
  Interval interval;
  /// False if a refinement ran through the previous bracket without
  /// crossing; interval is then widened to cover both runs.
  bool confirmed = true;
  int refinements_done = 0;
  double final_step = 0.0;
  /// Bracket after each level, coarse first.
  std::vector<Interval> history;
};

/// Localizes the first threshold crossing by restarting from the last valid
/// node with the step halved, `refinements` times. Each new bracket lies
/// inside the previous one. Throws std::logic_error if `coarse` completed.
EscapeBracket bracket_escape_time(const OdeSystem& system,
                                  const IntegrationOutcome& coarse,
                                  int refinements);

/// Piecewise-linear evaluation; exact at nodes. Throws std::out_of_range
/// outside the stored span.
Matrix eval_trajectory(const MatrixTrajectory& traj, double t);

/// Four-point Lagrange interpolation (fourth order). Used to feed stored
/// trajectories into RK4 stages at half steps.
Matrix eval_trajectory_cubic(const MatrixTrajectory& traj, double t);

/// Cubic samplers for a bundle of trajectories, with reusable storage.
class CubicSampler {
 public:
  explicit CubicSampler(const std::vector<const MatrixTrajectory*>& sources);
  /// Refreshes the sampled values at t; returns them in source order.
  const State& at(double t);

 private:
  std::vector<const MatrixTrajectory*> sources_;
  State values_;
  double last_t_;
};

}  // namespace mfg
