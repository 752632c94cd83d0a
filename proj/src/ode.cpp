#include "mfg/ode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace mfg {

namespace {

State zeros_like(const State& y) {
  State out;
  out.reserve(y.size());
  for (const auto& m : y) out.push_back(Matrix::Zero(m.rows(), m.cols()));
  return out;
}

// One RK4 step of signed length dt starting at (t, y), in place. Backward
// integration in t is forward integration in s = T - t of
// dy/ds = -f(T - s, y); passing dt = -h is that substitution.
class Rk4Stepper {
 public:
  Rk4Stepper(const Rhs& rhs, const State& shape_of)
      : rhs_(rhs),
        k1_(zeros_like(shape_of)),
        k2_(zeros_like(shape_of)),
        k3_(zeros_like(shape_of)),
        k4_(zeros_like(shape_of)),
        tmp_(zeros_like(shape_of)) {}

  void step(double t, double dt, State& y) {
    const std::size_t m = y.size();
    rhs_(t, y, k1_);
    for (std::size_t i = 0; i < m; ++i) tmp_[i] = y[i] + (0.5 * dt) * k1_[i];
    rhs_(t + 0.5 * dt, tmp_, k2_);
    for (std::size_t i = 0; i < m; ++i) tmp_[i] = y[i] + (0.5 * dt) * k2_[i];
    rhs_(t + 0.5 * dt, tmp_, k3_);
    for (std::size_t i = 0; i < m; ++i) tmp_[i] = y[i] + dt * k3_[i];
    rhs_(t + dt, tmp_, k4_);
    for (std::size_t i = 0; i < m; ++i) {
      y[i] += (dt / 6.0) * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
    }
  }

 private:
  const Rhs& rhs_;
  State k1_, k2_, k3_, k4_, tmp_;
};

// Index of the first component that is non-finite or above threshold, or -1.
int tripped_component(const State& y, double threshold) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!y[i].allFinite() || l1_norm(y[i]) > threshold) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

void check_shapes(const OdeSystem& system) {
  if (system.terminal_state.empty()) {
    throw std::invalid_argument("ode: empty state");
  }
  if (system.state_shape.size() != system.terminal_state.size()) {
    throw std::invalid_argument("ode: state_shape does not match terminal");
  }
  for (std::size_t i = 0; i < system.terminal_state.size(); ++i) {
    const auto& m = system.terminal_state[i];
    if (m.rows() != system.state_shape[i].rows ||
        m.cols() != system.state_shape[i].cols) {
      throw std::invalid_argument("ode: terminal component " +
                                  std::to_string(i) + " has wrong shape");
    }
  }
}

}  // namespace

OdeSystem OdeSystem::from_terminal(State terminal, Rhs rhs) {
  OdeSystem sys;
  sys.state_shape.reserve(terminal.size());
  for (const auto& m : terminal) sys.state_shape.push_back({m.rows(), m.cols()});
  sys.terminal_state = std::move(terminal);
  sys.rhs = std::move(rhs);
  return sys;
}

MatrixTrajectory::MatrixTrajectory(TimeGrid grid, int first_node,
                                   std::vector<Matrix> values)
    : grid_(grid), first_node_(first_node), values_(std::move(values)) {
  if (first_node_ < 0 || first_node_ > grid_.num_steps() ||
      static_cast<int>(values_.size()) != grid_.num_steps() - first_node_ + 1) {
    throw std::invalid_argument("trajectory: node count does not match grid");
  }
  for (const auto& v : values_) {
    if (v.rows() != values_.front().rows() ||
        v.cols() != values_.front().cols()) {
      throw std::invalid_argument("trajectory: inconsistent matrix shapes");
    }
  }
}

const Matrix& MatrixTrajectory::at_node(int k) const {
  if (!has_node(k)) {
    throw std::out_of_range("trajectory: node " + std::to_string(k) +
                            " not stored");
  }
  return values_[static_cast<std::size_t>(k - first_node_)];
}

State IntegrationOutcome::state_at_node(int k) const {
  State out;
  out.reserve(trajectory.size());
  for (const auto& tr : trajectory) out.push_back(tr.at_node(k));
  return out;
}

IntegrationOutcome integrate_backward(const OdeSystem& system,
                                      const TimeGrid& grid,
                                      double blowup_threshold) {
  check_shapes(system);
  for (const auto& m : system.terminal_state) {
    if (!m.allFinite()) {
      throw std::invalid_argument("ode: non-finite terminal state");
    }
    if (!(l1_norm(m) < blowup_threshold)) {
      throw std::invalid_argument(
          "ode: blow-up threshold must exceed the terminal norm");
    }
  }

  const int K = grid.num_steps();
  const double h = grid.step();
  const std::size_t m = system.terminal_state.size();

  // Nodes are collected from t_K downward and reversed at the end.
  std::vector<std::vector<Matrix>> rev(m);
  for (auto& r : rev) r.reserve(static_cast<std::size_t>(K) + 1);

  State y = system.terminal_state;
  for (std::size_t i = 0; i < m; ++i) rev[i].push_back(y[i]);

  Rk4Stepper stepper(system.rhs, y);
  IntegrationOutcome out;
  out.threshold = blowup_threshold;
  int last_valid = K;
  for (int k = K; k > 0; --k) {
    State next = y;
    stepper.step(grid.node(k), -h, next);
    const int bad = tripped_component(next, blowup_threshold);
    if (bad >= 0) {
      out.status = Status::Escaped;
      out.escaped_component = bad;
      out.escape_bracket = Interval{grid.node(k - 1), grid.node(k)};
      break;
    }
    y = std::move(next);
    last_valid = k - 1;
    for (std::size_t i = 0; i < m; ++i) rev[i].push_back(y[i]);
  }

  out.trajectory.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::reverse(rev[i].begin(), rev[i].end());
    out.trajectory.emplace_back(grid, last_valid, std::move(rev[i]));
  }
  return out;
}

std::vector<MatrixTrajectory> integrate_forward(const Rhs& rhs,
                                                const State& initial,
                                                const TimeGrid& grid) {
  const int K = grid.num_steps();
  const double h = grid.step();
  const std::size_t m = initial.size();
  std::vector<std::vector<Matrix>> nodes(m);
  for (auto& v : nodes) v.reserve(static_cast<std::size_t>(K) + 1);

  State y = initial;
  for (std::size_t i = 0; i < m; ++i) nodes[i].push_back(y[i]);
  Rk4Stepper stepper(rhs, y);
  for (int k = 0; k < K; ++k) {
    stepper.step(grid.node(k), h, y);
    for (std::size_t i = 0; i < m; ++i) {
      if (!y[i].allFinite()) {
        throw std::runtime_error("ode: non-finite value in forward integration");
      }
      nodes[i].push_back(y[i]);
    }
  }
  std::vector<MatrixTrajectory> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.emplace_back(grid, 0, std::move(nodes[i]));
  }
  return out;
}

EscapeBracket bracket_escape_time(const OdeSystem& system,
                                  const IntegrationOutcome& coarse,
                                  int refinements) {
  if (coarse.completed() || !coarse.escape_bracket) {
    throw std::logic_error(
        "bracket_escape_time: integration did not escape");
  }
  if (refinements < 0) {
    throw std::invalid_argument("bracket_escape_time: negative refinements");
  }

  const TimeGrid& grid = coarse.grid();
  const double T = grid.horizon();
  const double threshold = coarse.threshold;

  EscapeBracket result;
  result.interval = *coarse.escape_bracket;
  result.history.push_back(result.interval);
  result.final_step = grid.step();

  // Positions are tracked as integer offsets back from T in units of the
  // current step so that refined nodes coincide with coarse ones exactly.
  std::int64_t hi_index = grid.num_steps() - coarse.first_valid_node();
  std::int64_t units_per_coarse = 1;
  double step = grid.step();
  State y_hi = coarse.state_at_node(coarse.first_valid_node());
  Rk4Stepper stepper(system.rhs, y_hi);

  auto time_of = [&](std::int64_t index, double dt) {
    return T - static_cast<double>(index) * dt;
  };

  for (int level = 1; level <= refinements; ++level) {
    step *= 0.5;
    hi_index *= 2;
    units_per_coarse *= 2;
    const std::int64_t lo_index = hi_index + 2;  // previous bracket's lower end
    const std::int64_t max_index =
        static_cast<std::int64_t>(grid.num_steps()) * units_per_coarse;

    State y = y_hi;
    std::int64_t idx = hi_index;
    bool crossed = false;
    while (idx < max_index) {
      State next = y;
      stepper.step(time_of(idx, step), -step, next);
      if (tripped_component(next, threshold) >= 0) {
        crossed = true;
        break;
      }
      y = std::move(next);
      ++idx;
    }

    if (crossed && idx + 1 <= lo_index) {
      hi_index = idx;
      y_hi = std::move(y);
      result.interval = Interval{time_of(idx + 1, step), time_of(idx, step)};
      result.history.push_back(result.interval);
      result.refinements_done = level;
      result.final_step = step;
      continue;
    }

    // The finer run went past the previous lower end: the crossing depends
    // on the threshold at this resolution.
    result.confirmed = false;
    const double prev_hi = result.interval.hi;
    const double new_lo = crossed ? time_of(idx + 1, step) : 0.0;
    result.interval = Interval{std::min(new_lo, result.interval.lo), prev_hi};
    result.history.push_back(result.interval);
    result.final_step = step;
    break;
  }
  return result;
}

namespace {

// Returns t clamped into the stored span; queries further out than a few
// ulps of the horizon are errors.
double check_query(const MatrixTrajectory& traj, double t) {
  const double lo = traj.start_time();
  const double hi = traj.grid().horizon();
  const double slack = 64.0 * std::numeric_limits<double>::epsilon() * hi;
  if (!(t >= lo - slack && t <= hi + slack)) {
    throw std::out_of_range("trajectory: t = " + std::to_string(t) +
                            " outside stored span");
  }
  return std::clamp(t, lo, hi);
}

// Node index k with t in [t_k, t_{k+1}], clamped to the stored span.
int locate(const MatrixTrajectory& traj, double t) {
  const TimeGrid& g = traj.grid();
  int k = static_cast<int>(std::floor(t / g.step()));
  k = std::clamp(k, traj.first_node(), g.num_steps() - 1);
  return std::max(k, traj.first_node());
}

}  // namespace

Matrix eval_trajectory(const MatrixTrajectory& traj, double t) {
  t = check_query(traj, t);
  const TimeGrid& g = traj.grid();
  if (traj.first_node() == g.num_steps()) return traj.at_node(g.num_steps());
  const int k = locate(traj, t);
  const double t0 = g.node(k);
  const double t1 = g.node(k + 1);
  if (t == t0) return traj.at_node(k);
  if (t == t1) return traj.at_node(k + 1);
  const double w = (t - t0) / (t1 - t0);
  return (1.0 - w) * traj.at_node(k) + w * traj.at_node(k + 1);
}

namespace {

void cubic_into(const MatrixTrajectory& traj, double t, Matrix& out) {
  const TimeGrid& g = traj.grid();
  const int stored = g.num_steps() - traj.first_node() + 1;
  if (stored < 4) {
    out = eval_trajectory(traj, t);
    return;
  }
  const int k = locate(traj, t);
  if (t == g.node(k)) {
    out = traj.at_node(k);
    return;
  }
  const int i0 = std::clamp(k - 1, traj.first_node(), g.num_steps() - 3);
  const double x = (t - g.node(i0)) / g.step();
  // Lagrange basis on the nodes x = 0, 1, 2, 3.
  const double w0 = -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0;
  const double w1 = x * (x - 2.0) * (x - 3.0) / 2.0;
  const double w2 = -x * (x - 1.0) * (x - 3.0) / 2.0;
  const double w3 = x * (x - 1.0) * (x - 2.0) / 6.0;
  out = w0 * traj.at_node(i0) + w1 * traj.at_node(i0 + 1) +
        w2 * traj.at_node(i0 + 2) + w3 * traj.at_node(i0 + 3);
}

}  // namespace

Matrix eval_trajectory_cubic(const MatrixTrajectory& traj, double t) {
  t = check_query(traj, t);
  Matrix out;
  cubic_into(traj, t, out);
  return out;
}

CubicSampler::CubicSampler(const std::vector<const MatrixTrajectory*>& sources)
    : sources_(sources),
      values_(sources.size()),
      last_t_(std::numeric_limits<double>::quiet_NaN()) {}

const State& CubicSampler::at(double t) {
  if (t == last_t_) return values_;
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    cubic_into(*sources_[i], check_query(*sources_[i], t), values_[i]);
  }
  last_t_ = t;
  return values_;
}

}  // namespace mfg
