#include "doctest.h"

#include "fixtures.hpp"
#include "mfg/limit.hpp"
#include "mfg/ode.hpp"

#include <cmath>

using namespace mfg;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

// y' = y, y(1) = 1, so y(t) = exp(t - 1).
OdeSystem exponential() {
  return OdeSystem::from_terminal({scalar(1.0)},
                                  [](double, const State& y, State& dy) {
                                    dy[0] = y[0];
                                  });
}

// y' = -y^2, y(2) = 1, so y(t) = 1/(t - 1) with a pole at t = 1.
OdeSystem inverse_pole() {
  return OdeSystem::from_terminal({scalar(1.0)},
                                  [](double, const State& y, State& dy) {
                                    dy[0] = -(y[0] * y[0]);
                                  });
}

// y' = y^2 - 2 a y - q with a = 0.2, q = 1 (the scalar Lambda1 equation).
OdeSystem scalar_riccati(double yT) {
  return OdeSystem::from_terminal(
      {scalar(yT)}, [](double, const State& y, State& dy) {
        const double v = y[0](0, 0);
        dy[0](0, 0) = v * v - 0.4 * v - 1.0;
      });
}

double error_at_zero(const OdeSystem& sys, double T, int K,
                     double exact) {
  const auto out = integrate_backward(sys, TimeGrid(T, K));
  REQUIRE(out.completed());
  return std::abs(out.trajectory[0].at_node(0)(0, 0) - exact);
}

}  // namespace

TEST_CASE("backward RK4 reproduces exp(t - 1)") {
  const auto out = integrate_backward(exponential(), TimeGrid(1.0, 1000));
  REQUIRE(out.completed());
  CHECK_FALSE(out.escape_bracket.has_value());
  CHECK(out.escaped_component == -1);
  CHECK(std::abs(out.trajectory[0].at_node(0)(0, 0) - std::exp(-1.0)) < 1e-8);
  CHECK(out.trajectory[0].at_node(1000)(0, 0) == 1.0);
}

TEST_CASE("RK4 error ratio under halving lies in [8, 32]") {
  const double e1 = error_at_zero(exponential(), 1.0, 20, std::exp(-1.0));
  const double e2 = error_at_zero(exponential(), 1.0, 40, std::exp(-1.0));
  CHECK(e1 / e2 >= 8.0);
  CHECK(e1 / e2 <= 32.0);

  const double exact = oracle::scalar_riccati(0.2, 1.0, 1.0, 0.0, 3.0, 0.0);
  const double r1 = error_at_zero(scalar_riccati(0.0), 3.0, 25, exact);
  const double r2 = error_at_zero(scalar_riccati(0.0), 3.0, 50, exact);
  CHECK(r1 / r2 >= 8.0);
  CHECK(r1 / r2 <= 32.0);
}

TEST_CASE("y' = -y^2 escapes at t = 1 going backward from t = 2") {
  const auto sys = inverse_pole();
  const auto out = integrate_backward(sys, TimeGrid(2.0, 2000));
  REQUIRE_FALSE(out.completed());
  REQUIRE(out.escape_bracket.has_value());
  CHECK(out.escaped_component == 0);
  const Interval b = *out.escape_bracket;
  CHECK(b.lo <= 1.0);
  CHECK(b.hi >= 1.0);
  CHECK(b.width() <= 1e-3 + 1e-15);
  // Values before the escape follow 1/(t - 1).
  const int k = out.first_valid_node();
  const double t = out.grid().node(k);
  CHECK(std::abs(l1_norm(out.trajectory[0].at_node(k))) <= kDefaultBlowupThreshold);
  CHECK(out.trajectory[0].at_node(1500)(0, 0) ==
        doctest::Approx(1.0 / (1.5 - 1.0)).epsilon(1e-9));
  CHECK(t >= 1.0);
  CHECK_THROWS_AS(out.trajectory[0].at_node(k - 1), std::out_of_range);
}

TEST_CASE("one refinement keeps the pole of 1/(t - 1) inside a 1e-3 bracket") {
  const auto sys = inverse_pole();
  const auto coarse = integrate_backward(sys, TimeGrid(2.0, 2000));
  const auto br = bracket_escape_time(sys, coarse, 1);
  CHECK(br.confirmed);
  CHECK(br.interval.lo <= 1.0);
  CHECK(br.interval.hi >= 1.0);
  CHECK(br.interval.width() <= 1e-3);
}

TEST_CASE("escape bracket refinement nests and shrinks") {
  const auto sys = inverse_pole();
  const auto coarse = integrate_backward(sys, TimeGrid(2.0, 200));
  REQUIRE_FALSE(coarse.completed());
  const auto br = bracket_escape_time(sys, coarse, 10);
  CHECK(br.confirmed);
  CHECK(br.refinements_done == 10);
  REQUIRE(br.history.size() == 11);
  for (std::size_t i = 1; i < br.history.size(); ++i) {
    CHECK(br.history[i - 1].contains(br.history[i]));
    CHECK(br.history[i].width() ==
          doctest::Approx(0.5 * br.history[i - 1].width()));
  }
  // Deep refinements localize the discrete trajectory's escape, which the
  // coarse restart value shifts by less than one coarse step.
  CHECK(br.interval.hi <= 1.0);
  CHECK(br.interval.lo >= 1.0 - 0.01);
  CHECK(br.interval.width() < 2e-5);
  CHECK(br.final_step == doctest::Approx(0.01 / 1024));

  CHECK_THROWS_AS(
      bracket_escape_time(exponential(),
                          integrate_backward(exponential(), TimeGrid(1.0, 10)), 2),
      std::logic_error);
}

TEST_CASE("escape of the limit system nests from K = 4000 to K = 8000") {
  const auto sys = limit_riccati_system(fixtures::escaping_example());
  const auto c = integrate_backward(sys, TimeGrid(3.0, 4000));
  const auto f = integrate_backward(sys, TimeGrid(3.0, 8000));
  REQUIRE_FALSE(c.completed());
  REQUIRE_FALSE(f.completed());
  CHECK(c.escaped_component == 1);
  CHECK(c.escape_bracket->contains(*f.escape_bracket));
  const double pole = oracle::lambda_sum_oracle(fixtures::escaping_example()).pole();
  CHECK(c.escape_bracket->lo <= pole);
  CHECK(c.escape_bracket->hi >= pole - 1e-3);
}

TEST_CASE("escape is monotone in the threshold") {
  const auto sys = inverse_pole();
  const TimeGrid grid(2.0, 2000);
  double prev = 2.0;
  for (double thr : {1e2, 1e4, 1e6, 1e8}) {
    const auto out = integrate_backward(sys, grid, thr);
    REQUIRE_FALSE(out.completed());
    CHECK(out.escape_bracket->lo <= prev);
    prev = out.escape_bracket->lo;
  }
}

TEST_CASE("integrate_backward rejects bad input") {
  auto sys = exponential();
  sys.terminal_state[0](0, 0) = std::nan("");
  CHECK_THROWS_AS(integrate_backward(sys, TimeGrid(1.0, 10)), std::invalid_argument);
  CHECK_THROWS_AS(integrate_backward(exponential(), TimeGrid(1.0, 10), 0.5),
                  std::invalid_argument);
}

TEST_CASE("integration is deterministic") {
  const auto sys = limit_riccati_system(fixtures::solvable_example(1.0, 0.5));
  const auto a = integrate_backward(sys, TimeGrid(3.0, 500));
  const auto b = integrate_backward(sys, TimeGrid(3.0, 500));
  for (int k = 0; k <= 500; ++k) {
    CHECK(a.trajectory[1].at_node(k) == b.trajectory[1].at_node(k));
  }
}

TEST_CASE("forward RK4 and interpolation") {
  const TimeGrid grid(1.0, 100);
  const auto traj = integrate_forward(
      [](double, const State& y, State& dy) { dy[0] = y[0]; }, {scalar(1.0)}, grid);
  REQUIRE(traj.size() == 1);
  CHECK(traj[0].at_node(100)(0, 0) == doctest::Approx(std::exp(1.0)).epsilon(1e-9));
  // Exact at nodes, fourth order between them.
  CHECK(eval_trajectory(traj[0], grid.node(37))(0, 0) == traj[0].at_node(37)(0, 0));
  const double t = 0.375;
  CHECK(std::abs(eval_trajectory_cubic(traj[0], t)(0, 0) - std::exp(t)) < 1e-8);
  CHECK(std::abs(eval_trajectory(traj[0], t)(0, 0) - std::exp(t)) < 1e-4);
  CHECK_THROWS_AS(eval_trajectory(traj[0], 1.5), std::out_of_range);

  CHECK_THROWS_AS(
      integrate_forward([](double, const State& y, State& dy) { dy[0] = y[0] * 1e300; },
                        {scalar(1.0)}, grid),
      std::runtime_error);
}

TEST_CASE("matrix-valued RK4 matches the matrix exponential") {
  Matrix a(2, 2);
  a << 0.1, 0.4, -0.3, 0.2;
  const auto sys = OdeSystem::from_terminal(
      {Matrix::Identity(2, 2)},
      [a](double, const State& y, State& dy) { dy[0] = a * y[0]; });
  const auto out = integrate_backward(sys, TimeGrid(1.0, 200));
  const Matrix expect = (Matrix(a * -1.0)).exp();
  CHECK((out.trajectory[0].at_node(0) - expect).cwiseAbs().maxCoeff() < 1e-9);
}
