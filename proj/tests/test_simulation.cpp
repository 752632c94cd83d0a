#include "doctest.h"

#include "fixtures.hpp"
#include "mfg/rng.hpp"
#include "mfg/simulation.hpp"

#include <cmath>

using namespace mfg;

namespace {

SimulationConfig noisy_config(int N, int reps, std::uint64_t seed) {
  SimulationConfig c;
  c.N = N;
  c.replications = reps;
  c.seed = seed;
  c.initial_means = {Vector::Constant(1, 1.0)};
  c.initial_cov = Matrix::Identity(1, 1);
  c.sde_steps = 400;
  return c;
}

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using rng::Philox4x32;
  const auto z = Philox4x32::generate({0, 0, 0, 0}, {0, 0});
  CHECK(z == Philox4x32::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  const auto f = Philox4x32::generate({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                      {0xffffffffu, 0xffffffffu});
  CHECK(f == Philox4x32::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  const auto pi = Philox4x32::generate({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                       {0xa4093822u, 0x299f31d0u});
  CHECK(pi == Philox4x32::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("standard normals have the right moments and distinct cells") {
  double sum = 0.0, sq = 0.0;
  constexpr int kCount = 200000;
  std::vector<double> z(2);
  for (std::uint32_t i = 0; i < kCount / 2; ++i) {
    rng::standard_normals(99, 0, i, 1, z);
    for (double v : z) {
      sum += v;
      sq += v * v;
    }
  }
  CHECK(std::abs(sum / kCount) < 0.01);
  CHECK(std::abs(sq / kCount - 1.0) < 0.015);
  std::vector<double> a(3), b(3);
  rng::standard_normals(1, 0, 0, 1, a);
  rng::standard_normals(1, 0, 1, 1, b);
  CHECK(a != b);
  rng::standard_normals(1, 0, 0, 1, b);
  CHECK(a == b);
}

TEST_CASE("Xbar") {
  SUBCASE("zero-cost model with x0 = 0 stays at zero") {
    const auto p = fixtures::zero_cost();
    const auto lim = solve_limit(p, TimeGrid(1.0, 100));
    const auto mf = solve_xbar(lim, p, Vector::Zero(1), TimeGrid(1.0, 100));
    for (const auto& v : mf.xbar->values()) CHECK(v(0, 0) == 0.0);
  }
  SUBCASE("no drift keeps x0") {
    auto p = fixtures::zero_cost(2);
    p.A.setZero();
    p.G.setZero();
    p.B.setZero();
    const auto lim = solve_limit(p, TimeGrid(1.0, 50));
    const Vector x0 = Vector::LinSpaced(2, 1.0, 2.0);
    const auto mf = solve_xbar(lim, p, x0, TimeGrid(1.0, 50));
    for (const auto& v : mf.xbar->values()) CHECK(v == Matrix(x0));
  }
  SUBCASE("scalar instance matches the explicit solution") {
    // chi1 = 0 when eta = etaF = 0, so Xbar(T) = x0 exp(int (a + g - m lambda)).
    const auto p = fixtures::solvable_example();
    const TimeGrid grid(3.0, 4000);
    const auto lim = solve_limit(p, grid);
    const auto mf = solve_xbar(lim, p, Vector::Constant(1, 1.5), grid);
    const auto sum = [&](double t) {
      return oracle::scalar_riccati(0.7, 1.0, 0.8, 0.0, 3.0, t);
    };
    const double expo = oracle::simpson([&](double t) { return 1.2 - sum(t); }, 0.0, 3.0, 2000);
    CHECK(std::abs(mf.xbar->at_node(4000)(0, 0) - 1.5 * std::exp(expo)) < 1e-6);
    CHECK(mf.xbar->at_node(0)(0, 0) == 1.5);
  }
}

TEST_CASE("decentralized law uses only limit quantities") {
  const auto p = fixtures::solvable_example(1.0, 0.5);
  const auto lim = solve_limit(p, TimeGrid(3.0, 300));
  const auto s = decentralized_strategy(lim, p);
  for (int k : {0, 150, 300}) {
    CHECK(s.gain_self->at_node(k)(0, 0) == -lim.Lambda1->at_node(k)(0, 0));
    CHECK(s.gain_mf->at_node(k)(0, 0) == -lim.Lambda2->at_node(k)(0, 0));
    CHECK(s.offset->at_node(k)(0, 0) == -lim.chi1->at_node(k)(0, 0));
  }
}

TEST_CASE("D = 0 with identical initial states") {
  const auto p = fixtures::solvable_example(1.0, 0.5);
  SUBCASE("decentralized population tracks Xbar") {
    const TimeGrid grid(3.0, 40000);
    const auto lim = solve_limit(p, grid);
    SimulationConfig c;
    c.N = 5;
    c.replications = 2;
    c.initial_means = {Vector::Constant(1, 1.0)};
    c.sde_steps = 40000;
    const auto r = simulate_population(p, lim, nullptr, c);
    CHECK(r.mf_error_sup.value <= 1e-6);
    CHECK(r.mf_sq_mean[0] == 0.0);
  }
  SUBCASE("centralized agents stay identical") {
    const TimeGrid grid(3.0, 4000);
    const auto lim = solve_limit(p, grid);
    const auto red = solve_reduced(p, 6, grid);
    SimulationConfig c;
    c.N = 6;
    c.initial_means = {Vector::Constant(1, -0.5)};
    c.strategy = StrategyKind::CentralizedFiniteN;
    c.keep_paths = 1;
    c.path_thin = 10;
    const auto r = simulate_population(p, lim, &red, c);
    REQUIRE(r.paths.size() == 1);
    CHECK(r.paths[0].size() == 41);
    CHECK(r.path_times.size() == 41);
    for (const auto& X : r.paths[0]) {
      for (int i = 1; i < 6; ++i) CHECK(X(0, i) == X(0, 0));
    }
  }
}

TEST_CASE("Monte-Carlo standard errors shrink like 1/sqrt(replications)") {
  const auto p = fixtures::solvable_example(1.0, 0.5, 1.0);
  const auto lim = solve_limit(p, TimeGrid(3.0, 4000));
  const auto a = simulate_population(p, lim, nullptr, noisy_config(10, 500, 7));
  const auto b = simulate_population(p, lim, nullptr, noisy_config(10, 2000, 7));
  const double ratio = *a.mf_error_sup.std_error / *b.mf_error_sup.std_error;
  CHECK(ratio > 1.7);
  CHECK(ratio < 2.3);
  CHECK(a.cost_se[3] / b.cost_se[3] > 1.7);
  CHECK(a.cost_se[3] / b.cost_se[3] < 2.3);
}

TEST_CASE("single replication leaves the standard error undefined") {
  const auto p = fixtures::solvable_example(0.0, 0.0, 1.0);
  const auto lim = solve_limit(p, TimeGrid(3.0, 400));
  const auto r = simulate_population(p, lim, nullptr, noisy_config(4, 1, 3));
  CHECK_FALSE(r.mf_error_sup.std_error.has_value());
  CHECK(std::isnan(r.cost_se[0]));
  CHECK(r.mf_error_sup.value >= 0.0);
}

TEST_CASE("identical configs give bit-identical results") {
  const auto p = fixtures::solvable_example(1.0, 0.5, 1.0);
  const TimeGrid grid(3.0, 4000);
  const auto lim = solve_limit(p, grid);
  const auto red = solve_reduced(p, 8, grid);
  auto c = noisy_config(8, 64, 12345);
  c.strategy = StrategyKind::CentralizedFiniteN;
  const auto a = simulate_population(p, lim, &red, c);
  const auto b = simulate_population(p, lim, &red, c);
  CHECK(a.mf_sq_mean == b.mf_sq_mean);
  CHECK(a.mf_sq_var == b.mf_sq_var);
  CHECK(a.cost_mean == b.cost_mean);
  CHECK(a.replication_costs == b.replication_costs);
  c.seed = 12346;
  const auto d = simulate_population(p, lim, &red, c);
  CHECK(d.cost_mean != a.cost_mean);
}

TEST_CASE("relabeling agents permutes their costs") {
  const auto p = fixtures::solvable_example(1.0, 0.5, 1.0);
  const TimeGrid grid(3.0, 4000);
  const auto lim = solve_limit(p, grid);
  const auto red = solve_reduced(p, 4, grid);
  auto c = noisy_config(4, 50, 77);
  c.strategy = StrategyKind::CentralizedFiniteN;
  c.initial_means = {Vector::Constant(1, -1.0), Vector::Constant(1, 0.0),
                     Vector::Constant(1, 0.5), Vector::Constant(1, 2.0)};
  const auto a = simulate_population(p, lim, &red, c);
  const std::vector<int> perm{2, 0, 3, 1};  // new label i holds old agent perm[i]
  auto c2 = c;
  c2.agent_streams.clear();
  for (int i = 0; i < 4; ++i) {
    c2.initial_means[static_cast<std::size_t>(i)] = c.initial_means[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    c2.agent_streams.push_back(static_cast<std::uint32_t>(perm[static_cast<std::size_t>(i)]));
  }
  const auto b = simulate_population(p, lim, &red, c2);
  for (int i = 0; i < 4; ++i) {
    CHECK(b.cost_mean[static_cast<std::size_t>(i)] ==
          doctest::Approx(a.cost_mean[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]).epsilon(1e-12));
  }
  CHECK(b.mf_error_sup.value == doctest::Approx(a.mf_error_sup.value).epsilon(1e-12));
}

TEST_CASE("non-finite states flag the replication") {
  const auto p = fixtures::solvable_example(1.0, 0.5, 1.0);
  const TimeGrid grid(3.0, 400);
  const auto lim = solve_limit(p, grid);
  auto red = solve_reduced(p, 3, grid);
  std::vector<Matrix> pi = red.Pi1->values();
  pi[200](0, 0) = std::nan("");
  red.Pi1.emplace(grid, 0, pi);
  auto c = noisy_config(3, 4, 1);
  c.strategy = StrategyKind::CentralizedFiniteN;
  const auto r = simulate_population(p, lim, &red, c);
  CHECK(r.used == 0);
  CHECK(r.flagged == std::vector<int>{0, 1, 2, 3});
  CHECK(std::isnan(r.mf_error_sup.value));
  CHECK(std::isnan(r.replication_costs(2, 1)));
}

TEST_CASE("simulation preconditions") {
  const auto p = fixtures::solvable_example();
  const auto lim = solve_limit(p, TimeGrid(3.0, 400));
  auto c = noisy_config(3, 2, 1);
  c.sde_steps = 300;
  CHECK_THROWS_AS(simulate_population(p, lim, nullptr, c), ModelError);
  c.sde_steps = 400;
  c.replications = 0;
  CHECK_THROWS_AS(simulate_population(p, lim, nullptr, c), ModelError);
  c.replications = 2;
  c.strategy = StrategyKind::CentralizedFiniteN;
  CHECK_THROWS_AS(simulate_population(p, lim, nullptr, c), std::logic_error);
  c.strategy = StrategyKind::Decentralized;
  c.initial_cov = -Matrix::Identity(1, 1);
  CHECK_THROWS_AS(simulate_population(p, lim, nullptr, c), ModelError);
}

TEST_CASE("Euler-Maruyama step doubling stays within Monte-Carlo noise") {
  const auto p = fixtures::solvable_example(1.0, 0.5, 1.0);
  const auto lim = solve_limit(p, TimeGrid(3.0, 4000));
  auto c = noisy_config(10, 2000, 99);
  c.sde_steps = 200;
  const auto a = simulate_population(p, lim, nullptr, c);
  c.sde_steps = 400;
  const auto b = simulate_population(p, lim, nullptr, c);
  const double se = std::max(*a.mf_error_sup.std_error, *b.mf_error_sup.std_error);
  CHECK(std::abs(a.mf_error_sup.value - b.mf_error_sup.value) < se);
}

TEST_CASE("strategy comparison") {
  SUBCASE("decoupled strategies coincide") {
    const auto cmp = compare_strategies(fixtures::decoupled(1), 5, TimeGrid(1.0, 400),
                                        noisy_config(5, 20, 5));
    CHECK(cmp.paired == 20);
    for (double g : cmp.gap_mean) CHECK(std::abs(g) <= 1e-8);
  }
  SUBCASE("zero-cost model costs nothing") {
    const auto cmp = compare_strategies(fixtures::zero_cost(), 4, TimeGrid(1.0, 400),
                                        noisy_config(4, 10, 5));
    for (double v : cmp.centralized.cost_mean) CHECK(v == 0.0);
    for (double v : cmp.decentralized.cost_mean) CHECK(v == 0.0);
  }
  SUBCASE("gap shrinks from N = 10 to N = 40") {
    const auto p = fixtures::solvable_example(1.0, 0.5, 1.0);
    const TimeGrid grid(3.0, 4000);
    const auto small = compare_strategies(p, 10, grid, noisy_config(10, 400, 31));
    const auto large = compare_strategies(p, 40, grid, noisy_config(40, 400, 31));
    CHECK(std::abs(large.mean_gap) < std::abs(small.mean_gap));
  }
  SUBCASE("not solvable model is refused") {
    CHECK_THROWS_AS(compare_strategies(fixtures::escaping_example(), 5, TimeGrid(3.0, 400),
                                       noisy_config(5, 2, 1)),
                    NotSolvableError);
  }
}
