#include "doctest.h"

#include "equivalence.hpp"
#include "fixtures.hpp"
#include "mfg/finite_n.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <random>

using namespace mfg;

namespace {

// K_1f = e_1' (x) I - (1/N) 1' (x) GammaF, built with Kronecker products.
Matrix terminal_P1(const ModelParams& p, int N) {
  const Eigen::Index n = p.A.rows();
  Matrix e1 = Matrix::Zero(1, N);
  e1(0, 0) = 1.0;
  const Matrix ones = Matrix::Ones(1, N);
  const Matrix K = Eigen::kroneckerProduct(e1, Matrix::Identity(n, n)).eval() -
                   Eigen::kroneckerProduct(ones, p.GammaF).eval() / N;
  return K.transpose() * p.Qf * K;
}

}  // namespace

TEST_CASE("exchange matrix is a symmetric involution") {
  const Matrix J = exchange_matrix(4, 2, 1, 3);
  CHECK(J == J.transpose());
  CHECK((J * J - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(J(2, 6) == 1.0);
  CHECK(exchange_matrix(3, 1, 0, 0) == Matrix::Identity(3, 3));
  CHECK_THROWS_AS(exchange_matrix(3, 1, 0, 3), std::out_of_range);
}

TEST_CASE("assembled terminal P_1 equals K_1f' Qf K_1f") {
  std::mt19937_64 gen(3);
  for (int N : {2, 3, 5}) {
    const auto p = fixtures::random_coupled(gen, 2, 0.5);
    const auto red = solve_reduced(p, N, TimeGrid(0.5, 50));
    REQUIRE(red.completed());
    const Matrix got = assemble_P1(red, 0.5);
    CHECK((got - terminal_P1(p, N)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("reduced and full solvers agree on the escaping example at T = 0.5") {
  auto p = fixtures::escaping_example();
  p.T = 0.5;
  const TimeGrid grid(0.5, 500);
  const auto full = solve_full_oracle(p, 3, grid);
  const auto red = solve_reduced(p, 3, grid);
  REQUIRE(full.completed());
  REQUIRE(red.completed());
  const auto d = testing::compare(red, full);
  CHECK(d.P < 1e-8);
  CHECK(d.theta < 1e-8);
  CHECK(d.r < 1e-8);
}

TEST_CASE("reduced and full solvers agree on random instances with forcing") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 4; ++trial) {
    const int n = 1 + trial % 2;
    const int N = trial < 2 ? 2 : 4;
    const auto p = fixtures::random_coupled(gen, n, 0.8, n, 1);
    const TimeGrid grid(0.8, 400);
    const auto full = solve_full_oracle(p, N, grid);
    const auto red = solve_reduced(p, N, grid);
    REQUIRE(full.completed());
    REQUIRE(red.completed());
    const auto d = testing::compare(red, full);
    CHECK(d.P < 1e-8);
    CHECK(d.theta < 1e-8);
    CHECK(d.r < 1e-8);
  }
}

TEST_CASE("representation invariants hold on a random n = 2, N = 3 instance") {
  std::mt19937_64 gen(23);
  const auto p = fixtures::random_coupled(gen, 2, 1.0, 2, 2);
  const auto full = solve_full_oracle(p, 3, TimeGrid(1.0, 400));
  REQUIRE(full.completed());
  const auto rep = check_representation(full, 1e-7);
  CHECK(rep.ok());
  CHECK(rep.max_pi3_pi4 < 1e-8);
  CHECK(rep.max_exchange < 1e-10);
}

TEST_CASE("full oracle is equivariant under relabeling players") {
  std::mt19937_64 gen(29);
  const auto p = fixtures::random_coupled(gen, 1, 0.6);
  const auto full = solve_full_oracle(p, 4, TimeGrid(0.6, 120));
  REQUIRE(full.completed());
  const Matrix J = exchange_matrix(4, 1, 1, 2);
  for (int k : {0, 60, 120}) {
    // Swapping players 2 and 3 maps P_2 to P_3 and fixes P_1.
    CHECK((J.transpose() * full.P[1].at_node(k) * J - full.P[2].at_node(k))
              .cwiseAbs().maxCoeff() < 1e-12);
    CHECK((J.transpose() * full.P[0].at_node(k) * J - full.P[0].at_node(k))
              .cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("check_representation flags a corrupted solution") {
  auto p = fixtures::escaping_example();
  p.T = 0.3;
  auto full = solve_full_oracle(p, 3, TimeGrid(0.3, 30));
  REQUIRE(full.completed());
  std::vector<Matrix> vals = full.P[2].values();
  vals[10](0, 0) += 1e-3;
  full.P[2] = MatrixTrajectory(full.P[2].grid(), 0, vals);
  const auto rep = check_representation(full, 1e-7);
  REQUIRE_FALSE(rep.ok());
  CHECK(rep.violations.front().what == "exchange");
  CHECK(rep.violations.front().player == 2);
  CHECK(rep.violations.front().node == 10);
}

TEST_CASE("reduced solver reports a threshold crossing as an escape") {
  const auto p = fixtures::escaping_example();
  const auto red = solve_reduced(p, 50, TimeGrid(3.0, 3000), 1.0);
  CHECK_FALSE(red.completed());
  REQUIRE(red.escape_bracket.has_value());
  CHECK(red.escape_bracket->lo > 0.0);
  CHECK(red.escape_bracket->hi < 3.0);
  CHECK(red.partial.size() == 4);
  CHECK_FALSE(red.Pi1.has_value());
  CHECK_THROWS_AS(finite_n_norm_stat(red), std::logic_error);
}

TEST_CASE("rescaled norm statistic keeps growing with N on the escaping example") {
  const auto p = fixtures::escaping_example();
  const TimeGrid grid(3.0, 4000);
  std::vector<double> stat;
  for (int N : {25, 50, 100}) {
    const auto red = solve_reduced(p, N, grid);
    REQUIRE(red.completed());
    stat.push_back(finite_n_norm_stat(red));
  }
  CHECK(stat[1] > 2.0 * stat[0]);
  CHECK(stat[2] > 2.0 * stat[1]);
}

TEST_CASE("rescaled norm statistic in trivial cases") {
  const auto zero = solve_reduced(fixtures::zero_cost(), 7, TimeGrid(1.0, 100));
  CHECK(finite_n_norm_stat(zero) == 0.0);

  // Decoupled: Pi2 = Pi3 = 0 and Pi1 is the single-agent Riccati solution.
  const auto p = fixtures::decoupled(1);
  const auto a = solve_reduced(p, 3, TimeGrid(1.0, 400));
  const auto b = solve_reduced(p, 30, TimeGrid(1.0, 400));
  CHECK(finite_n_norm_stat(a) == doctest::Approx(finite_n_norm_stat(b)).epsilon(1e-13));
  const auto lam = oracle::lambda1_oracle(p);
  double sup = 0.0;
  for (int k = 0; k <= 400; ++k) sup = std::max(sup, std::abs(lam.value(k / 400.0)(0, 0)));
  CHECK(finite_n_norm_stat(a) == doctest::Approx(sup).epsilon(1e-9));
}

TEST_CASE("solver preconditions") {
  const auto p = fixtures::escaping_example();
  CHECK_THROWS_AS(solve_reduced(p, 1, TimeGrid(3.0, 10)), ModelError);
  CHECK_THROWS_AS(solve_full_oracle(p, 61, TimeGrid(3.0, 10)), ModelError);
  auto bad = p;
  bad.R(0, 0) = 0.0;
  CHECK_THROWS_WITH_AS(solve_reduced(bad, 3, TimeGrid(3.0, 10)),
                       doctest::Contains("R not positive definite"), ModelError);
}

TEST_CASE("feedback Nash certification") {
  SUBCASE("coupled solvable instance, N = 3") {
    const auto p = fixtures::solvable_example(1.0, 0.5);
    const TimeGrid grid(3.0, 4000);
    const auto red = solve_reduced(p, 3, grid);
    REQUIRE(red.completed());
    const auto rep = best_response_check(p, 3, synthesize_strategies(red, p), grid);
    CHECK(rep.certified);
    CHECK(rep.gap <= 1e-6);
  }
  SUBCASE("decoupled instance") {
    const auto p = fixtures::decoupled(1);
    const TimeGrid grid(1.0, 4000);
    const auto red = solve_reduced(p, 3, grid);
    const auto rep = best_response_check(p, 3, synthesize_strategies(red, p), grid);
    CHECK(rep.certified);
    CHECK(rep.gap <= 1e-7);
  }
  SUBCASE("zero-cost instance") {
    const auto p = fixtures::zero_cost();
    const TimeGrid grid(1.0, 200);
    const auto red = solve_reduced(p, 3, grid);
    const auto rep = best_response_check(p, 3, synthesize_strategies(red, p), grid);
    CHECK(rep.gap == 0.0);
  }
  SUBCASE("a perturbed strategy is not a best response") {
    const auto p = fixtures::solvable_example(1.0, 0.5);
    const TimeGrid grid(3.0, 1000);
    const auto red = solve_reduced(p, 3, grid);
    auto s = synthesize_strategies(red, p);
    std::vector<Matrix> g = s.gain_self->values();
    for (auto& m : g) m *= 1.1;
    s.gain_self.emplace(grid, 0, g);
    const auto rep = best_response_check(p, 3, s, grid);
    CHECK(rep.gap > 1e-3);
  }
}
