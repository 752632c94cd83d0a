#include "mfg/simulation.hpp"

#include "mfg/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace mfg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Symmetric square root of a PSD covariance.
Matrix covariance_factor(const Matrix& cov, int n) {
  if (cov.size() == 0) return Matrix::Zero(n, n);
  if (cov.rows() != n || cov.cols() != n) {
    throw ModelError("initial covariance must be n x n");
  }
  if (max_asymmetry(cov) > kSymmetryTol || min_eigenvalue(cov) < -kPsdTol) {
    throw ModelError("initial covariance must be symmetric PSD");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

// Feedback data sampled on the SDE nodes.
struct LawTable {
  // Centralized: u_i = Ks X_i + Ko (sum_j X_j - X_i) + off
  // Decentralized: u_i = Ks X_i + off, where off already holds the Xbar term.
  std::vector<Matrix> Ks, Ko;
  std::vector<Vector> off;
};

struct ReplicationOutput {
  bool ok = true;
  std::vector<double> sq_err;  // per SDE node
  Vector cost;                 // per agent
  std::vector<Matrix> path;    // kept nodes
};

struct Welford {
  double count = 0.0, mean = 0.0, m2 = 0.0;
  void add(double x) {
    count += 1.0;
    const double d = x - mean;
    mean += d / count;
    m2 += d * (x - mean);
  }
  double variance() const { return count > 1.0 ? m2 / (count - 1.0) : kNaN; }
};

}  // namespace

MeanFieldTrajectory solve_xbar(const LimitSolution& limit,
                               const ModelParams& params, const Vector& x0,
                               const TimeGrid& grid) {
  if (!limit.completed()) {
    throw std::logic_error("solve_xbar: limit solution did not complete");
  }
  if (x0.size() != params.A.rows()) {
    throw ModelError("solve_xbar: x0 must have length n");
  }
  if (grid.horizon() != limit.grid().horizon()) {
    throw ModelError("solve_xbar: grid horizon differs from the limit's");
  }
  const Matrix M = control_weight_M(params);
  const Matrix AG = params.A + params.G;
  CubicSampler at({&*limit.Lambda1, &*limit.Lambda2, &*limit.chi1});
  Rhs rhs = [&](double t, const State& y, State& dy) {
    const State& L = at.at(t);
    dy[0] = (AG - M * (L[0] + L[1])) * y[0] - M * L[2];
  };
  auto traj = integrate_forward(rhs, State{Matrix(x0)}, grid);
  MeanFieldTrajectory out;
  out.xbar = std::move(traj.front());
  return out;
}

DecentralizedStrategy decentralized_strategy(const LimitSolution& limit,
                                             const ModelParams& params) {
  if (!limit.completed()) {
    throw std::logic_error("decentralized_strategy: limit did not complete");
  }
  const Matrix L = -control_gain_map(params);
  const TimeGrid& g = limit.grid();
  std::vector<Matrix> self, mf, off;
  for (int k = 0; k <= g.num_steps(); ++k) {
    self.push_back(L * limit.Lambda1->at_node(k));
    mf.push_back(L * limit.Lambda2->at_node(k));
    off.push_back(L * limit.chi1->at_node(k));
  }
  DecentralizedStrategy s;
  s.gain_self.emplace(g, 0, std::move(self));
  s.gain_mf.emplace(g, 0, std::move(mf));
  s.offset.emplace(g, 0, std::move(off));
  return s;
}

SimulationResult simulate_population(const ModelParams& params,
                                     const LimitSolution& limit,
                                     const ReducedSolution* reduced,
                                     const SimulationConfig& cfg) {
  {
    const auto report = validate(params);
    if (!report.ok()) throw ModelError(report.summary());
  }
  if (cfg.N < 1) throw ModelError("simulation: N must be positive");
  if (cfg.replications < 1) throw ModelError("simulation: replications >= 1");
  if (cfg.sde_steps < 1) throw ModelError("simulation: sde_steps >= 1");
  if (cfg.path_thin < 1) throw ModelError("simulation: path_thin >= 1");
  if (!limit.completed()) {
    throw std::logic_error("simulation: limit solution did not complete");
  }
  const TimeGrid& grid = limit.grid();
  if (grid.num_steps() % cfg.sde_steps != 0) {
    throw ModelError("simulation: sde_steps must divide the ODE step count");
  }
  const bool centralized = cfg.strategy == StrategyKind::CentralizedFiniteN;
  if (centralized) {
    if (reduced == nullptr || !reduced->completed() || reduced->N != cfg.N) {
      throw std::logic_error(
          "simulation: centralized strategy needs a completed reduced "
          "solution for this N");
    }
    if (!(reduced->grid() == grid)) {
      throw ModelError("simulation: reduced and limit grids differ");
    }
  }

  const int n = params.dims().n;
  const int n2 = params.dims().n2;
  const int N = cfg.N;
  const int S = cfg.sde_steps;
  const int ratio = grid.num_steps() / S;
  const double dt = grid.horizon() / S;
  const double sqdt = std::sqrt(dt);

  // Initial means.
  Matrix means = Matrix::Zero(n, N);
  if (cfg.initial_means.size() == 1) {
    if (cfg.initial_means[0].size() != n) throw ModelError("initial mean size");
    for (int i = 0; i < N; ++i) means.col(i) = cfg.initial_means[0];
  } else if (!cfg.initial_means.empty()) {
    if (static_cast<int>(cfg.initial_means.size()) != N) {
      throw ModelError("initial_means must have 1 or N entries");
    }
    for (int i = 0; i < N; ++i) {
      if (cfg.initial_means[static_cast<std::size_t>(i)].size() != n) {
        throw ModelError("initial mean size");
      }
      means.col(i) = cfg.initial_means[static_cast<std::size_t>(i)];
    }
  }
  const Vector x0 = cfg.x0 ? *cfg.x0 : Vector(means.rowwise().mean());
  const Matrix chol = covariance_factor(cfg.initial_cov, n);
  const bool random_init = cfg.initial_cov.size() != 0;

  std::vector<std::uint32_t> streams = cfg.agent_streams;
  if (streams.empty()) {
    for (int i = 0; i < N; ++i) streams.push_back(static_cast<std::uint32_t>(i));
  } else if (static_cast<int>(streams.size()) != N) {
    throw ModelError("agent_streams must have N entries");
  }

  const MeanFieldTrajectory mf = solve_xbar(limit, params, x0, grid);

  const Matrix L = -control_gain_map(params);
  std::optional<DecentralizedStrategy> dec;
  if (!centralized) dec = decentralized_strategy(limit, params);
  LawTable law;
  std::vector<Vector> xbar_at(static_cast<std::size_t>(S) + 1);
  for (int m = 0; m <= S; ++m) {
    const int k = m * ratio;
    xbar_at[static_cast<std::size_t>(m)] = mf.xbar->at_node(k).col(0);
    if (centralized) {
      law.Ks.push_back(L * reduced->Pi1->at_node(k));
      law.Ko.push_back(L * reduced->Pi2->at_node(k));
      law.off.push_back(L * reduced->theta1->at_node(k).col(0));
    } else {
      law.Ks.push_back(dec->gain_self->at_node(k));
      law.off.push_back(dec->gain_mf->at_node(k) *
                            xbar_at[static_cast<std::size_t>(m)] +
                        dec->offset->at_node(k).col(0));
    }
  }

  const Matrix& A = params.A;
  const Matrix& B = params.B;
  const Matrix& G = params.G;
  const Matrix& D = params.D;
  const Matrix& Q = params.Q;
  const Matrix& R = params.R;

  auto run_one = [&](int rep) {
    ReplicationOutput out;
    out.sq_err.assign(static_cast<std::size_t>(S) + 1, 0.0);
    out.cost = Vector::Zero(N);
    const bool keep = rep < cfg.keep_paths;
    const auto urep = static_cast<std::uint32_t>(rep);

    Matrix X = means;
    std::vector<double> z(static_cast<std::size_t>(std::max(n, n2)));
    if (random_init) {
      for (int i = 0; i < N; ++i) {
        rng::standard_normals(cfg.seed, urep, streams[static_cast<std::size_t>(i)],
                              0, std::span<double>(z.data(), n));
        X.col(i) += chol * Eigen::Map<const Vector>(z.data(), n);
      }
    }
    Matrix U(params.dims().n1, N);
    Matrix dW(n2, N);
    for (int m = 0; m <= S; ++m) {
      const auto ms = static_cast<std::size_t>(m);
      if (!X.allFinite()) {
        out.ok = false;
        return out;
      }
      const Vector pop_mean = X.rowwise().mean();
      out.sq_err[ms] = (pop_mean - xbar_at[ms]).squaredNorm();
      if (keep && m % cfg.path_thin == 0) out.path.push_back(X);

      if (centralized) {
        const Vector total = X.rowwise().sum();
        U.noalias() = (law.Ks[ms] - law.Ko[ms]) * X;
        U.colwise() += law.Ko[ms] * total + law.off[ms];
      } else {
        U.noalias() = law.Ks[ms] * X;
        U.colwise() += law.off[ms];
      }

      const double w = (m == 0 || m == S) ? 0.5 * dt : dt;
      Matrix E = X;
      E.colwise() -= params.Gamma * pop_mean + params.eta;
      out.cost += w * ((E.array() * (Q * E).array()).colwise().sum().transpose() +
                       (U.array() * (R * U).array()).colwise().sum().transpose())
                          .matrix();
      if (m == S) {
        Matrix Ef = X;
        Ef.colwise() -= params.GammaF * pop_mean + params.etaF;
        out.cost += (Ef.array() * (params.Qf * Ef).array())
                        .colwise()
                        .sum()
                        .transpose()
                        .matrix();
        break;
      }

      for (int i = 0; i < N; ++i) {
        rng::standard_normals(cfg.seed, urep, streams[static_cast<std::size_t>(i)],
                              static_cast<std::uint32_t>(m + 1),
                              std::span<double>(z.data(), n2));
        dW.col(i) = sqdt * Eigen::Map<const Vector>(z.data(), n2);
      }
      Matrix drift = A * X + B * U;
      drift.colwise() += G * pop_mean;
      X += dt * drift + D * dW;
    }
    if (!out.cost.allFinite()) out.ok = false;
    return out;
  };

  // Replications are independent; results land in a slot per replication
  // and are merged below in replication order.
  std::vector<ReplicationOutput> outputs(static_cast<std::size_t>(cfg.replications));
  const unsigned workers = std::max(
      1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                             static_cast<unsigned>(cfg.replications)));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int r = static_cast<int>(w); r < cfg.replications;
             r += static_cast<int>(workers)) {
          outputs[static_cast<std::size_t>(r)] = run_one(r);
        }
      });
    }
  }

  SimulationResult res;
  res.N = N;
  res.replications = cfg.replications;
  res.seed = cfg.seed;
  for (int m = 0; m <= S; ++m) {
    res.times.push_back(grid.node(m * ratio));
    res.xbar.push_back(xbar_at[static_cast<std::size_t>(m)].norm());
  }
  for (int m = 0; m <= S; m += cfg.path_thin) res.path_times.push_back(res.times[static_cast<std::size_t>(m)]);

  std::vector<Welford> err_acc(static_cast<std::size_t>(S) + 1);
  std::vector<Welford> cost_acc(static_cast<std::size_t>(N));
  res.replication_costs = Matrix::Constant(cfg.replications, N, kNaN);
  for (int r = 0; r < cfg.replications; ++r) {
    auto& o = outputs[static_cast<std::size_t>(r)];
    if (!o.ok) {
      res.flagged.push_back(r);
      continue;
    }
    ++res.used;
    for (int m = 0; m <= S; ++m) err_acc[static_cast<std::size_t>(m)].add(o.sq_err[static_cast<std::size_t>(m)]);
    for (int i = 0; i < N; ++i) cost_acc[static_cast<std::size_t>(i)].add(o.cost(i));
    res.replication_costs.row(r) = o.cost.transpose();
    if (!o.path.empty()) res.paths.push_back(std::move(o.path));
  }
  for (const auto& a : err_acc) {
    res.mf_sq_mean.push_back(res.used > 0 ? a.mean : kNaN);
    res.mf_sq_var.push_back(a.variance());
  }
  for (const auto& a : cost_acc) {
    res.cost_mean.push_back(res.used > 0 ? a.mean : kNaN);
    res.cost_se.push_back(a.count > 1.0 ? std::sqrt(a.variance() / a.count) : kNaN);
  }
  res.mf_error_sup = estimate_mf_error(res);
  return res;
}

Estimate estimate_mf_error(const SimulationResult& result) {
  Estimate e;
  if (result.used == 0 || result.mf_sq_mean.empty()) {
    e.value = kNaN;
    return e;
  }
  const auto it = std::max_element(result.mf_sq_mean.begin(), result.mf_sq_mean.end());
  e.node = static_cast<int>(it - result.mf_sq_mean.begin());
  e.value = *it;
  e.t = result.times[static_cast<std::size_t>(e.node)];
  if (result.used >= 2) {
    e.std_error = std::sqrt(result.mf_sq_var[static_cast<std::size_t>(e.node)] / result.used);
  }
  return e;
}

StrategyComparison compare_strategies(const ModelParams& params, int N,
                                      const TimeGrid& grid,
                                      SimulationConfig config) {
  const LimitSolution limit = solve_limit(params, grid);
  if (!limit.completed()) {
    throw NotSolvableError("compare_strategies: limit system escapes");
  }
  const ReducedSolution reduced = solve_reduced(params, N, grid);
  if (!reduced.completed()) {
    throw NotSolvableError("compare_strategies: finite-N system escapes");
  }
  config.N = N;

  StrategyComparison cmp;
  cmp.N = N;
  config.strategy = StrategyKind::CentralizedFiniteN;
  cmp.centralized = simulate_population(params, limit, &reduced, config);
  config.strategy = StrategyKind::Decentralized;
  cmp.decentralized = simulate_population(params, limit, nullptr, config);

  std::vector<Welford> acc(static_cast<std::size_t>(N));
  Welford mean_acc;
  for (int r = 0; r < config.replications; ++r) {
    const auto c = cmp.centralized.replication_costs.row(r);
    const auto d = cmp.decentralized.replication_costs.row(r);
    if (!c.allFinite() || !d.allFinite()) continue;
    ++cmp.paired;
    double avg = 0.0;
    for (int i = 0; i < N; ++i) {
      acc[static_cast<std::size_t>(i)].add(c(i) - d(i));
      avg += c(i) - d(i);
    }
    mean_acc.add(avg / N);
  }
  for (const auto& a : acc) {
    cmp.gap_mean.push_back(cmp.paired > 0 ? a.mean : kNaN);
    cmp.gap_se.push_back(a.count > 1.0 ? std::sqrt(a.variance() / a.count) : kNaN);
  }
  cmp.mean_gap = cmp.paired > 0 ? mean_acc.mean : kNaN;
  cmp.mean_gap_se = mean_acc.count > 1.0
                        ? std::sqrt(mean_acc.variance() / mean_acc.count)
                        : kNaN;
  return cmp;
}

}  // namespace mfg
