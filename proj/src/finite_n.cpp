#include "mfg/finite_n.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mfg {

namespace {

Matrix identity(Eigen::Index n) { return Matrix::Identity(n, n); }

void check_population(int N) {
  if (N < 2) throw ModelError("population size N must be at least 2");
}

void require_valid(const ModelParams& params) {
  const auto report = validate(params);
  if (!report.ok()) throw ModelError(report.summary());
}

// Pieces of the stacked N-player model, built exactly as written on the
// stacked state x = (x_1, ..., x_N).
struct StackedModel {
  int N = 0;
  int n = 0;
  Matrix A_hat;               // I_N (x) A + (1/N) 1 1' (x) G
  Matrix D_hat;               // I_N (x) D
  std::vector<Matrix> K;      // e_i' (x) I - (1/N) 1' (x) Gamma
  std::vector<Matrix> K_f;    // same with GammaF
  std::vector<Matrix> Q_i;    // K_i' Q K_i
  std::vector<Matrix> Q_if;   // K_if' Qf K_if
  Matrix M;                   // B R^{-1} B'
  Matrix RinvBt;              // R^{-1} B'

  StackedModel(const ModelParams& p, int pop) : N(pop), n(p.dims().n) {
    const int Nn = N * n;
    const double invN = 1.0 / N;
    A_hat = Matrix::Zero(Nn, Nn);
    D_hat = Matrix::Zero(Nn, N * p.D.cols());
    for (int a = 0; a < N; ++a) {
      D_hat.block(a * n, a * p.D.cols(), n, p.D.cols()) = p.D;
      for (int b = 0; b < N; ++b) {
        A_hat.block(a * n, b * n, n, n) = invN * p.G;
        if (a == b) A_hat.block(a * n, b * n, n, n) += p.A;
      }
    }
    for (int i = 0; i < N; ++i) {
      Matrix k = Matrix::Zero(n, Nn);
      Matrix kf = Matrix::Zero(n, Nn);
      for (int b = 0; b < N; ++b) {
        k.block(0, b * n, n, n) = -invN * p.Gamma;
        kf.block(0, b * n, n, n) = -invN * p.GammaF;
      }
      k.block(0, i * n, n, n) += identity(n);
      kf.block(0, i * n, n, n) += identity(n);
      Q_i.push_back(k.transpose() * p.Q * k);
      Q_if.push_back(kf.transpose() * p.Qf * kf);
      K.push_back(std::move(k));
      K_f.push_back(std::move(kf));
    }
    RinvBt = control_gain_map(p);
    M = control_weight_M(p);
  }
};

}  // namespace

const TimeGrid& ReducedSolution::grid() const {
  if (Pi1) return Pi1->grid();
  if (!partial.empty()) return partial.front().grid();
  throw std::logic_error("reduced solution holds no trajectories");
}

Matrix exchange_matrix(int N, int n, int i, int j) {
  if (i < 0 || j < 0 || i >= N || j >= N) {
    throw std::out_of_range("exchange_matrix: block index out of range");
  }
  Matrix J = Matrix::Zero(N * n, N * n);
  for (int b = 0; b < N; ++b) {
    int src = b;
    if (b == i) src = j;
    else if (b == j) src = i;
    J.block(b * n, src * n, n, n) = identity(n);
  }
  return J;
}

FullSolution solve_full_oracle(const ModelParams& params, int N,
                               const TimeGrid& grid, double blowup_threshold) {
  require_valid(params);
  check_population(N);
  const int n = params.dims().n;
  if (N * n > kMaxFullDimension) {
    throw ModelError("full oracle limited to N*n <= " +
                     std::to_string(kMaxFullDimension));
  }
  const StackedModel sm(params, N);
  const int Nn = N * n;
  const auto Nsz = static_cast<std::size_t>(N);

  // --- (P_1, ..., P_N) ---
  State terminal(sm.Q_if.begin(), sm.Q_if.end());
  Rhs p_rhs = [&sm, N, n, Nn](double, const State& P, State& dP) {
    // W = sum_k M_k P_k, Z = sum_k P_k M_k with M_k = e_k e_k' (x) M.
    Matrix W = Matrix::Zero(Nn, Nn);
    Matrix Z = Matrix::Zero(Nn, Nn);
    for (int k = 0; k < N; ++k) {
      const auto& Pk = P[static_cast<std::size_t>(k)];
      W.middleRows(k * n, n) = sm.M * Pk.middleRows(k * n, n);
      Z.middleCols(k * n, n) = Pk.middleCols(k * n, n) * sm.M;
    }
    for (int i = 0; i < N; ++i) {
      const auto& Pi = P[static_cast<std::size_t>(i)];
      const Matrix own =
          Pi.middleCols(i * n, n) * sm.M * Pi.middleRows(i * n, n);
      dP[static_cast<std::size_t>(i)] =
          -(Pi * sm.A_hat + sm.A_hat.transpose() * Pi) + Pi * W + Z * Pi -
          own - sm.Q_i[static_cast<std::size_t>(i)];
    }
  };
  const OdeSystem p_system = OdeSystem::from_terminal(terminal, p_rhs);
  IntegrationOutcome p_out = integrate_backward(p_system, grid, blowup_threshold);

  FullSolution sol;
  sol.N = N;
  sol.P = p_out.trajectory;
  if (!p_out.completed()) {
    sol.status = Status::Escaped;
    sol.escape_bracket = p_out.escape_bracket;
    return sol;
  }

  // --- (S_1..S_N, r_1..r_N), linear given P ---
  std::vector<const MatrixTrajectory*> p_src;
  for (const auto& tr : sol.P) p_src.push_back(&tr);
  CubicSampler p_at(p_src);

  std::vector<Vector> lin_src;  // K_i' Q eta
  for (int i = 0; i < N; ++i) {
    lin_src.push_back(sm.K[static_cast<std::size_t>(i)].transpose() *
                      params.Q * params.eta);
  }
  const double eta_cost = params.eta.dot(params.Q * params.eta);

  State sr_terminal;
  for (int i = 0; i < N; ++i) {
    sr_terminal.push_back(-sm.K_f[static_cast<std::size_t>(i)].transpose() *
                          params.Qf * params.etaF);
  }
  for (int i = 0; i < N; ++i) {
    sr_terminal.push_back(
        Matrix::Constant(1, 1, params.etaF.dot(params.Qf * params.etaF)));
  }

  Rhs sr_rhs = [&](double t, const State& y, State& dy) {
    const State& P = p_at.at(t);
    Matrix Z = Matrix::Zero(Nn, Nn);
    Vector MS = Vector::Zero(Nn);  // sum_k M_k S_k
    for (int k = 0; k < N; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      Z.middleCols(k * n, n) = P[ks].middleCols(k * n, n) * sm.M;
      MS.segment(k * n, n) = sm.M * y[ks].col(0).segment(k * n, n);
    }
    for (int i = 0; i < N; ++i) {
      const auto is = static_cast<std::size_t>(i);
      const Vector Si = y[is].col(0);
      Vector MiSi = Vector::Zero(Nn);
      MiSi.segment(i * n, n) = sm.M * Si.segment(i * n, n);
      dy[is] = -sm.A_hat.transpose() * Si - P[is] * MiSi + P[is] * MS +
               Z * Si + lin_src[is];
      const double trace_term =
          (sm.D_hat.transpose() * P[is] * sm.D_hat).trace();
      dy[Nsz + is](0, 0) =
          2.0 * Si.dot(MS) - Si.dot(MiSi) - eta_cost - trace_term;
    }
  };
  const OdeSystem sr_system = OdeSystem::from_terminal(sr_terminal, sr_rhs);
  IntegrationOutcome sr_out =
      integrate_backward(sr_system, grid, std::numeric_limits<double>::max());
  if (!sr_out.completed()) {
    throw std::runtime_error("full oracle: linear S/r pass overflowed");
  }
  sol.S.assign(sr_out.trajectory.begin(), sr_out.trajectory.begin() + N);
  sol.r.assign(sr_out.trajectory.begin() + N, sr_out.trajectory.end());
  return sol;
}

ReducedSolution solve_reduced(const ModelParams& params, int N,
                              const TimeGrid& grid, double blowup_threshold) {
  require_valid(params);
  check_population(N);
  const int n = params.dims().n;
  const Matrix M = control_weight_M(params);
  const Matrix& A = params.A;
  const Matrix& G = params.G;
  const Matrix At = A.transpose();
  const Matrix Gt = G.transpose();
  const double Nd = N;
  const double invN = 1.0 / Nd;
  const Matrix I = identity(n);

  const Matrix IGtN = I - params.Gamma.transpose() * invN;  // I - Gamma'/N
  const Matrix IGfN = I - params.GammaF.transpose() * invN;  // I - GammaF'/N
  const Matrix src1 = IGtN * params.Q * IGtN.transpose();
  const Matrix src2 = IGtN * params.Q * params.Gamma * invN;
  const Matrix src34 =
      params.Gamma.transpose() * params.Q * params.Gamma * (invN * invN);

  State terminal{
      IGfN * params.Qf * IGfN.transpose(),
      -IGfN * params.Qf * params.GammaF * invN,
      params.GammaF.transpose() * params.Qf * params.GammaF * (invN * invN),
      params.GammaF.transpose() * params.Qf * params.GammaF * (invN * invN),
  };

  Rhs pi_rhs = [&](double, const State& y, State& dy) {
    const Matrix& P1 = y[0];
    const Matrix& P2 = y[1];
    const Matrix& P3 = y[2];
    const Matrix& P4 = y[3];
    const Matrix P2t = P2.transpose();
    const Matrix MP1 = M * P1;
    const Matrix MP2 = M * P2;
    const Matrix MP2t = M * P2t;
    const Matrix MP3 = M * P3;
    const Matrix MP4 = M * P4;

    dy[0] = P1 * MP1 + (Nd - 1.0) * (P2 * MP2 + P2t * MP2t) -
            (P1 * (A + G * invN) + (At + Gt * invN) * P1) -
            (1.0 - invN) * (P2 * G + Gt * P2t) - src1;

    dy[1] = P1 * MP2 + P2 * MP1 + P2t * MP3 +
            (Nd - 2.0) * (P2 * MP2 + P2t * MP4) -
            (P1 * G * invN + Gt * P3 * invN + ((Nd - 2.0) * invN) * Gt * P4 +
             P2 * (A + ((Nd - 1.0) * invN) * G) + (At + Gt * invN) * P2) +
            src2;

    dy[2] = P2t * MP2 + P3 * MP1 + P1 * MP3 +
            (Nd - 2.0) * (P4 * MP2 + P2t * MP4) -
            (invN * (P2t * G + Gt * P2) + P3 * (A + G * invN) +
             (At + Gt * invN) * P3 + ((Nd - 2.0) * invN) * (P4 * G + Gt * P4)) -
            src34;

    dy[3] = P2t * MP2 + P4 * MP1 + P1 * MP4 + P3 * MP2 + P2t * MP3 +
            (Nd - 3.0) * (P4 * MP2 + P2t * MP4) -
            (invN * (P2t * G + Gt * P2 + P3 * G + Gt * P3) +
             P4 * (A + ((Nd - 2.0) * invN) * G) +
             (At + ((Nd - 2.0) * invN) * Gt) * P4) -
            src34;
  };
  const OdeSystem pi_system = OdeSystem::from_terminal(terminal, pi_rhs);
  IntegrationOutcome pi_out =
      integrate_backward(pi_system, grid, blowup_threshold);

  ReducedSolution sol;
  sol.N = N;
  if (!pi_out.completed()) {
    sol.status = Status::Escaped;
    sol.escape_bracket = pi_out.escape_bracket;
    sol.partial = std::move(pi_out.trajectory);
    return sol;
  }
  sol.Pi1 = pi_out.trajectory[0];
  sol.Pi2 = pi_out.trajectory[1];
  sol.Pi3 = pi_out.trajectory[2];
  sol.Pi4 = pi_out.trajectory[3];

  // --- theta1, theta2, r given Pi ---
  CubicSampler pi_at({&*sol.Pi1, &*sol.Pi2, &*sol.Pi3, &*sol.Pi4});
  const Vector Qeta = params.Q * params.eta;
  const Vector lin1 = IGtN * Qeta;
  const Vector lin2 = -invN * (params.Gamma.transpose() * Qeta);
  const double eta_cost = params.eta.dot(Qeta);
  const Matrix& D = params.D;
  const Vector Qf_etaF = params.Qf * params.etaF;

  State th_terminal{
      -IGfN * Qf_etaF,
      invN * (params.GammaF.transpose() * Qf_etaF),
      Matrix::Constant(1, 1, params.etaF.dot(Qf_etaF)),
  };
  Rhs th_rhs = [&](double t, const State& y, State& dy) {
    const State& P = pi_at.at(t);
    const Matrix& P1 = P[0];
    const Matrix P2t = P[1].transpose();
    const Vector th1 = y[0].col(0);
    const Vector th2 = y[1].col(0);
    const Vector Mth1 = M * th1;
    const Vector Mth2 = M * th2;

    dy[0] = P1 * Mth1 + (Nd - 1.0) * (P[1] * Mth1 + P2t * Mth2) -
            (At + Gt * invN) * th1 - ((Nd - 1.0) * invN) * (Gt * th2) + lin1;
    dy[1] = (P2t + P[2] + (Nd - 2.0) * P[3]) * Mth1 +
            (P1 + (Nd - 2.0) * P2t) * Mth2 - invN * (Gt * th1) -
            (At + ((Nd - 1.0) * invN) * Gt) * th2 + lin2;
    dy[2](0, 0) = th1.dot(Mth1) + 2.0 * (Nd - 1.0) * th2.dot(Mth1) -
                  (D.transpose() * P1 * D).trace() -
                  (Nd - 1.0) * (D.transpose() * P[2] * D).trace() - eta_cost;
  };
  const OdeSystem th_system = OdeSystem::from_terminal(th_terminal, th_rhs);
  IntegrationOutcome th_out =
      integrate_backward(th_system, grid, std::numeric_limits<double>::max());
  if (!th_out.completed()) {
    throw std::runtime_error("reduced solver: linear theta/r pass overflowed");
  }
  sol.theta1 = th_out.trajectory[0];
  sol.theta2 = th_out.trajectory[1];
  sol.r = th_out.trajectory[2];
  return sol;
}

Matrix assemble_P1(const Matrix& Pi1, const Matrix& Pi2, const Matrix& Pi3,
                   const Matrix& Pi4, int N) {
  const Eigen::Index n = Pi1.rows();
  Matrix P = Matrix::Zero(N * n, N * n);
  for (int a = 0; a < N; ++a) {
    for (int b = 0; b < N; ++b) {
      auto blk = P.block(a * n, b * n, n, n);
      if (a == 0 && b == 0) blk = Pi1;
      else if (a == 0) blk = Pi2;
      else if (b == 0) blk = Pi2.transpose();
      else if (a == b) blk = Pi3;
      else blk = Pi4;
    }
  }
  return P;
}

Matrix assemble_P1(const ReducedSolution& reduced, double t) {
  if (!reduced.completed()) {
    throw std::logic_error("assemble_P1: reduced solution did not complete");
  }
  return assemble_P1(eval_trajectory(*reduced.Pi1, t),
                     eval_trajectory(*reduced.Pi2, t),
                     eval_trajectory(*reduced.Pi3, t),
                     eval_trajectory(*reduced.Pi4, t), reduced.N);
}

Matrix assemble_S1(const Matrix& theta1, const Matrix& theta2, int N) {
  const Eigen::Index n = theta1.rows();
  Matrix S = Matrix::Zero(N * n, 1);
  S.topRows(n) = theta1;
  for (int b = 1; b < N; ++b) S.middleRows(b * n, n) = theta2;
  return S;
}

RepresentationReport check_representation(const FullSolution& full,
                                          double tol) {
  if (!full.completed()) {
    throw std::logic_error("check_representation: full solution incomplete");
  }
  RepresentationReport rep;
  const int N = full.N;
  const TimeGrid& grid = full.P.front().grid();
  const int n = static_cast<int>(full.P.front().rows()) / N;

  std::vector<Matrix> J(static_cast<std::size_t>(N));
  for (int i = 1; i < N; ++i) J[static_cast<std::size_t>(i)] = exchange_matrix(N, n, 0, i);

  auto flag = [&](int k, const char* what, int player, double mag) {
    if (mag > tol) {
      rep.violations.push_back({k, grid.node(k), what, player, mag});
    }
  };

  for (int k = 0; k <= grid.num_steps(); ++k) {
    const Matrix& P1 = full.P[0].at_node(k);
    const Matrix Pi1 = P1.block(0, 0, n, n);
    const Matrix Pi2 = P1.block(0, n, n, n);
    const Matrix Pi3 = P1.block(n, n, n, n);
    const Matrix Pi4 = N > 2 ? Matrix(P1.block(n, 2 * n, n, n)) : Pi3;

    const double pattern = l1_norm(P1 - assemble_P1(Pi1, Pi2, Pi3, Pi4, N));
    rep.max_block_pattern = std::max(rep.max_block_pattern, pattern);
    flag(k, "block-pattern", 0, pattern);

    const double p34 = l1_norm(Pi3 - Pi4);
    rep.max_pi3_pi4 = std::max(rep.max_pi3_pi4, p34);
    flag(k, "pi3-pi4", 0, p34);

    const Matrix& S1 = full.S[0].at_node(k);
    const Matrix th1 = S1.topRows(n);
    const Matrix th2 = S1.middleRows(n, n);
    const double r1 = full.r[0].at_node(k)(0, 0);

    for (int i = 0; i < N; ++i) {
      const auto is = static_cast<std::size_t>(i);
      if (i > 0) {
        const double ex = l1_norm(full.P[is].at_node(k) -
                                  J[is].transpose() * P1 * J[is]);
        rep.max_exchange = std::max(rep.max_exchange, ex);
        flag(k, "exchange", i, ex);
      }
      Matrix expect_S = Matrix::Zero(N * n, 1);
      for (int b = 0; b < N; ++b) {
        expect_S.middleRows(b * n, n) = (b == i) ? th1 : th2;
      }
      const double sp = l1_norm(full.S[is].at_node(k) - expect_S);
      rep.max_s_pattern = std::max(rep.max_s_pattern, sp);
      flag(k, "S-pattern", i, sp);

      const double rs = std::abs(full.r[is].at_node(k)(0, 0) - r1);
      rep.max_r_spread = std::max(rep.max_r_spread, rs);
      flag(k, "r-equal", i, rs);
    }
  }
  return rep;
}

double finite_n_norm_stat(const ReducedSolution& reduced) {
  if (!reduced.completed()) {
    throw std::logic_error("finite_n_norm_stat: reduced solution incomplete");
  }
  const double N = reduced.N;
  double sup = 0.0;
  const TimeGrid& g = reduced.grid();
  for (int k = 0; k <= g.num_steps(); ++k) {
    const double v = l1_norm(reduced.Pi1->at_node(k)) +
                     N * l1_norm(reduced.Pi2->at_node(k)) +
                     N * N * l1_norm(reduced.Pi3->at_node(k));
    sup = std::max(sup, v);
  }
  return sup;
}

FeedbackStrategyFiniteN synthesize_strategies(const ReducedSolution& reduced,
                                              const ModelParams& params) {
  if (!reduced.completed()) {
    throw std::logic_error("synthesize_strategies: reduced solution incomplete");
  }
  const Matrix L = -control_gain_map(params);
  const TimeGrid& g = reduced.grid();
  std::vector<Matrix> self, other, off;
  for (int k = 0; k <= g.num_steps(); ++k) {
    self.push_back(L * reduced.Pi1->at_node(k));
    other.push_back(L * reduced.Pi2->at_node(k));
    off.push_back(L * reduced.theta1->at_node(k));
  }
  FeedbackStrategyFiniteN s;
  s.N = reduced.N;
  s.gain_self.emplace(g, 0, std::move(self));
  s.gain_other.emplace(g, 0, std::move(other));
  s.offset.emplace(g, 0, std::move(off));
  return s;
}

BestResponseReport best_response_check(const ModelParams& params, int N,
                                       const FeedbackStrategyFiniteN& strategy,
                                       const TimeGrid& grid) {
  require_valid(params);
  check_population(N);
  const int n = params.dims().n;
  if (N * n > kMaxFullDimension) {
    throw ModelError("best-response check limited to N*n <= " +
                     std::to_string(kMaxFullDimension));
  }
  if (strategy.N != N || !strategy.gain_self) {
    throw std::invalid_argument("best_response_check: strategy/N mismatch");
  }
  const StackedModel sm(params, N);
  const int Nn = N * n;
  const int n1 = params.dims().n1;

  // Player 1's B_1 = e_1 (x) B and M_1 = B_1 R^{-1} B_1'.
  Matrix B1 = Matrix::Zero(Nn, n1);
  B1.topRows(n) = params.B;
  Matrix M1 = Matrix::Zero(Nn, Nn);
  M1.topLeftCorner(n, n) = sm.M;

  CubicSampler law_at({&*strategy.gain_self, &*strategy.gain_other,
                       &*strategy.offset});

  // Closed-loop drift F(t) and forcing c(t) seen by player 1 when players
  // 2..N apply u_j = Ks X_j + Ko sum_{k != j} X_k + o.
  auto frozen = [&](double t, Matrix& F, Vector& c) {
    const State& law = law_at.at(t);
    F = sm.A_hat;
    c = Vector::Zero(Nn);
    for (int j = 1; j < N; ++j) {
      Matrix Lj(n1, Nn);
      for (int b = 0; b < N; ++b) {
        Lj.middleCols(b * n, n) = (b == j) ? law[0] : law[1];
      }
      F.middleRows(j * n, n) += params.B * Lj;
      c.segment(j * n, n) += params.B * law[2].col(0);
    }
  };

  State terminal{sm.Q_if[0], -sm.K_f[0].transpose() * params.Qf * params.etaF};
  const Vector lin = sm.K[0].transpose() * params.Q * params.eta;
  Rhs rhs = [&](double t, const State& y, State& dy) {
    Matrix F;
    Vector c;
    frozen(t, F, c);
    const Matrix& P = y[0];
    const Vector s = y[1].col(0);
    dy[0] = -(P * F + F.transpose() * P) + P * M1 * P - sm.Q_i[0];
    dy[1] = -(F.transpose() - P * M1) * s - P * c + lin;
  };
  const OdeSystem system = OdeSystem::from_terminal(terminal, rhs);
  IntegrationOutcome out = integrate_backward(system, grid);

  BestResponseReport rep;
  if (!out.completed()) {
    rep.escape_bracket = out.escape_bracket;
    return rep;
  }
  rep.certified = true;
  const Matrix L = -sm.RinvBt;
  for (int k = 0; k <= grid.num_steps(); ++k) {
    const Matrix& P = out.trajectory[0].at_node(k);
    const Matrix& s = out.trajectory[1].at_node(k);
    const Matrix br_gain = L * P.topRows(n);
    const Matrix br_off = L * s.topRows(n);

    const double t = grid.node(k);
    Matrix syn_gain(n1, Nn);
    const Matrix ks = eval_trajectory(*strategy.gain_self, t);
    const Matrix ko = eval_trajectory(*strategy.gain_other, t);
    for (int b = 0; b < N; ++b) syn_gain.middleCols(b * n, n) = b == 0 ? ks : ko;
    const Matrix syn_off = eval_trajectory(*strategy.offset, t);

    const double gg = l1_norm(br_gain - syn_gain);
    const double og = l1_norm(br_off - syn_off);
    rep.gain_gap = std::max(rep.gain_gap, gg);
    rep.offset_gap = std::max(rep.offset_gap, og);
    rep.gap = std::max(rep.gap, gg + og);
  }
  return rep;
}

}  // namespace mfg
