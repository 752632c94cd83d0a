#include "mfg/limit.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

namespace mfg {

namespace {

double sup_l1(const MatrixTrajectory& tr) {
  double s = 0.0;
  for (const auto& v : tr.values()) s = std::max(s, l1_norm(v));
  return s;
}

double relative_gap(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale <= std::numeric_limits<double>::min()) return 0.0;
  return std::abs(a - b) / scale;
}

std::map<std::string, double> sup_norms_of(const LimitSolution& s) {
  std::map<std::string, double> out;
  out["Lambda1"] = sup_l1(*s.Lambda1);
  out["Lambda2"] = sup_l1(*s.Lambda2);
  if (s.completed()) {
    out["Lambda3"] = sup_l1(*s.Lambda3);
    out["chi1"] = sup_l1(*s.chi1);
    out["chi2"] = sup_l1(*s.chi2);
    out["rbar"] = sup_l1(*s.rbar);
  }
  return out;
}

}  // namespace

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Solvable: return "Solvable";
    case Verdict::NotSolvable: return "NotSolvable";
    case Verdict::Unresolved: return "Unresolved";
  }
  return "Unresolved";
}

OdeSystem limit_riccati_system(const ModelParams& params) {
  const Matrix M = control_weight_M(params);
  const Matrix A = params.A;
  const Matrix At = A.transpose();
  const Matrix AG = params.A + params.G;
  const Matrix G = params.G;
  const Matrix Q = params.Q;
  const Matrix QGamma = params.Q * params.Gamma;

  State terminal{params.Qf, -params.Qf * params.GammaF};
  Rhs rhs = [=](double, const State& y, State& dy) {
    const Matrix& L1 = y[0];
    const Matrix& L2 = y[1];
    const Matrix ML1 = M * L1;
    const Matrix ML2 = M * L2;
    dy[0] = L1 * ML1 - (L1 * A + At * L1) - Q;
    dy[1] = L1 * ML2 + L2 * ML1 + L2 * ML2 - (L1 * G + L2 * AG + At * L2) +
            QGamma;
  };
  return OdeSystem::from_terminal(std::move(terminal), std::move(rhs));
}

LimitSolution solve_limit(const ModelParams& params, const TimeGrid& grid,
                          double blowup_threshold) {
  const auto report = validate(params);
  if (!report.ok()) throw ModelError(report.summary());

  const OdeSystem riccati = limit_riccati_system(params);
  IntegrationOutcome out = integrate_backward(riccati, grid, blowup_threshold);
  if (!out.completed() && out.escaped_component == 0) {
    throw IntegrityError(
        "Lambda1 exceeded the blow-up threshold; the LQ Riccati solution "
        "exists on [0, T] for valid weights, so the grid or threshold is "
        "inadequate");
  }

  LimitSolution sol;
  sol.Lambda1 = out.trajectory[0];
  sol.Lambda2 = out.trajectory[1];
  if (!out.completed()) {
    sol.status = Status::Escaped;
    sol.escape_bracket = out.escape_bracket;
    sol.riccati_outcome = std::move(out);
    return sol;
  }

  const Matrix M = control_weight_M(params);
  const Matrix& A = params.A;
  const Matrix& G = params.G;
  const Matrix At = A.transpose();
  const Matrix Gt = G.transpose();
  const Matrix AG = A + G;
  const Matrix AGt = AG.transpose();
  const Matrix& D = params.D;
  const Matrix src3 = params.Gamma.transpose() * params.Q * params.Gamma;
  const Vector Qeta = params.Q * params.eta;
  const Vector GtQeta = params.Gamma.transpose() * Qeta;
  const double eta_cost = params.eta.dot(Qeta);
  const Vector Qf_etaF = params.Qf * params.etaF;

  CubicSampler lam_at({&*sol.Lambda1, &*sol.Lambda2});
  State terminal{
      params.GammaF.transpose() * params.Qf * params.GammaF,
      -Qf_etaF,
      params.GammaF.transpose() * Qf_etaF,
      Matrix::Constant(1, 1, params.etaF.dot(Qf_etaF)),
  };
  // Lambda4 := Lambda3 throughout (Pi3 == Pi4 for every N).
  Rhs rhs = [&](double t, const State& y, State& dy) {
    const State& L = lam_at.at(t);
    const Matrix& L1 = L[0];
    const Matrix& L2 = L[1];
    const Matrix L2t = L2.transpose();
    const Matrix& L3 = y[0];
    const Vector c1 = y[1].col(0);
    const Vector c2 = y[2].col(0);
    const Vector Mc1 = M * c1;

    dy[0] = L2t * M * L2 + L3 * M * L1 + L1 * M * L3 + L3 * M * L2 +
            L2t * M * L3 - (L2t * G + Gt * L2 + L3 * AG + AGt * L3) - src3;
    dy[1] = (L1 + L2) * Mc1 - At * c1 + Qeta;
    dy[2] = (L2t + L3) * Mc1 - Gt * c1 + (L1 + L2t) * (M * c2) - AGt * c2 -
            GtQeta;
    dy[3](0, 0) = c1.dot(Mc1) + 2.0 * c2.dot(Mc1) -
                  (D.transpose() * L1 * D).trace() - eta_cost;
  };
  const OdeSystem rest = OdeSystem::from_terminal(std::move(terminal), rhs);
  IntegrationOutcome rest_out =
      integrate_backward(rest, grid, std::numeric_limits<double>::max());
  if (!rest_out.completed()) {
    throw IntegrityError("limit: linear Lambda3/chi/rbar pass overflowed");
  }
  sol.Lambda3 = rest_out.trajectory[0];
  sol.chi1 = rest_out.trajectory[1];
  sol.chi2 = rest_out.trajectory[2];
  sol.rbar = rest_out.trajectory[3];
  return sol;
}

SolvabilityReport check_asymptotic_solvability(const ModelParams& params,
                                               const TimeGrid& grid,
                                               double blowup_threshold,
                                               int refinements) {
  SolvabilityReport rep;
  const TimeGrid fine_grid = grid.halved();
  rep.grid_certificate.steps = grid.num_steps();
  rep.grid_certificate.step = grid.step();
  rep.grid_certificate.steps_fine = fine_grid.num_steps();
  rep.grid_certificate.relative_agreement =
      std::numeric_limits<double>::quiet_NaN();

  std::optional<LimitSolution> coarse, fine;
  try {
    coarse = solve_limit(params, grid, blowup_threshold);
    fine = solve_limit(params, fine_grid, blowup_threshold);
  } catch (const IntegrityError& e) {
    rep.verdict = Verdict::Unresolved;
    rep.note = e.what();
    return rep;
  }
  rep.grid_certificate.coarse_bracket = coarse->escape_bracket;
  rep.grid_certificate.fine_bracket = fine->escape_bracket;
  rep.sup_norms = sup_norms_of(*fine);

  if (coarse->completed() && fine->completed()) {
    const auto a = sup_norms_of(*coarse);
    double worst = 0.0;
    for (const auto& [name, v] : rep.sup_norms) {
      worst = std::max(worst, relative_gap(a.at(name), v));
    }
    rep.grid_certificate.relative_agreement = worst;
    if (worst <= kAgreementTol) {
      rep.verdict = Verdict::Solvable;
    } else {
      rep.verdict = Verdict::Unresolved;
      rep.note = "both grids completed but sup norms disagree; increase steps";
    }
    return rep;
  }

  if (!coarse->completed() && !fine->completed()) {
    if (!coarse->escape_bracket->overlaps(*fine->escape_bracket)) {
      rep.verdict = Verdict::Unresolved;
      rep.note = "escape brackets on the two grids do not overlap; increase "
                 "steps";
      return rep;
    }
    rep.verdict = Verdict::NotSolvable;
    const auto refined = bracket_escape_time(limit_riccati_system(params),
                                             *fine->riccati_outcome,
                                             refinements);
    rep.escape_bracket = refined.interval;
    rep.bracket_confirmed = refined.confirmed;
    if (!refined.confirmed) {
      rep.note = "escape unconfirmed at this threshold";
    }
    return rep;
  }

  rep.verdict = Verdict::Unresolved;
  rep.note = "one grid escaped and the other completed; increase steps";
  return rep;
}

double fit_loglog_slope(const std::vector<double>& x,
                        const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("fit_loglog_slope: need two or more points");
  }
  const std::size_t m = x.size();
  Eigen::MatrixXd design(static_cast<Eigen::Index>(m), 2);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw std::invalid_argument("fit_loglog_slope: non-positive value");
    }
    design(static_cast<Eigen::Index>(i), 0) = std::log(x[i]);
    design(static_cast<Eigen::Index>(i), 1) = 1.0;
    rhs(static_cast<Eigen::Index>(i)) = std::log(y[i]);
  }
  const Eigen::VectorXd coef =
      design.colPivHouseholderQr().solve(rhs);
  return coef(0);
}

std::pair<double, double> rescaled_errors(const ReducedSolution& reduced,
                                          const LimitSolution& limit) {
  if (!reduced.completed() || !limit.completed()) {
    throw std::logic_error("rescaled_errors: incomplete solutions");
  }
  if (!(reduced.grid() == limit.grid())) {
    throw std::invalid_argument("rescaled_errors: grids differ");
  }
  const double N = reduced.N;
  double eP = 0.0, eT = 0.0;
  for (int k = 0; k <= limit.grid().num_steps(); ++k) {
    const double p = l1_norm(reduced.Pi1->at_node(k) - limit.Lambda1->at_node(k)) +
                     l1_norm(N * reduced.Pi2->at_node(k) - limit.Lambda2->at_node(k)) +
                     l1_norm(N * N * reduced.Pi3->at_node(k) - limit.Lambda3->at_node(k));
    const double th =
        l1_norm(reduced.theta1->at_node(k) - limit.chi1->at_node(k)) +
        l1_norm(N * reduced.theta2->at_node(k) - limit.chi2->at_node(k));
    eP = std::max(eP, p);
    eT = std::max(eT, th);
  }
  return {eP, eT};
}

ConvergenceRecord convergence_study(const ModelParams& params,
                                    const std::vector<int>& N_values,
                                    const TimeGrid& grid) {
  const auto verdict = check_asymptotic_solvability(params, grid);
  if (verdict.verdict != Verdict::Solvable) {
    throw NotSolvableError("convergence study needs a Solvable model; check "
                           "reports " + to_string(verdict.verdict));
  }
  for (int N : N_values) {
    if (N < 2) throw ModelError("convergence study: every N must be >= 2");
  }
  const LimitSolution limit = solve_limit(params, grid);

  std::vector<std::future<ReducedSolution>> jobs;
  jobs.reserve(N_values.size());
  for (int N : N_values) {
    jobs.push_back(std::async(std::launch::async, [&params, &grid, N] {
      return solve_reduced(params, N, grid);
    }));
  }

  ConvergenceRecord rec;
  for (std::size_t i = 0; i < N_values.size(); ++i) {
    const ReducedSolution red = jobs[i].get();
    if (!red.completed()) {
      rec.excluded.push_back(N_values[i]);
      continue;
    }
    const auto [eP, eT] = rescaled_errors(red, limit);
    rec.N_values.push_back(N_values[i]);
    rec.errors_P.push_back(eP);
    rec.errors_theta.push_back(eT);
  }

  auto fit = [&](const std::vector<double>& err) -> std::optional<double> {
    if (rec.N_values.size() < 2) return std::nullopt;
    if (std::any_of(err.begin(), err.end(), [](double e) { return !(e > 0.0); })) {
      return std::nullopt;
    }
    std::vector<double> xs(rec.N_values.begin(), rec.N_values.end());
    return fit_loglog_slope(xs, err);
  };
  rec.rate_P = fit(rec.errors_P);
  rec.rate_theta = fit(rec.errors_theta);
  return rec;
}

}  // namespace mfg
