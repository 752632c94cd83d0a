#include "cli.hpp"
#include "mfg/core.hpp"
#include "mfg/finite_n.hpp"
#include "mfg/limit.hpp"
#include "mfg/ode.hpp"
#include "mfg/simulation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <tuple>

namespace py = pybind11;
using namespace mfg;

namespace {

using Bracket = std::optional<std::tuple<double, double>>;

Bracket bracket(const std::optional<Interval>& b) {
  if (!b) return std::nullopt;
  return std::make_tuple(b->lo, b->hi);
}

// Stored values as an array of shape (nodes, rows, cols).
py::array_t<double> values_array(const MatrixTrajectory& tr) {
  const auto& vals = tr.values();
  py::array_t<double> out({static_cast<py::ssize_t>(vals.size()),
                           static_cast<py::ssize_t>(tr.rows()),
                           static_cast<py::ssize_t>(tr.cols())});
  auto a = out.mutable_unchecked<3>();
  for (py::ssize_t k = 0; k < a.shape(0); ++k) {
    const Matrix& m = vals[static_cast<std::size_t>(k)];
    for (py::ssize_t i = 0; i < a.shape(1); ++i) {
      for (py::ssize_t j = 0; j < a.shape(2); ++j) a(k, i, j) = m(i, j);
    }
  }
  return out;
}

py::array_t<double> times_array(const MatrixTrajectory& tr) {
  const TimeGrid& g = tr.grid();
  py::array_t<double> out(g.num_steps() - tr.first_node() + 1);
  auto a = out.mutable_unchecked<1>();
  for (py::ssize_t k = 0; k < a.shape(0); ++k) {
    a(k) = g.node(tr.first_node() + static_cast<int>(k));
  }
  return out;
}

ModelParams make_params(const Matrix& A, const Matrix& B, const Matrix& Q,
                        const Matrix& R, double T, std::optional<Matrix> G,
                        std::optional<Matrix> D, std::optional<Matrix> Qf,
                        std::optional<Matrix> Gamma, std::optional<Matrix> GammaF,
                        std::optional<Vector> eta, std::optional<Vector> etaF) {
  const Eigen::Index n = A.rows();
  const Matrix zero = Matrix::Zero(n, n);
  ModelParams p;
  p.A = A;
  p.B = B;
  p.Q = Q;
  p.R = R;
  p.T = T;
  p.G = G.value_or(zero);
  p.D = D.value_or(zero);
  p.Qf = Qf.value_or(zero);
  p.Gamma = Gamma.value_or(zero);
  p.GammaF = GammaF.value_or(zero);
  p.eta = eta.value_or(Vector::Zero(n));
  p.etaF = etaF.value_or(Vector::Zero(n));
  return p;
}

BestResponseReport best_response(const ModelParams& p, int N, const TimeGrid& grid) {
  const ReducedSolution red = solve_reduced(p, N, grid);
  if (!red.completed()) {
    throw NotSolvableError("finite-N system escapes; no strategy to certify");
  }
  return best_response_check(p, N, synthesize_strategies(red, p), grid);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Solvability, limits and simulation for LQ mean-field games";

  py::register_exception<ModelError>(m, "ModelError", PyExc_ValueError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);
  py::register_exception<NotSolvableError>(m, "NotSolvableError", PyExc_RuntimeError);

  py::class_<ModelParams>(m, "ModelParams")
      .def(py::init(&make_params), py::arg("A"), py::arg("B"), py::arg("Q"), py::arg("R"),
           py::arg("T"), py::kw_only(), py::arg("G") = py::none(), py::arg("D") = py::none(),
           py::arg("Qf") = py::none(), py::arg("Gamma") = py::none(),
           py::arg("GammaF") = py::none(), py::arg("eta") = py::none(),
           py::arg("etaF") = py::none(),
           "Unspecified terms default to zero (D to n x n).")
      .def_static("scalar", &ModelParams::scalar, py::arg("a"), py::arg("b"), py::arg("g"),
                  py::arg("d"), py::arg("q"), py::arg("r"), py::arg("qf"), py::arg("gamma"),
                  py::arg("gammaF"), py::arg("eta"), py::arg("etaF"), py::arg("T"))
      .def_readwrite("A", &ModelParams::A)
      .def_readwrite("B", &ModelParams::B)
      .def_readwrite("G", &ModelParams::G)
      .def_readwrite("D", &ModelParams::D)
      .def_readwrite("Q", &ModelParams::Q)
      .def_readwrite("R", &ModelParams::R)
      .def_readwrite("Qf", &ModelParams::Qf)
      .def_readwrite("Gamma", &ModelParams::Gamma)
      .def_readwrite("GammaF", &ModelParams::GammaF)
      .def_readwrite("eta", &ModelParams::eta)
      .def_readwrite("etaF", &ModelParams::etaF)
      .def_readwrite("T", &ModelParams::T)
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def("validate", [](const ModelParams& p) { return validate(p).failures; },
        "List of failed model checks; empty when valid.");

  py::class_<TimeGrid>(m, "TimeGrid")
      .def(py::init<double, int>(), py::arg("horizon"), py::arg("num_steps"))
      .def_property_readonly("horizon", &TimeGrid::horizon)
      .def_property_readonly("num_steps", &TimeGrid::num_steps)
      .def_property_readonly("step", &TimeGrid::step)
      .def("node", &TimeGrid::node);

  py::class_<MatrixTrajectory>(m, "Trajectory")
      .def_property_readonly("times", &times_array)
      .def_property_readonly("values", &values_array)
      .def_property_readonly("first_node", &MatrixTrajectory::first_node)
      .def_property_readonly("complete", &MatrixTrajectory::complete)
      .def("at", [](const MatrixTrajectory& tr, double t) { return eval_trajectory(tr, t); },
           "Piecewise-linear value at time t.");

  py::class_<LimitSolution>(m, "LimitSolution")
      .def_property_readonly("completed", &LimitSolution::completed)
      .def_property_readonly("escape_bracket",
                             [](const LimitSolution& s) { return bracket(s.escape_bracket); })
      .def_readonly("Lambda1", &LimitSolution::Lambda1)
      .def_readonly("Lambda2", &LimitSolution::Lambda2)
      .def_readonly("Lambda3", &LimitSolution::Lambda3)
      .def_readonly("chi1", &LimitSolution::chi1)
      .def_readonly("chi2", &LimitSolution::chi2)
      .def_readonly("rbar", &LimitSolution::rbar);

  m.def("solve_limit", &solve_limit, py::arg("params"), py::arg("grid"),
        py::arg("blowup_threshold") = kDefaultBlowupThreshold);

  py::class_<ReducedSolution>(m, "ReducedSolution")
      .def_readonly("N", &ReducedSolution::N)
      .def_property_readonly("completed", &ReducedSolution::completed)
      .def_property_readonly("escape_bracket",
                             [](const ReducedSolution& s) { return bracket(s.escape_bracket); })
      .def_readonly("Pi1", &ReducedSolution::Pi1)
      .def_readonly("Pi2", &ReducedSolution::Pi2)
      .def_readonly("Pi3", &ReducedSolution::Pi3)
      .def_readonly("Pi4", &ReducedSolution::Pi4)
      .def_readonly("theta1", &ReducedSolution::theta1)
      .def_readonly("theta2", &ReducedSolution::theta2)
      .def_readonly("r", &ReducedSolution::r);

  m.def("solve_reduced", &solve_reduced, py::arg("params"), py::arg("N"), py::arg("grid"),
        py::arg("blowup_threshold") = kDefaultBlowupThreshold);
  m.def("finite_n_norm_stat", &finite_n_norm_stat, py::arg("reduced"));
  m.def("assemble_P1", py::overload_cast<const ReducedSolution&, double>(&assemble_P1),
        py::arg("reduced"), py::arg("t"));

  py::class_<RepresentationReport>(m, "RepresentationReport")
      .def_property_readonly("ok", &RepresentationReport::ok)
      .def_property_readonly("violations",
                             [](const RepresentationReport& r) { return r.violations.size(); })
      .def_readonly("max_block_pattern", &RepresentationReport::max_block_pattern)
      .def_readonly("max_exchange", &RepresentationReport::max_exchange)
      .def_readonly("max_s_pattern", &RepresentationReport::max_s_pattern)
      .def_readonly("max_r_spread", &RepresentationReport::max_r_spread)
      .def_readonly("max_pi3_pi4", &RepresentationReport::max_pi3_pi4);

  m.def(
      "check_representation",
      [](const ModelParams& p, int N, const TimeGrid& grid, double tol) {
        const FullSolution full = solve_full_oracle(p, N, grid);
        if (!full.completed()) throw NotSolvableError("full N-player system escapes");
        return check_representation(full, tol);
      },
      py::arg("params"), py::arg("N"), py::arg("grid"), py::arg("tol") = 1e-7,
      "Solves the full N-player system and checks its exchange structure.");

  py::class_<BestResponseReport>(m, "BestResponseReport")
      .def_readonly("certified", &BestResponseReport::certified)
      .def_readonly("gap", &BestResponseReport::gap)
      .def_readonly("gain_gap", &BestResponseReport::gain_gap)
      .def_readonly("offset_gap", &BestResponseReport::offset_gap);

  m.def("best_response_check", &best_response, py::arg("params"), py::arg("N"),
        py::arg("grid"),
        "Synthesizes the finite-N feedback law and certifies it by best response.");

  py::enum_<Verdict>(m, "Verdict")
      .value("Solvable", Verdict::Solvable)
      .value("NotSolvable", Verdict::NotSolvable)
      .value("Unresolved", Verdict::Unresolved);

  py::class_<SolvabilityReport>(m, "SolvabilityReport")
      .def_readonly("verdict", &SolvabilityReport::verdict)
      .def_property_readonly("escape_bracket",
                             [](const SolvabilityReport& r) { return bracket(r.escape_bracket); })
      .def_readonly("bracket_confirmed", &SolvabilityReport::bracket_confirmed)
      .def_readonly("sup_norms", &SolvabilityReport::sup_norms)
      .def_readonly("note", &SolvabilityReport::note);

  m.def("check_asymptotic_solvability", &check_asymptotic_solvability, py::arg("params"),
        py::arg("grid"), py::arg("blowup_threshold") = kDefaultBlowupThreshold,
        py::arg("refinements") = kDefaultRefinements);

  py::class_<ConvergenceRecord>(m, "ConvergenceRecord")
      .def_readonly("N_values", &ConvergenceRecord::N_values)
      .def_readonly("errors_P", &ConvergenceRecord::errors_P)
      .def_readonly("errors_theta", &ConvergenceRecord::errors_theta)
      .def_readonly("rate_P", &ConvergenceRecord::rate_P)
      .def_readonly("rate_theta", &ConvergenceRecord::rate_theta)
      .def_readonly("excluded", &ConvergenceRecord::excluded);

  m.def("convergence_study", &convergence_study, py::arg("params"), py::arg("N_values"),
        py::arg("grid"), py::call_guard<py::gil_scoped_release>());
  m.def("fit_loglog_slope", &fit_loglog_slope, py::arg("x"), py::arg("y"));

  py::enum_<StrategyKind>(m, "StrategyKind")
      .value("CentralizedFiniteN", StrategyKind::CentralizedFiniteN)
      .value("Decentralized", StrategyKind::Decentralized);

  py::class_<SimulationConfig>(m, "SimulationConfig")
      .def(py::init<>())
      .def_readwrite("N", &SimulationConfig::N)
      .def_readwrite("replications", &SimulationConfig::replications)
      .def_readwrite("seed", &SimulationConfig::seed)
      .def_readwrite("initial_means", &SimulationConfig::initial_means)
      .def_readwrite("initial_cov", &SimulationConfig::initial_cov)
      .def_readwrite("strategy", &SimulationConfig::strategy)
      .def_readwrite("sde_steps", &SimulationConfig::sde_steps)
      .def_readwrite("x0", &SimulationConfig::x0)
      .def_readwrite("keep_paths", &SimulationConfig::keep_paths)
      .def_readwrite("path_thin", &SimulationConfig::path_thin);

  py::class_<SimulationResult>(m, "SimulationResult")
      .def_readonly("N", &SimulationResult::N)
      .def_readonly("used", &SimulationResult::used)
      .def_readonly("flagged", &SimulationResult::flagged)
      .def_readonly("times", &SimulationResult::times)
      .def_readonly("mf_sq_mean", &SimulationResult::mf_sq_mean)
      .def_readonly("cost_mean", &SimulationResult::cost_mean)
      .def_readonly("cost_se", &SimulationResult::cost_se)
      .def_property_readonly("mf_error_sup",
                             [](const SimulationResult& r) { return r.mf_error_sup.value; })
      .def_property_readonly("mf_error_se",
                             [](const SimulationResult& r) { return r.mf_error_sup.std_error; });

  m.def(
      "simulate_population",
      [](const ModelParams& p, const LimitSolution& limit,
         const ReducedSolution* reduced, const SimulationConfig& config) {
        py::gil_scoped_release release;
        return simulate_population(p, limit, reduced, config);
      },
      py::arg("params"), py::arg("limit"), py::arg("reduced") = nullptr, py::arg("config"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "mfg");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns its exit code.");
}
