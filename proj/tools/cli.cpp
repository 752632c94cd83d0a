#include "cli.hpp"

#include "mfg/finite_n.hpp"
#include "mfg/limit.hpp"
#include "mfg/simulation.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

namespace mfg::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- parsing

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads the keys of one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (v == nullptr) throw ConfigError(join(path_, key) + ": required field missing");
    return *v;
  }

  std::string field(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(join(path_, key) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "top level" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

double as_double(const json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field + ": expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& field) {
  if (!v.is_number_integer()) throw ConfigError(field + ": expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError(field + ": integer out of range");
  }
  return static_cast<int>(x);
}

int as_positive_int(const json& v, const std::string& field) {
  const int x = as_int(v, field);
  if (x < 1) throw ConfigError(field + ": must be positive");
  return x;
}

std::uint64_t as_seed(const json& v, const std::string& field) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  throw ConfigError(field + ": expected a non-negative integer");
}

// A number is accepted as a 1 x 1 matrix.
Matrix as_matrix(const json& v, const std::string& field) {
  if (v.is_number()) return Matrix::Constant(1, 1, v.get<double>());
  if (!v.is_array() || v.empty() || !v.front().is_array()) {
    throw ConfigError(field + ": expected a matrix as nested row arrays");
  }
  const auto rows = static_cast<Eigen::Index>(v.size());
  const auto cols = static_cast<Eigen::Index>(v.front().size());
  if (cols == 0) throw ConfigError(field + ": empty row");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(field + ": row " + std::to_string(i + 1) +
                        " has the wrong length");
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      m(i, k) = as_double(row[static_cast<std::size_t>(k)],
                          field + "[" + std::to_string(i + 1) + "][" +
                              std::to_string(k + 1) + "]");
    }
  }
  return m;
}

// A number is accepted as a vector of length one.
Vector as_vector(const json& v, const std::string& field) {
  if (v.is_number()) return Vector::Constant(1, v.get<double>());
  if (!v.is_array() || v.empty()) throw ConfigError(field + ": expected an array");
  Vector x(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    x(static_cast<Eigen::Index>(i)) =
        as_double(v[i], field + "[" + std::to_string(i + 1) + "]");
  }
  return x;
}

ModelParams parse_model(const json& j) {
  Section s(j, "model");
  ModelParams p;
  p.A = as_matrix(s.require("A"), s.field("A"));
  p.B = as_matrix(s.require("B"), s.field("B"));
  p.Q = as_matrix(s.require("Q"), s.field("Q"));
  p.R = as_matrix(s.require("R"), s.field("R"));
  p.T = as_double(s.require("T"), s.field("T"));
  const Eigen::Index n = p.A.rows();
  auto matrix_or_zero = [&](const char* key, Eigen::Index cols) {
    const json* v = s.find(key);
    return v ? as_matrix(*v, s.field(key)) : Matrix(Matrix::Zero(n, cols));
  };
  auto vector_or_zero = [&](const char* key) {
    const json* v = s.find(key);
    return v ? as_vector(*v, s.field(key)) : Vector(Vector::Zero(n));
  };
  p.G = matrix_or_zero("G", n);
  p.D = matrix_or_zero("D", n);
  p.Qf = matrix_or_zero("Qf", n);
  p.Gamma = matrix_or_zero("Gamma", n);
  p.GammaF = matrix_or_zero("GammaF", n);
  p.eta = vector_or_zero("eta");
  p.etaF = vector_or_zero("etaF");
  s.finish();
  const auto report = validate(p);
  if (!report.ok()) throw ConfigError("model: " + report.summary());
  return p;
}

SimStrategy parse_strategy(const json& v, const std::string& field) {
  if (v == "centralized") return SimStrategy::Centralized;
  if (v == "decentralized") return SimStrategy::Decentralized;
  if (v == "compare") return SimStrategy::Compare;
  throw ConfigError(field + ": expected \"centralized\", \"decentralized\" or \"compare\"");
}

std::string strategy_name(SimStrategy s) {
  switch (s) {
    case SimStrategy::Centralized: return "centralized";
    case SimStrategy::Decentralized: return "decentralized";
    case SimStrategy::Compare: return "compare";
  }
  return "?";
}

RunOptions parse_run(const json& j, int n) {
  Section s(j, "run");
  RunOptions r;
  if (const json* v = s.find("N")) {
    r.N = as_int(*v, s.field("N"));
    if (r.N < 2) throw ConfigError(s.field("N") + ": must be at least 2");
  }
  if (const json* v = s.find("N_values")) {
    if (!v->is_array() || v->empty()) {
      throw ConfigError(s.field("N_values") + ": expected a non-empty array");
    }
    r.N_values.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string f = s.field("N_values") + "[" + std::to_string(i + 1) + "]";
      const int N = as_int((*v)[i], f);
      if (N < 2) throw ConfigError(f + ": must be at least 2");
      r.N_values.push_back(N);
    }
  }
  if (const json* v = s.find("replications")) {
    r.replications = as_positive_int(*v, s.field("replications"));
  }
  if (const json* v = s.find("seed")) r.seed = as_seed(*v, s.field("seed"));
  if (const json* v = s.find("initial_means")) {
    const std::string f = s.field("initial_means");
    if (!v->is_array() || v->empty()) throw ConfigError(f + ": expected an array");
    // Either one mean vector or a list of them.
    if ((*v)[0].is_number()) {
      r.initial_means.push_back(as_vector(*v, f));
    } else {
      for (std::size_t i = 0; i < v->size(); ++i) {
        r.initial_means.push_back(as_vector((*v)[i], f + "[" + std::to_string(i + 1) + "]"));
      }
    }
    for (const auto& m : r.initial_means) {
      if (m.size() != n) throw ConfigError(f + ": mean vectors must have length n");
    }
  }
  if (const json* v = s.find("initial_cov")) {
    r.initial_cov = as_matrix(*v, s.field("initial_cov"));
    if (r.initial_cov.rows() != n || r.initial_cov.cols() != n) {
      throw ConfigError(s.field("initial_cov") + ": must be n x n");
    }
    if (max_asymmetry(r.initial_cov) > kSymmetryTol ||
        min_eigenvalue(r.initial_cov) < -kPsdTol) {
      throw ConfigError(s.field("initial_cov") + ": must be symmetric PSD");
    }
  }
  if (const json* v = s.find("x0")) {
    r.x0 = as_vector(*v, s.field("x0"));
    if (r.x0->size() != n) throw ConfigError(s.field("x0") + ": must have length n");
  }
  if (const json* v = s.find("strategy")) r.strategy = parse_strategy(*v, s.field("strategy"));
  if (const json* v = s.find("sde_steps")) {
    r.sde_steps = as_positive_int(*v, s.field("sde_steps"));
  }
  if (const json* v = s.find("keep_paths")) {
    r.keep_paths = as_int(*v, s.field("keep_paths"));
    if (r.keep_paths < 0) throw ConfigError(s.field("keep_paths") + ": must be >= 0");
  }
  if (const json* v = s.find("path_thin")) {
    r.path_thin = as_positive_int(*v, s.field("path_thin"));
  }
  if (const json* v = s.find("exploratory")) {
    if (!v->is_boolean()) throw ConfigError(s.field("exploratory") + ": expected true or false");
    r.exploratory = v->get<bool>();
  }
  s.finish();
  return r;
}

// ---------------------------------------------------------------- output

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json interval_json(const std::optional<Interval>& b) {
  if (!b) return nullptr;
  return json{{"lo", b->lo}, {"hi", b->hi}};
}

json number_or_null(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

json optional_number(const std::optional<double>& x) {
  return x ? number_or_null(*x) : json(nullptr);
}

std::string fmt(double x) {
  if (x == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class Writer {
 public:
  Writer(const fs::path& dir, CommandResult& result) : dir_(dir), result_(result) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir_.string());
  }

  void text(const std::string& name, const std::string& body) {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + (dir_ / name).string());
    f << body;
    result_.files.push_back(name);
  }

  void report(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }

  // Header t,<label>_<ij>,... with the entries in row-major order.
  void trajectory(const std::string& name, const std::string& label,
                  const MatrixTrajectory& tr) {
    std::ostringstream os;
    os << "t";
    const Eigen::Index r = tr.rows(), c = tr.cols();
    const bool wide = r > 9 || c > 9;
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index k = 0; k < c; ++k) {
        os << ',' << label;
        if (r * c == 1) continue;
        if (c == 1) {
          os << '_' << i + 1;
        } else if (wide) {
          os << '_' << i + 1 << '_' << k + 1;
        } else {
          os << '_' << i + 1 << k + 1;
        }
      }
    }
    os << '\n';
    const TimeGrid& g = tr.grid();
    for (int k = tr.first_node(); k <= g.num_steps(); ++k) {
      os << fmt(g.node(k));
      const Matrix& m = tr.at_node(k);
      for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) os << ',' << fmt(m(i, j));
      }
      os << '\n';
    }
    text(name, os.str());
  }

 private:
  fs::path dir_;
  CommandResult& result_;
};

Vector default_x0(const RunConfig& c) {
  if (c.run.x0) return *c.run.x0;
  const Eigen::Index n = c.model.A.rows();
  Vector x = Vector::Zero(n);
  for (const auto& m : c.run.initial_means) x += m;
  if (!c.run.initial_means.empty()) x /= static_cast<double>(c.run.initial_means.size());
  return x;
}

int exit_code_for(Verdict v) {
  switch (v) {
    case Verdict::Solvable: return kExitOk;
    case Verdict::NotSolvable: return kExitNotSolvable;
    case Verdict::Unresolved: return kExitUnresolved;
  }
  return kExitUnresolved;
}

json solvability_json(const SolvabilityReport& rep) {
  json norms = json::object();
  for (const auto& [name, v] : rep.sup_norms) norms[name] = number_or_null(v);
  const auto& gc = rep.grid_certificate;
  return json{
      {"verdict", to_string(rep.verdict)},
      {"escape_bracket", interval_json(rep.escape_bracket)},
      {"bracket_confirmed", rep.bracket_confirmed},
      {"sup_norms", norms},
      {"grid_certificate",
       {{"steps", gc.steps},
        {"step", gc.step},
        {"steps_fine", gc.steps_fine},
        {"relative_agreement", number_or_null(gc.relative_agreement)},
        {"coarse_bracket", interval_json(gc.coarse_bracket)},
        {"fine_bracket", interval_json(gc.fine_bracket)}}},
      {"note", rep.note},
  };
}

// Runs body and turns model and integrity failures into exit codes.
template <class F>
CommandResult guarded(F&& body) {
  CommandResult result;
  try {
    body(result);
  } catch (const ConfigError& e) {
    result.exit_code = kExitInputError;
    result.message = e.what();
  } catch (const ModelError& e) {
    result.exit_code = kExitInputError;
    result.message = e.what();
  } catch (const IntegrityError& e) {
    result.exit_code = kExitUnresolved;
    result.message = e.what();
  } catch (const NotSolvableError& e) {
    result.exit_code = kExitNotSolvable;
    result.message = std::string(e.what()) + "; run `mfg check` for the solvability verdict";
  }
  return result;
}

void require_valid(const RunConfig& c) {
  const auto rep = validate(c.model);
  if (!rep.ok()) throw ConfigError("model: " + rep.summary());
  if (c.steps < 1) throw ConfigError("grid.steps: must be positive");
  if (!(c.threshold > 0.0)) throw ConfigError("grid.threshold: must be positive");
}

}  // namespace

// ---------------------------------------------------------------- config

RunConfig parse_config(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  try {
    Section top(j, "");
    RunConfig c;
    c.model = parse_model(top.require("model"));
    if (const json* g = top.find("grid")) {
      Section s(*g, "grid");
      if (const json* v = s.find("steps")) c.steps = as_positive_int(*v, s.field("steps"));
      if (const json* v = s.find("threshold")) {
        c.threshold = as_double(*v, s.field("threshold"));
        if (!(c.threshold > 0.0)) throw ConfigError(s.field("threshold") + ": must be positive");
      }
      if (const json* v = s.find("refinements")) {
        c.refinements = as_int(*v, s.field("refinements"));
        if (c.refinements < 0) throw ConfigError(s.field("refinements") + ": must be >= 0");
      }
      s.finish();
    }
    if (const json* r = top.find("run")) {
      c.run = parse_run(*r, static_cast<int>(c.model.A.rows()));
    }
    top.finish();
    return c;
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

RunConfig load_config(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path.string() + ": cannot open");
  std::ostringstream os;
  os << f.rdbuf();
  return parse_config(os.str(), path.string());
}

std::string to_json_text(const RunConfig& c) {
  const ModelParams& p = c.model;
  json model{
      {"A", matrix_json(p.A)},         {"B", matrix_json(p.B)},
      {"G", matrix_json(p.G)},         {"D", matrix_json(p.D)},
      {"Q", matrix_json(p.Q)},         {"R", matrix_json(p.R)},
      {"Qf", matrix_json(p.Qf)},       {"Gamma", matrix_json(p.Gamma)},
      {"GammaF", matrix_json(p.GammaF)}, {"eta", vector_json(p.eta)},
      {"etaF", vector_json(p.etaF)},   {"T", p.T},
  };
  const RunOptions& r = c.run;
  json means = json::array();
  for (const auto& m : r.initial_means) means.push_back(vector_json(m));
  json run{
      {"N", r.N},
      {"N_values", r.N_values},
      {"replications", r.replications},
      {"seed", r.seed},
      {"strategy", strategy_name(r.strategy)},
      {"sde_steps", r.sde_steps},
      {"keep_paths", r.keep_paths},
      {"path_thin", r.path_thin},
      {"exploratory", r.exploratory},
  };
  if (!r.initial_means.empty()) run["initial_means"] = means;
  if (r.initial_cov.size() != 0) run["initial_cov"] = matrix_json(r.initial_cov);
  if (r.x0) run["x0"] = vector_json(*r.x0);
  const json j{
      {"model", model},
      {"grid", {{"steps", c.steps}, {"threshold", c.threshold}, {"refinements", c.refinements}}},
      {"run", run},
  };
  return j.dump(2) + "\n";
}

void apply(const Overrides& o, RunConfig& c) {
  if (o.steps) {
    if (*o.steps < 1) throw ConfigError("--steps: must be positive");
    c.steps = *o.steps;
  }
  if (o.threshold) {
    if (!(*o.threshold > 0.0)) throw ConfigError("--threshold: must be positive");
    c.threshold = *o.threshold;
  }
  if (o.seed) c.run.seed = *o.seed;
}

// ---------------------------------------------------------------- commands

CommandResult cmd_check(const RunConfig& c, const fs::path& out) {
  return guarded([&](CommandResult& res) {
    require_valid(c);
    Writer w(out, res);
    const auto rep = check_asymptotic_solvability(c.model, TimeGrid(c.model.T, c.steps),
                                                  c.threshold, c.refinements);
    json j = solvability_json(rep);
    j["command"] = "check";
    j["threshold"] = c.threshold;
    w.text("config.json", to_json_text(c));
    w.report("check.json", j);
    res.exit_code = exit_code_for(rep.verdict);
    res.message = "verdict: " + to_string(rep.verdict);
    if (rep.escape_bracket) {
      res.message += " (escape in [" + fmt(rep.escape_bracket->lo) + ", " +
                     fmt(rep.escape_bracket->hi) + "])";
    }
  });
}

CommandResult cmd_solve(const RunConfig& c, const fs::path& out) {
  return guarded([&](CommandResult& res) {
    require_valid(c);
    Writer w(out, res);
    w.text("config.json", to_json_text(c));
    const TimeGrid grid(c.model.T, c.steps);
    const LimitSolution sol = solve_limit(c.model, grid, c.threshold);
    w.trajectory("lambda1.csv", "Lambda1", *sol.Lambda1);
    w.trajectory("lambda2.csv", "Lambda2", *sol.Lambda2);
    json side{{"command", "solve"},
              {"status", sol.completed() ? "Completed" : "Escaped"},
              {"steps", c.steps},
              {"threshold", c.threshold}};
    if (sol.completed()) {
      w.trajectory("lambda3.csv", "Lambda3", *sol.Lambda3);
      w.trajectory("chi1.csv", "chi1", *sol.chi1);
      w.trajectory("chi2.csv", "chi2", *sol.chi2);
      w.trajectory("rbar.csv", "rbar", *sol.rbar);
      const Vector x0 = default_x0(c);
      const auto mf = solve_xbar(sol, c.model, x0, grid);
      w.trajectory("xbar.csv", "xbar", *mf.xbar);
      side["x0"] = vector_json(x0);
      side["escape_bracket"] = nullptr;
      res.exit_code = kExitOk;
      res.message = "limit system solved on [0, T]";
    } else {
      const auto refined = bracket_escape_time(limit_riccati_system(c.model),
                                               *sol.riccati_outcome, c.refinements);
      side["coarse_bracket"] = interval_json(sol.escape_bracket);
      side["escape_bracket"] = interval_json(refined.interval);
      side["bracket_confirmed"] = refined.confirmed;
      side["first_node"] = sol.Lambda2->first_node();
      side["first_time"] = sol.Lambda2->start_time();
      res.exit_code = kExitNotSolvable;
      res.message = "Lambda2 escapes in [" + fmt(refined.interval.lo) + ", " +
                    fmt(refined.interval.hi) + "]; partial trajectories written";
    }
    side["files"] = res.files;
    w.report("solve.json", side);
  });
}

CommandResult cmd_solve_finite(const RunConfig& c, const fs::path& out) {
  return guarded([&](CommandResult& res) {
    require_valid(c);
    Writer w(out, res);
    w.text("config.json", to_json_text(c));
    const TimeGrid grid(c.model.T, c.steps);
    const int N = c.run.N;
    const ReducedSolution red = solve_reduced(c.model, N, grid, c.threshold);
    json side{{"command", "solve-finite"},
              {"N", N},
              {"status", red.completed() ? "Completed" : "Escaped"},
              {"steps", c.steps},
              {"escape_bracket", interval_json(red.escape_bracket)}};
    const char* names[] = {"pi1", "pi2", "pi3", "pi4"};
    const char* labels[] = {"Pi1", "Pi2", "Pi3", "Pi4"};
    if (red.completed()) {
      const MatrixTrajectory* pis[] = {&*red.Pi1, &*red.Pi2, &*red.Pi3, &*red.Pi4};
      for (int i = 0; i < 4; ++i) {
        w.trajectory(std::string(names[i]) + ".csv", labels[i], *pis[i]);
      }
      w.trajectory("theta1.csv", "theta1", *red.theta1);
      w.trajectory("theta2.csv", "theta2", *red.theta2);
      w.trajectory("r.csv", "r", *red.r);
      side["norm_stat"] = finite_n_norm_stat(red);
      res.exit_code = kExitOk;
      res.message = "finite-N system solved for N = " + std::to_string(N);
    } else {
      for (int i = 0; i < 4; ++i) {
        w.trajectory(std::string(names[i]) + ".csv", labels[i],
                     red.partial[static_cast<std::size_t>(i)]);
      }
      side["first_node"] = red.partial.front().first_node();
      res.exit_code = kExitNotSolvable;
      res.message = "finite-N system escapes for N = " + std::to_string(N) +
                    "; partial trajectories written";
    }
    side["files"] = res.files;
    w.report("solve_finite.json", side);
  });
}

CommandResult cmd_converge(const RunConfig& c, const fs::path& out) {
  return guarded([&](CommandResult& res) {
    require_valid(c);
    Writer w(out, res);
    w.text("config.json", to_json_text(c));
    const ConvergenceRecord rec =
        convergence_study(c.model, c.run.N_values, TimeGrid(c.model.T, c.steps));
    std::ostringstream csv;
    csv << "N,err_P,err_theta\n";
    for (std::size_t i = 0; i < rec.N_values.size(); ++i) {
      csv << rec.N_values[i] << ',' << fmt(rec.errors_P[i]) << ','
          << fmt(rec.errors_theta[i]) << '\n';
    }
    w.text("convergence.csv", csv.str());
    if (rec.N_values.size() < 2) {
      res.warnings.push_back("fewer than two usable N values; slope omitted");
    } else {
      if (!rec.rate_P) res.warnings.push_back("err_P has zero entries; slope omitted");
      if (!rec.rate_theta) res.warnings.push_back("err_theta has zero entries; slope omitted");
    }
    for (int N : rec.excluded) {
      res.warnings.push_back("N = " + std::to_string(N) + " escaped and was excluded");
    }
    const json j{{"command", "converge"},
                 {"N", rec.N_values},
                 {"errors_P", rec.errors_P},
                 {"errors_theta", rec.errors_theta},
                 {"rate_P", optional_number(rec.rate_P)},
                 {"rate_theta", optional_number(rec.rate_theta)},
                 {"excluded", rec.excluded},
                 {"warnings", res.warnings}};
    w.report("converge.json", j);
    res.exit_code = kExitOk;
    res.message = rec.rate_P ? "fitted rate for err_P: " + fmt(*rec.rate_P)
                             : "convergence table written";
  });
}

namespace {

json simulation_json(const SimulationResult& r) {
  json cost_se = json::array();
  for (double v : r.cost_se) cost_se.push_back(number_or_null(v));
  json cost_mean = json::array();
  for (double v : r.cost_mean) cost_mean.push_back(number_or_null(v));
  return json{{"replications", r.replications},
              {"used", r.used},
              {"flagged", r.flagged},
              {"mf_error_sup", number_or_null(r.mf_error_sup.value)},
              {"mf_error_se", optional_number(r.mf_error_sup.std_error)},
              {"mf_error_t", r.mf_error_sup.t},
              {"cost_mean", cost_mean},
              {"cost_se", cost_se}};
}

void write_paths(Writer& w, int N, const SimulationResult& r) {
  if (r.paths.empty()) return;
  const Eigen::Index n = r.paths.front().front().rows();
  std::ostringstream os;
  os << "replication,t";
  for (int i = 0; i < N; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) os << ",x" << i + 1 << '_' << k + 1;
  }
  os << '\n';
  for (std::size_t rep = 0; rep < r.paths.size(); ++rep) {
    for (std::size_t m = 0; m < r.paths[rep].size(); ++m) {
      os << rep << ',' << fmt(r.path_times[m]);
      const Matrix& X = r.paths[rep][m];
      for (Eigen::Index i = 0; i < X.cols(); ++i) {
        for (Eigen::Index k = 0; k < n; ++k) os << ',' << fmt(X(k, i));
      }
      os << '\n';
    }
  }
  w.text("paths_N" + std::to_string(N) + ".csv", os.str());
}

}  // namespace

CommandResult cmd_simulate(const RunConfig& c, const fs::path& out) {
  return guarded([&](CommandResult& res) {
    require_valid(c);
    Writer w(out, res);
    w.text("config.json", to_json_text(c));
    const TimeGrid grid(c.model.T, c.steps);
    if (!c.run.exploratory) {
      const auto rep = check_asymptotic_solvability(c.model, grid, c.threshold, 0);
      if (rep.verdict != Verdict::Solvable) {
        throw NotSolvableError("simulation needs a certified solvable model (verdict " +
                               to_string(rep.verdict) + "); set run.exploratory to skip");
      }
    }
    const LimitSolution limit = solve_limit(c.model, grid, c.threshold);
    if (!limit.completed()) {
      throw NotSolvableError("limit system escapes, so Xbar is undefined");
    }

    SimulationConfig base;
    base.replications = c.run.replications;
    base.seed = c.run.seed;
    base.initial_means = c.run.initial_means;
    base.initial_cov = c.run.initial_cov;
    base.sde_steps = c.run.sde_steps;
    base.x0 = c.run.x0;
    base.keep_paths = c.run.keep_paths;
    base.path_thin = c.run.path_thin;

    json rows = json::array();
    std::ostringstream csv;
    csv << "N,mf_error_sup,mf_error_se\n";
    std::vector<double> Ns, errs;
    for (int N : c.run.N_values) {
      SimulationConfig cfg = base;
      cfg.N = N;
      json row{{"N", N}, {"seed", cfg.seed}};
      const SimulationResult* primary = nullptr;
      std::optional<SimulationResult> single;
      std::optional<StrategyComparison> cmp;
      if (c.run.strategy == SimStrategy::Compare) {
        cmp = compare_strategies(c.model, N, grid, cfg);
        row["centralized"] = simulation_json(cmp->centralized);
        row["decentralized"] = simulation_json(cmp->decentralized);
        json gm = json::array(), gs = json::array();
        for (double v : cmp->gap_mean) gm.push_back(number_or_null(v));
        for (double v : cmp->gap_se) gs.push_back(number_or_null(v));
        row["paired"] = cmp->paired;
        row["gap_mean"] = gm;
        row["gap_se"] = gs;
        row["mean_gap"] = number_or_null(cmp->mean_gap);
        row["mean_gap_se"] = number_or_null(cmp->mean_gap_se);
        primary = &cmp->centralized;
      } else if (c.run.strategy == SimStrategy::Centralized) {
        const ReducedSolution red = solve_reduced(c.model, N, grid, c.threshold);
        if (!red.completed()) {
          throw NotSolvableError("finite-N system escapes for N = " + std::to_string(N));
        }
        cfg.strategy = StrategyKind::CentralizedFiniteN;
        single = simulate_population(c.model, limit, &red, cfg);
        primary = &*single;
      } else {
        cfg.strategy = StrategyKind::Decentralized;
        single = simulate_population(c.model, limit, nullptr, cfg);
        primary = &*single;
      }
      if (single) row.update(simulation_json(*single));
      if (!primary->flagged.empty()) {
        res.warnings.push_back(std::to_string(primary->flagged.size()) +
                               " replications flagged for N = " + std::to_string(N));
      }
      const Estimate& e = primary->mf_error_sup;
      csv << N << ',' << fmt(e.value) << ','
          << (e.std_error ? fmt(*e.std_error) : std::string("nan")) << '\n';
      if (std::isfinite(e.value) && e.value > 0.0) {
        Ns.push_back(N);
        errs.push_back(e.value);
      }
      write_paths(w, N, *primary);
      rows.push_back(std::move(row));
    }
    json slope = nullptr;
    if (Ns.size() >= 2) {
      slope = fit_loglog_slope(Ns, errs);
    } else if (c.run.N_values.size() >= 2) {
      res.warnings.push_back("fewer than two positive mf_error values; slope omitted");
    }
    w.text("mf_error.csv", csv.str());
    const json j{{"command", "simulate"},
                 {"strategy", strategy_name(c.run.strategy)},
                 {"seed", c.run.seed},
                 {"replications", c.run.replications},
                 {"sde_steps", c.run.sde_steps},
                 {"rows", rows},
                 {"mf_error_slope", slope},
                 {"warnings", res.warnings}};
    w.report("simulate.json", j);
    res.exit_code = kExitOk;
    res.message = "simulated " + std::to_string(c.run.N_values.size()) + " population size(s)";
  });
}

// ---------------------------------------------------------------- entry

int run(int argc, char** argv) {
  CLI::App app{"Solvability, limits and simulation for LQ mean-field games"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<int> steps;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;

  using Cmd = CommandResult (*)(const RunConfig&, const fs::path&);
  const std::pair<const char*, std::pair<const char*, Cmd>> commands[] = {
      {"check", {"Decide asymptotic solvability", &cmd_check}},
      {"solve", {"Export the limit trajectories as CSV", &cmd_solve}},
      {"solve-finite", {"Export the reduced finite-N trajectories as CSV", &cmd_solve_finite}},
      {"converge", {"Measure the finite-N to limit convergence rate", &cmd_converge}},
      {"simulate", {"Monte-Carlo simulation of the N-player closed loop", &cmd_simulate}},
  };
  Cmd chosen = nullptr;
  for (const auto& [name, info] : commands) {
    CLI::App* sub = app.add_subcommand(name, info.first);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    sub->add_option("--steps", steps, "Override grid.steps");
    sub->add_option("--threshold", threshold, "Override grid.threshold");
    sub->add_option("--seed", seed, "Override run.seed");
    sub->callback([&chosen, cmd = info.second] { chosen = cmd; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInputError;
  }

  RunConfig config;
  try {
    config = load_config(config_path);
    apply({steps, threshold, seed}, config);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  }

  CommandResult res;
  try {
    res = chosen(config, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUnresolved;
  }
  for (const auto& wmsg : res.warnings) std::cerr << "warning: " << wmsg << '\n';
  if (res.exit_code == kExitInputError) {
    std::cerr << "error: " << res.message << '\n';
  } else {
    std::cout << res.message << '\n';
  }
  return res.exit_code;
}

}  // namespace mfg::cli
