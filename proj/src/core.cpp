#include "mfg/core.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mfg {

namespace {

Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

bool same_matrix(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

ModelParams ModelParams::scalar(double a, double b, double g, double d,
                                double q, double r, double qf, double gamma,
                                double gammaF, double eta, double etaF,
                                double T) {
  ModelParams p;
  p.A = scalar_matrix(a);
  p.B = scalar_matrix(b);
  p.G = scalar_matrix(g);
  p.D = scalar_matrix(d);
  p.Q = scalar_matrix(q);
  p.R = scalar_matrix(r);
  p.Qf = scalar_matrix(qf);
  p.Gamma = scalar_matrix(gamma);
  p.GammaF = scalar_matrix(gammaF);
  p.eta = Vector::Constant(1, eta);
  p.etaF = Vector::Constant(1, etaF);
  p.T = T;
  return p;
}

bool operator==(const ModelParams& lhs, const ModelParams& rhs) {
  return same_matrix(lhs.A, rhs.A) && same_matrix(lhs.B, rhs.B) &&
         same_matrix(lhs.G, rhs.G) && same_matrix(lhs.D, rhs.D) &&
         same_matrix(lhs.Q, rhs.Q) && same_matrix(lhs.R, rhs.R) &&
         same_matrix(lhs.Qf, rhs.Qf) && same_matrix(lhs.Gamma, rhs.Gamma) &&
         same_matrix(lhs.GammaF, rhs.GammaF) &&
         same_matrix(lhs.eta, rhs.eta) && same_matrix(lhs.etaF, rhs.etaF) &&
         lhs.T == rhs.T;
}

TimeGrid::TimeGrid(double horizon, int num_steps)
    : horizon_(horizon), num_steps_(num_steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw ModelError("time grid: horizon must be positive and finite");
  }
  if (num_steps < 1) {
    throw ModelError("time grid: number of steps must be positive");
  }
}

double TimeGrid::node(int k) const {
  if (k == num_steps_) return horizon_;
  return horizon_ * static_cast<double>(k) / static_cast<double>(num_steps_);
}

std::string ValidationReport::summary() const {
  std::string out;
  for (const auto& f : failures) {
    if (!out.empty()) out += "; ";
    out += f;
  }
  return out;
}

double l1_norm(const Eigen::Ref<const Matrix>& m) {
  return m.cwiseAbs().sum();
}

double max_asymmetry(const Eigen::Ref<const Matrix>& m) {
  if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
  if (m.size() == 0) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

double min_eigenvalue(const Eigen::Ref<const Matrix>& m) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

ValidationReport validate(const ModelParams& p) {
  ValidationReport report;
  auto fail = [&](std::string msg) { report.failures.push_back(std::move(msg)); };

  const Eigen::Index n = p.A.rows();
  if (n < 1) fail("n must be at least 1");
  if (p.B.cols() < 1) fail("n1 must be at least 1");
  if (p.D.cols() < 1) fail("n2 must be at least 1");

  struct Expect {
    const char* name;
    const Matrix* m;
    Eigen::Index rows, cols;
  };
  const Expect shapes[] = {
      {"A", &p.A, n, n},         {"B", &p.B, n, p.B.cols()},
      {"G", &p.G, n, n},         {"D", &p.D, n, p.D.cols()},
      {"Q", &p.Q, n, n},         {"R", &p.R, p.B.cols(), p.B.cols()},
      {"Qf", &p.Qf, n, n},       {"Gamma", &p.Gamma, n, n},
      {"GammaF", &p.GammaF, n, n},
  };
  bool shapes_ok = true;
  for (const auto& e : shapes) {
    if (e.m->rows() != e.rows || e.m->cols() != e.cols) {
      std::ostringstream os;
      os << e.name << " has shape " << shape_str(*e.m) << ", expected "
         << e.rows << "x" << e.cols;
      fail(os.str());
      shapes_ok = false;
    } else if (!all_finite(*e.m)) {
      fail(std::string(e.name) + " has non-finite entries");
      shapes_ok = false;
    }
  }
  if (p.eta.size() != n) {
    fail("eta has length " + std::to_string(p.eta.size()) + ", expected " +
         std::to_string(n));
    shapes_ok = false;
  }
  if (p.etaF.size() != n) {
    fail("etaF has length " + std::to_string(p.etaF.size()) + ", expected " +
         std::to_string(n));
    shapes_ok = false;
  }
  if (!(p.T > 0.0) || !std::isfinite(p.T)) fail("T must be positive");

  if (!shapes_ok) return report;

  const struct {
    const char* name;
    const Matrix* m;
    bool definite;
  } weights[] = {{"Q", &p.Q, false}, {"R", &p.R, true}, {"Qf", &p.Qf, false}};
  for (const auto& w : weights) {
    if (max_asymmetry(*w.m) > kSymmetryTol) {
      fail(std::string(w.name) + " not symmetric");
      continue;
    }
    const double lo = min_eigenvalue(*w.m);
    if (w.definite && !(lo > kPsdTol)) {
      fail(std::string(w.name) + " not positive definite");
    } else if (!w.definite && lo < -kPsdTol) {
      fail(std::string(w.name) + " not positive semidefinite");
    }
  }
  return report;
}

Matrix control_gain_map(const ModelParams& p) {
  if (p.R.rows() != p.R.cols() || p.R.rows() != p.B.cols()) {
    throw ModelError("R must be square with size equal to the columns of B");
  }
  Eigen::LLT<Matrix> llt(0.5 * (p.R + p.R.transpose()));
  if (llt.info() != Eigen::Success || !(min_eigenvalue(p.R) > kPsdTol)) {
    throw ModelError("R not positive definite");
  }
  return llt.solve(p.B.transpose());
}

Matrix control_weight_M(const ModelParams& p) {
  const Matrix m = p.B * control_gain_map(p);
  return 0.5 * (m + m.transpose());
}

}  // namespace mfg
