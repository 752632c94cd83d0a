#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace mfg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Entrywise tolerance on |S - S^T| for the symmetry checks in validate().
inline constexpr double kSymmetryTol = 1e-10;
/// Smallest eigenvalue allowed for a PSD matrix; PD requires > kPsdTol.
inline constexpr double kPsdTol = 1e-10;

/// Raised for malformed model inputs (singular R, shape mismatch, bad grid).
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Dims {
  int n = 0;   // state
  int n1 = 0;  // control
  int n2 = 0;  // noise
};

/// Constant coefficients of the N-player LQ game
///
///   dX_i = (A X_i + B u_i + G X^(N)) dt + D dW_i
///   J_i  = E int_0^T |X_i - Gamma X^(N) - eta|_Q^2 + u_i' R u_i dt
///          + E |X_i(T) - GammaF X^(N)(T) - etaF|_Qf^2
///
/// where X^(N) is the population average.
struct ModelParams {
  Matrix A, B, G, D, Q, R, Qf, Gamma, GammaF;
  Vector eta, etaF;
  double T = 1.0;

  Dims dims() const {
    return {static_cast<int>(A.rows()), static_cast<int>(B.cols()),
            static_cast<int>(D.cols())};
  }

  /// Scalar model (n = n1 = n2 = 1) with the remaining terms zero.
  static ModelParams scalar(double a, double b, double g, double d, double q,
                            double r, double qf, double gamma, double gammaF,
                            double eta, double etaF, double T);
};

bool operator==(const ModelParams& lhs, const ModelParams& rhs);

/// Uniform grid t_k = k * T / K, k = 0..K.
class TimeGrid {
 public:
  TimeGrid(double horizon, int num_steps);

  double horizon() const { return horizon_; }
  int num_steps() const { return num_steps_; }
  double step() const { return horizon_ / num_steps_; }
  double node(int k) const;
  int num_nodes() const { return num_steps_ + 1; }

  /// Same horizon with every step split in two.
  TimeGrid halved() const { return TimeGrid(horizon_, 2 * num_steps_); }

  bool operator==(const TimeGrid&) const = default;

 private:
  double horizon_;
  int num_steps_;
};

struct ValidationReport {
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
  /// Failures joined with "; ".
  std::string summary() const;
};

ValidationReport validate(const ModelParams& params);

/// Sum of absolute values of all entries.
double l1_norm(const Eigen::Ref<const Matrix>& m);

/// Largest entrywise |m - m^T|; infinity for non-square input.
double max_asymmetry(const Eigen::Ref<const Matrix>& m);

/// Smallest eigenvalue of the symmetric part of m.
double min_eigenvalue(const Eigen::Ref<const Matrix>& m);

/// M = B R^{-1} B^T. Throws ModelError if R is not positive definite.
Matrix control_weight_M(const ModelParams& params);

/// R^{-1} B^T, the map from co-state to control.
Matrix control_gain_map(const ModelParams& params);

}  // namespace mfg
