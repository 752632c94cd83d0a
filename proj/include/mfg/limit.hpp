#pragma once

#include "mfg/core.hpp"
#include "mfg/finite_n.hpp"
#include "mfg/ode.hpp"

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfg {

/// Lambda1 escaped. Impossible for Q, Qf >= 0 and R > 0 in exact arithmetic,
/// so it indicates a numerical problem rather than non-solvability.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A convergence study was requested on a model that is not certified
/// solvable.
class NotSolvableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Large-population limit of the rescaled finite-N solution:
/// Lambda1 = lim Pi1, Lambda2 = lim N Pi2, Lambda3 = lim N^2 Pi3,
/// chi1 = lim theta1, chi2 = lim N theta2, rbar = lim r.
struct LimitSolution {
  Status status = Status::Completed;
  std::optional<Interval> escape_bracket;
  std::optional<MatrixTrajectory> Lambda1, Lambda2;
  /// Only on completion.
  std::optional<MatrixTrajectory> Lambda3, chi1, chi2, rbar;
  /// Escape bookkeeping for bracket refinement.
  std::optional<IntegrationOutcome> riccati_outcome;

  bool completed() const { return status == Status::Completed; }
  const TimeGrid& grid() const { return Lambda1->grid(); }
};

/// The coupled (Lambda1, Lambda2) system: the symmetric LQ Riccati equation
/// and the non-symmetric Riccati equation whose existence on [0, T] decides
/// asymptotic solvability.
OdeSystem limit_riccati_system(const ModelParams& params);

/// Integrates (Lambda1, Lambda2) jointly, then (Lambda3, chi1, chi2, rbar)
/// with Lambda4 taken equal to Lambda3. Throws IntegrityError if Lambda1
/// is the component that blew up.
LimitSolution solve_limit(const ModelParams& params, const TimeGrid& grid,
                          double blowup_threshold = kDefaultBlowupThreshold);

enum class Verdict { Solvable, NotSolvable, Unresolved };

std::string to_string(Verdict v);

struct GridCertificate {
  int steps = 0;
  double step = 0.0;
  int steps_fine = 0;
  /// Largest relative difference of the sup norms between the two grids
  /// (both completed), else NaN.
  double relative_agreement = 0.0;
  std::optional<Interval> coarse_bracket;
  std::optional<Interval> fine_bracket;
};

struct SolvabilityReport {
  Verdict verdict = Verdict::Unresolved;
  /// Refined bracket from the finer grid when NotSolvable.
  std::optional<Interval> escape_bracket;
  bool bracket_confirmed = true;
  /// Component name -> sup over nodes of its l1 norm (finer grid). On
  /// escape only Lambda1 and Lambda2 over the computed span.
  std::map<std::string, double> sup_norms;
  GridCertificate grid_certificate;
  std::string note;
};

inline constexpr double kAgreementTol = 1e-4;
inline constexpr int kDefaultRefinements = 8;

/// Runs solve_limit on `grid` and on the halved grid. Solvable needs both
/// to complete with sup norms within kAgreementTol relative; NotSolvable
/// needs both to escape with overlapping brackets.
SolvabilityReport check_asymptotic_solvability(
    const ModelParams& params, const TimeGrid& grid,
    double blowup_threshold = kDefaultBlowupThreshold,
    int refinements = kDefaultRefinements);

struct ConvergenceRecord {
  std::vector<int> N_values;
  std::vector<double> errors_P;
  std::vector<double> errors_theta;
  /// Least-squares slope of log error against log N; absent with fewer
  /// than two usable N.
  std::optional<double> rate_P;
  std::optional<double> rate_theta;
  /// N whose finite-N system escaped; not in N_values.
  std::vector<int> excluded;
};

/// Least-squares slope of log(y) on log(x). Requires two or more points
/// with x, y > 0.
double fit_loglog_slope(const std::vector<double>& x,
                        const std::vector<double>& y);

/// sup_t |Pi1 - Lambda1| + |N Pi2 - Lambda2| + |N^2 Pi3 - Lambda3| and
/// sup_t |theta1 - chi1| + |N theta2 - chi2|, node by node on a shared grid.
std::pair<double, double> rescaled_errors(const ReducedSolution& reduced,
                                          const LimitSolution& limit);

/// Throws NotSolvableError unless the model is certified Solvable.
ConvergenceRecord convergence_study(const ModelParams& params,
                                    const std::vector<int>& N_values,
                                    const TimeGrid& grid);

}  // namespace mfg
