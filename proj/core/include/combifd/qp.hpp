#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "combifd/constraints.hpp"
#include "combifd/matrix.hpp"

namespace combifd::qp {

/// One linear constraint row in flat-variable space.
struct SparseRow {
  std::vector<std::pair<int, double>> terms;  // (flat var, coefficient)
  double rhs = 0.0;
  bool eq = false;
};

/// Convex QP in standard form:
///   minimize 1/2 v'Qv + c'v + c0   s.t. rows, lo <= v <= hi.
/// Q is given sparsely as symmetric entries (i <= j implied mirrored). A
/// ridge delta*I centered at ridge_center is always added internally for
/// numerical definiteness; reported objectives exclude it.
struct QpModel {
  int n = 0;
  std::vector<std::tuple<int, int, double>> q_terms;  // (i, j, value), i <= j
  Eigen::VectorXd c;
  double c0 = 0.0;
  std::vector<SparseRow> rows;
  Eigen::VectorXd lo, hi;
  Eigen::VectorXd ridge_center;  // empty means origin
  double ridge = 1e-10;          // relative to max |Q| diagonal (min absolute 1e-10)

  static QpModel make(int n);
};

struct ActiveEntry {
  enum class Type { Row, Lower, Upper };
  Type type;
  int index;  // row index or flat variable index
  bool operator==(const ActiveEntry&) const = default;
};

enum class QpStatus { Optimal, Infeasible, IterationLimit };

/// Nonnegative combination of constraints proving emptiness. Each entry is
/// weighted in ">=" orientation: an Eq row as written, a LessEq row as
/// -a'v >= -rhs, a Lower bound as v >= lo, an Upper bound as -v >= -hi.
/// Weights on inequality-type entries are nonnegative; the combined normal
/// vanishes while the combined rhs is positive.
struct FarkasCertificate {
  std::vector<std::pair<ActiveEntry, double>> weights;
};

struct QpSolution {
  QpStatus status = QpStatus::Optimal;
  Eigen::VectorXd x;
  double objective = 0.0;  // true objective incl. c0, excl. ridge
  std::vector<ActiveEntry> active;
  std::vector<double> multipliers;  // aligned with active; >= 0 on inequalities
  FarkasCertificate certificate;    // populated when Infeasible
  int iterations = 0;
  bool ridge_boosted = false;  // ridge was raised to recover a singular factorization
  bool warm_hit = false;       // warm-start shortcut certified optimality
};

struct WarmStart {
  Eigen::VectorXd x;
  std::vector<ActiveEntry> active;
};

/// Thrown when Q has curvature below the PSD tolerance; carries a direction
/// of negative curvature.
class NonConvexError : public std::runtime_error {
 public:
  NonConvexError(std::string what, Eigen::VectorXd dir)
      : std::runtime_error(std::move(what)), direction(std::move(dir)) {}
  Eigen::VectorXd direction;
};

/// Thrown by the higher-level steps when a subproblem is provably empty.
class InfeasibleSystemError : public std::runtime_error {
 public:
  InfeasibleSystemError(std::string what, FarkasCertificate cert)
      : std::runtime_error(std::move(what)), certificate(std::move(cert)) {}
  FarkasCertificate certificate;
};

QpSolution solve_qp(const QpModel& model, const WarmStart* warm = nullptr);

struct KktReport {
  double stationarity = 0.0;   // inf-norm of gradient + N mu
  double primal = 0.0;         // worst constraint violation
  double dual = 0.0;           // worst negative inequality multiplier
  double complementarity = 0.0;
  bool ok(double stat_tol = 1e-7, double feas_tol = 1e-8) const {
    return stationarity <= stat_tol && primal <= feas_tol && dual <= feas_tol &&
           complementarity <= feas_tol;
  }
};
KktReport check_kkt(const QpModel& model, const QpSolution& sol);

/// Verifies a Farkas certificate numerically against the model.
bool certificate_valid(const QpModel& model, const FarkasCertificate& cert, double tol = 1e-6);

/// Independent additive subproblems: variables are grouped by co-occurrence
/// in rows or in off-diagonal Q entries; each row falls in exactly one part.
struct SubModel {
  QpModel model;
  std::vector<int> vars;  // part variable -> original variable
  std::vector<int> rows;  // part row -> original row
};
std::vector<SubModel> decompose(const QpModel& model);

/// Bounds and rows of a ConstraintSystem as a QpModel with zero objective
/// (integrality ignored; caller supplies q_terms/c afterwards).
QpModel from_system(const ConstraintSystem& sys);

/// Gram-matrix least-squares objective ||A - WH||_F^2 over the free factor
/// of a fixed-factor system (x and b enter with zero objective weight).
void add_least_squares_objective(QpModel& model, const ConstraintSystem& reduced,
                                 const DenseMatrix& a, const DenseMatrix& fixed_values);

enum class NnlsSide { SolveForW, SolveForH };

/// Algorithm step with no binaries: minimizes ||A - WH||_2 over the free
/// factor subject to `extra`, decomposing into independent parts when no row
/// couples them.
DenseMatrix solve_nnls_step(const DenseMatrix& a, const DenseMatrix& fixed, NnlsSide which,
                            const ConstraintSystem& extra);

}  // namespace combifd::qp
