#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "combifd/constraints.hpp"
#include "combifd/qp.hpp"

namespace combifd::miqp {

enum class NodeSelection { BestBound, DepthFirst };

struct MiqpParams {
  long node_limit = 200000;
  double rel_gap = 1e-6;                 // relative optimality gap at termination
  std::optional<double> improve_target;  // stop as soon as incumbent < target
  double time_limit = std::numeric_limits<double>::infinity();  // seconds
  bool deterministic = true;
  NodeSelection selection = NodeSelection::BestBound;
  bool diving = true;        // rounding dives to find incumbents early
  int dive_period = 32;      // attempt a dive every this many nodes
  std::ostream* log = nullptr;  // one JSON object per explored node
};

enum class MiqpStatus {
  Optimal,      // incumbent proven within rel_gap of the true optimum
  Feasible,     // incumbent found, gap not closed (budget hit or early stop)
  Infeasible,   // no integral solution; certificate attached when the root
                // relaxation itself is empty
  NoIncumbent,  // budget exhausted without any integral solution
};

struct Incumbent {
  std::vector<double> x;
  double objective = std::numeric_limits<double>::infinity();
};

struct MiqpResult {
  MiqpStatus status = MiqpStatus::NoIncumbent;
  Incumbent incumbent;
  double best_bound = -std::numeric_limits<double>::infinity();
  long nodes = 0;
  qp::FarkasCertificate certificate;  // meaningful when status == Infeasible
};

/// Branch-and-bound over continuous QP relaxations. `binaries` lists the
/// flat variable indices constrained to {0,1}; their box bounds in `model`
/// must be contained in [0,1]. `start` (if given and feasible within 1e-6)
/// seeds the incumbent, which also makes repeated re-solves monotone:
/// the result is never worse than the starting point.
MiqpResult solve_miqp(const qp::QpModel& model, const std::vector<int>& binaries,
                      const MiqpParams& params = {},
                      const std::vector<double>* start = nullptr);

/// Search stopped with no integral solution in hand.
class BudgetExhaustedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finds any assignment satisfying the system (constant zero objective; the
/// regularizer is centered at a seeded random interior point so different
/// seeds land on different feasible corners). Throws InfeasibleSystemError
/// with a certificate when the system has no solution.
std::vector<double> find_feasible(const ConstraintSystem& sys, uint64_t seed = 0);

}  // namespace combifd::miqp
