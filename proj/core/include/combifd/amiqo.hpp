#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "combifd/constraints.hpp"
#include "combifd/matrix.hpp"
#include "combifd/miqp.hpp"

namespace combifd::amiqo {

struct FactorModel {
  DenseMatrix w, h;
};

struct TraceEntry {
  int iteration = 0;   // 1-based outer iteration
  char half = 'W';     // which factor was re-optimized
  double objective = 0.0;  // residual norm after the half step
  long miqp_nodes = 0;
  bool proven_optimal = false;  // half-step subproblem solved to gap
};

struct AmiqoOptions {
  int max_iters = 50;
  double rel_tol = 1e-5;  // stop when relative objective improvement drops below
  int p = 2;              // residual norm: 2 (Frobenius) or 1 (entrywise)
  uint64_t seed = 0;      // seeds the initial feasibility search
  miqp::MiqpParams miqp;  // per-half-step solver budget
  bool improve_only = false;  // half steps return as soon as they beat the last objective
  bool keep_iterates = false;     // snapshot the flat assignment after each half step
  std::ostream* trace = nullptr;  // one JSON object per half step
};

struct AmiqoResult {
  FactorModel factors;
  std::vector<double> assignment;  // full flat vector [vec(W), vec(H), x, b]
  double objective = 0.0;          // residual norm at the final iterate
  std::vector<TraceEntry> trace;
  std::vector<std::vector<double>> iterates;  // populated when keep_iterates is set
  int iterations = 0;
};

/// Alternating factor optimization under the full constraint system: finds a
/// feasible starting assignment, then alternately re-optimizes one factor
/// (together with all auxiliaries and binaries) while the other stays fixed.
/// Every half step starts from the previous iterate, so the objective is
/// non-increasing along the trace.
AmiqoResult run(const DenseMatrix& a, const ConstraintSystem& sys,
                const AmiqoOptions& opts = {});

/// Same, but starting from a caller-supplied feasible flat assignment.
/// Throws std::invalid_argument when `initial` fails validation at 1e-6.
AmiqoResult run_from(const DenseMatrix& a, const ConstraintSystem& sys,
                     const std::vector<double>& initial, const AmiqoOptions& opts = {});

/// Reads factor blocks out of a flat assignment of `sys`.
DenseMatrix extract_factor(const ConstraintSystem& sys, const std::vector<double>& v,
                           VarKind kind);

}  // namespace combifd::amiqo
