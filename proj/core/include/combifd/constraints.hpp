#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "combifd/matrix.hpp"

namespace combifd {

/// Variable space of the constraint system: [vec(W), vec(H), x, b] where
/// vec(.) stacks columns. b entries are binary, x entries are free reals.
struct Dims {
  int m = 0;      // rows of W (features)
  int k = 0;      // columns of W / rows of H (total basis count)
  int n = 0;      // columns of H (data points)
  int n_aux = 0;  // real auxiliaries x
  int n_bin = 0;  // binaries b

  bool operator==(const Dims&) const = default;
};

enum class VarKind { W, H, Aux, Bin };

struct VariableRef {
  VarKind kind = VarKind::W;
  int i = 0;  // row (W/H) or flat index (Aux/Bin)
  int j = 0;  // column (W/H only)

  static VariableRef w(int i, int j) { return {VarKind::W, i, j}; }
  static VariableRef h(int i, int j) { return {VarKind::H, i, j}; }
  static VariableRef aux(int i) { return {VarKind::Aux, i, 0}; }
  static VariableRef bin(int i) { return {VarKind::Bin, i, 0}; }

  bool operator==(const VariableRef&) const = default;
  auto operator<=>(const VariableRef&) const = default;
};

enum class Sense { LessEq, Eq };

/// One row of C v <= d (or = d). Terms are kept sparse and canonical:
/// duplicate refs are pre-summed, zero coefficients dropped.
struct LinearRow {
  std::vector<std::pair<VariableRef, double>> terms;
  Sense sense = Sense::LessEq;
  double rhs = 0.0;
};

/// Which factor has been substituted out by fix_factor.
enum class FixedFactor { None, W, H };

struct Violation {
  enum class Type { Row, LowerBound, UpperBound, Integrality };
  Type type;
  int index;      // row index, or flat variable index for bound/integrality
  double amount;  // signed violation magnitude (positive = infeasible)
};

/// Symbolic system C [vec(W), vec(H), x, b]^T <= d plus per-variable bounds.
/// Immutable by convention once handed to a solver; builders append.
class ConstraintSystem {
 public:
  ConstraintSystem() = default;
  explicit ConstraintSystem(Dims dims);

  const Dims& dims() const { return dims_; }
  FixedFactor fixed_factor() const { return fixed_; }
  const std::vector<LinearRow>& rows() const { return rows_; }

  /// Number of flat variables in the (possibly reduced) space.
  int var_count() const;

  /// Flat index of a ref in order [vec(W), vec(H), x, b], skipping the fixed
  /// factor block if any. Throws std::out_of_range on bad indices or refs to
  /// the fixed factor.
  int flat_index(const VariableRef& ref) const;
  VariableRef unflatten(int flat) const;
  bool is_binary(int flat) const;

  double lower(int flat) const { return lower_[flat]; }
  double upper(int flat) const { return upper_[flat]; }
  void set_lower(const VariableRef& ref, double v) { lower_[flat_index(ref)] = v; }
  void set_upper(const VariableRef& ref, double v) { upper_[flat_index(ref)] = v; }
  void set_lower_flat(int flat, double v) { lower_[flat] = v; }
  void set_upper_flat(int flat, double v) { upper_[flat] = v; }

  /// Appends a row after canonicalization and range checks.
  void add_row(LinearRow row);

  /// Grow the auxiliary / binary blocks; returns the first new index.
  /// Binaries carry implicit [0,1] bounds.
  int add_aux_vars(int count);
  int add_binary_vars(int count);

  /// Substitute the given factor by constants: all terms on that factor are
  /// folded into the rhs, bounds for it are dropped. Rows left with no terms
  /// are kept (constant rows) so infeasibility stays detectable.
  ConstraintSystem fix_factor(FixedFactor which, const DenseMatrix& values) const;

  /// Checks rows, bounds and binary integrality at tolerance tol. An empty
  /// report means feasible.
  std::vector<Violation> validate(const std::vector<double>& v, double tol = 1e-6) const;

  static constexpr double kInf = std::numeric_limits<double>::infinity();

 private:
  Dims dims_;
  FixedFactor fixed_ = FixedFactor::None;
  std::vector<LinearRow> rows_;
  std::vector<double> lower_, upper_;  // indexed by flat variable
};

/// Nonnegativity as variable bounds on every W and H entry.
ConstraintSystem build_nonnegativity(const Dims& dims);
void add_nonnegativity(ConstraintSystem& sys);

/// L0 sparsity per data point: binaries b_{i,j} (cluster i, point j, flat
/// index j*k+i), rows h_{i,j} <= b_{i,j}, per-point normalization
/// sum_i h_{i,j} = 1 and support cap sum_i b_{i,j} <= S. Includes
/// nonnegativity. Returns the index of the first sparsity binary via
/// *first_bin when requested.
ConstraintSystem build_sparsity(const Dims& dims, int s, int* first_bin = nullptr);

/// Sparsity plus must-link (b equality) and cannot-link (b packing) rows.
/// Pairs are data-point indices; a pair in both lists is rejected.
ConstraintSystem build_semi_supervised(const Dims& dims, int s,
                                       const std::vector<std::pair<int, int>>& must_link,
                                       const std::vector<std::pair<int, int>>& cannot_link);

/// JSON round trip for user-authored systems:
/// {dims, rows:[{terms:[[kind,i,j,coef],...], sense, rhs}], bounds}.
std::string to_json(const ConstraintSystem& sys);
ConstraintSystem system_from_json(const std::string& text);
ConstraintSystem read_system_file(const std::string& path);
void write_system_file(const std::string& path, const ConstraintSystem& sys);

}  // namespace combifd
