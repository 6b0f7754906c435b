#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "combifd/constraints.hpp"
#include "combifd/matrix.hpp"

namespace combifd::phasemap {

/// Ground truth carried by synthetic instances.
struct PhaseMapTruth {
  int k_true = 0;
  int q_copies = 1;    // stretched copies per free pattern (incl. the free one)
  double gamma = 0.0;  // stretch granularity between consecutive copies
  std::vector<std::vector<int>> supports;  // per point: sorted list of phase ids
  DenseMatrix concentrations;              // k_true x n, per-phase weight
  DenseMatrix w, h;                        // full factors, k_true*q_copies basis columns
};

struct PhaseMapInstance {
  DenseMatrix compositions;                 // n x 3, rows on the 2-simplex
  std::vector<std::pair<int, int>> edges;   // neighbor graph over points
  std::vector<double> grid;                 // m sampling positions
  DenseMatrix signals;                      // m x n, nonnegative
  std::optional<PhaseMapTruth> truth;

  /// Shape / simplex / connectivity / nonnegativity checks; throws on failure.
  void check() const;
};

struct ShiftConfig {
  int q_copies = 1;
  double gamma = 0.0;  // >= 0; 0 makes every copy identical to its free pattern

  int total_k(int free_k) const { return free_k * q_copies; }
};

/// Handles into the per-(group, point) presence binaries so the connectivity
/// builders can reuse them.
struct GibbsHandles {
  int first_bin = -1;  // flat binary block index of b_{group 0, point 0}
  int groups = 0;
  int group_size = 1;
  int bin(int group, int point) const { return first_bin + point * groups + group; }
};

/// Presence binaries plus the at-most-M mixture rule: h_{l,j} <= b_{z,j} for
/// every basis column l in group z, and sum_z b_{z,j} <= M per point. The
/// group structure treats the stretched copies of one pattern as a single
/// compound.
GibbsHandles add_gibbs(ConstraintSystem& sys, int m_phases, int group_size);
ConstraintSystem build_gibbs(const Dims& dims, int m_phases, int group_size);

/// Equality rows tying each stretched copy column of W to the linear stretch
/// of its free pattern: source row i of the free column contributes weights
/// (1-frac, frac) to copy rows floor(i/s) and ceil(i/s) with s = 1 + l*gamma;
/// targets past the grid are dropped (mass shifts off the boundary).
void add_shifting(ConstraintSystem& sys, const std::vector<double>& grid,
                  const ShiftConfig& cfg);
ConstraintSystem build_shifting(const Dims& dims, const std::vector<double>& grid,
                                const ShiftConfig& cfg);

/// The stretch applied by add_shifting, as a direct routine: returns the
/// stretched copy of `src` (same length).
std::vector<double> stretch_pattern(const std::vector<double>& src, double stretch);

/// Exact connectivity per group via single-commodity flow: each group gets a
/// Variable layout of the flow connectivity encoding, one block per group:
/// n binary root indicators followed (in the aux space) by two directed
/// flows per edge and one source arc per point.
struct FlowHandles {
  int groups = 0;
  int n = 0;
  int ne = 0;
  int first_root_bin = 0;  // binary index of root(0, 0)
  int first_aux = 0;       // aux index of arc(0, 0, false)
  int root(int group, int point) const { return first_root_bin + group * n + point; }
  int arc(int group, int edge, bool reverse) const {
    return first_aux + group * (2 * ne + n) + 2 * edge + (reverse ? 1 : 0);
  }
  int source(int group, int point) const {
    return first_aux + group * (2 * ne + n) + 2 * ne + point;
  }
};

/// binary root indicator per point (exactly one root), nonnegative arc flows
/// on both edge directions plus a source arc per point capped by n*root, and
/// conservation in - out + source = presence at every point. Flows are capped
/// by n*presence at both endpoints, so a feasible flow exists iff the active
/// points form one connected patch (empty groups are fine). Presence
/// binaries come from `y` (shared with the mixture rule).
FlowHandles add_connectivity_flow(ConstraintSystem& sys,
                                  const std::vector<std::pair<int, int>>& edges,
                                  const GibbsHandles& y);
ConstraintSystem build_connectivity_flow(const Dims& dims,
                                         const std::vector<std::pair<int, int>>& edges);

/// Collinearity relaxation: for every straight-line point triple
/// (v1, v2, v3) with v2 strictly between, and every basis row l, a fresh
/// binary t realizes h_{l,v2} >= min(h_{l,v1}, h_{l,v3}) as two big-M rows.
/// Requires finite upper bounds on the H entries involved (U is their max);
/// throws std::invalid_argument otherwise. `tol` bounds the cross product
/// magnitude for accepting a triple.
void add_connectivity_collinear(ConstraintSystem& sys, const DenseMatrix& compositions,
                                double tol = 1e-6);

/// Per-point column normalization sum_l h_{l,j} = 1 with h in [0,1].
void add_column_normalization(ConstraintSystem& sys);

struct GenParams {
  int n = 28;
  int m = 650;
  int k_true = 6;
  int m_phases = 3;       // Gibbs cap M
  int peaks = 12;         // Gaussian peaks per pattern (<= 42)
  double shift_range = 0.0;  // max relative stretch across copies
  int q_copies = 1;          // discrete stretch levels when shift_range > 0
  double noise = 0.0;        // uniform nonnegative noise amplitude
};

/// Synthetic composition-spread instance on a triangular lattice with
/// connected per-phase regions, at most m_phases per point, discrete
/// per-point stretches and recorded ground truth. Deterministic in the seed.
PhaseMapInstance gen_synthetic(uint64_t seed, const GenParams& params = {});

/// Instance file round trip: JSON {compositions, edges, grid,
/// signals_csv_path, truth?} with the signal matrix in a sidecar CSV
/// (path resolved relative to the JSON file).
PhaseMapInstance read_instance(const std::string& json_path);
void write_instance(const std::string& json_path, const std::string& signals_csv_path,
                    const PhaseMapInstance& inst);

/// True when every listed support set is connected in the induced subgraph
/// (BFS); empty sets count as connected.
bool supports_connected(int n, const std::vector<std::pair<int, int>>& edges,
                        const std::vector<std::vector<int>>& supports, int groups);

}  // namespace combifd::phasemap
