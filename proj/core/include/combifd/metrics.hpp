#pragma once

#include <vector>

#include "combifd/matrix.hpp"

namespace combifd::metrics {

struct ClusterAssignment {
  std::vector<int> hard;               // per point; -1 means no basis weight at all
  std::vector<std::vector<int>> soft;  // per point, sorted support set
};

/// Hard labels from factors: point j goes to argmax_s of colsum(W_s) * H_{s,j}
/// (ties to the lowest s). A point whose weighted column is entirely zero is
/// flagged -1 and can never count as correct. Soft supports use the relative
/// threshold below.
ClusterAssignment assign_clusters(const DenseMatrix& w, const DenseMatrix& h,
                                  double theta_rel = 1e-3);

/// Per-point support sets {s : H_{s,j} > theta_rel * max_s H_{s,j}}; an
/// all-nonpositive column yields an empty set.
std::vector<std::vector<int>> soft_supports(const DenseMatrix& h, double theta_rel = 1e-3);

/// Maximum-agreement accuracy: best bijection between predicted and true
/// labels (overlap matrix padded square, solved exactly), divided by the
/// number of points. Labels must be < 20; -1 entries never match.
double accuracy_hard(const std::vector<int>& pred, const std::vector<int>& truth);

/// Set-overlap accuracy over per-point support sets: clusters are compared
/// as point sets under the best bijection using Jaccard scores, with
/// empty-vs-empty scoring 1. The summed score is divided by the number of
/// points (historical convention, clamped to [0,1]); set normalize_by_k to
/// divide by the cluster count instead.
double accuracy_soft(const std::vector<std::vector<int>>& pred,
                     const std::vector<std::vector<int>>& truth, int k,
                     bool normalize_by_k = false);

/// Exact max-weight perfect matching on a square cost matrix (Hungarian
/// method); returns the column matched to each row.
std::vector<int> max_weight_matching(const DenseMatrix& weights);

}  // namespace combifd::metrics
