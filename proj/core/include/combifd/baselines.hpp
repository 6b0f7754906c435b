#pragma once

#include <cstdint>
#include <vector>

#include "combifd/matrix.hpp"

namespace combifd::baselines {

struct NmfResult {
  DenseMatrix w, h;
  std::vector<double> objective_trace;  // Frobenius residual after each update sweep
};

/// Multiplicative-update nonnegative factorization. Factors are initialized
/// uniformly in [0.1, 1) from the seed; each sweep updates H then W with the
/// usual 1e-12 denominator guard, which keeps the residual non-increasing.
/// Throws std::invalid_argument when `a` has negative entries.
NmfResult nmf_multiplicative(const DenseMatrix& a, int k, int iters, uint64_t seed);

/// Same update loop from caller-supplied strictly nonnegative factors.
NmfResult nmf_from(const DenseMatrix& a, DenseMatrix w0, DenseMatrix h0, int iters);

struct KMeansState {
  DenseMatrix centroids;        // m x k
  std::vector<int> assignment;  // per point, in [0, k)
  double inertia = 0.0;         // sum of squared distances to assigned centroids
  int iterations = 0;
  std::vector<std::vector<int>> assignment_trace;  // after each Lloyd sweep
};

/// Lloyd iterations from an initial assignment. Nearest-centroid ties break
/// to the lowest cluster index; a cluster that loses all its points keeps
/// its previous centroid. Stops when the assignment is stable.
KMeansState kmeans(const DenseMatrix& points, int k, const std::vector<int>& init_assignment,
                   int max_iters = 100);

/// Seeded uniform random initial assignment (every cluster hit at least once
/// when n >= k, by round-robin base + shuffle).
std::vector<int> random_assignment(int n, int k, uint64_t seed);

}  // namespace combifd::baselines
