#include "combifd/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "combifd/rng.hpp"

namespace combifd::baselines {
namespace {
constexpr double kGuard = 1e-12;
}

NmfResult nmf_from(const DenseMatrix& a, DenseMatrix w0, DenseMatrix h0, int iters) {
  const int m = a.rows(), n = a.cols(), k = w0.cols();
  if (w0.rows() != m || h0.rows() != k || h0.cols() != n)
    throw std::invalid_argument("nmf_from: factor shapes do not compose with a");
  for (double v : a.data()) {
    if (v < 0.0) throw std::invalid_argument("nmf_from: input has negative entries");
  }
  NmfResult res{std::move(w0), std::move(h0), {}};
  DenseMatrix& w = res.w;
  DenseMatrix& h = res.h;
  for (int it = 0; it < iters; ++it) {
    // H <- H .* (W'A) ./ (W'WH + guard)
    DenseMatrix wt = w.transposed();
    DenseMatrix wta = matmul(wt, a);
    DenseMatrix wtwh = matmul(matmul(wt, w), h);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < n; ++j) h(i, j) *= wta(i, j) / (wtwh(i, j) + kGuard);
    }
    // W <- W .* (AH') ./ (WHH' + guard)
    DenseMatrix ht = h.transposed();
    DenseMatrix aht = matmul(a, ht);
    DenseMatrix whht = matmul(w, matmul(h, ht));
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < k; ++j) w(i, j) *= aht(i, j) / (whht(i, j) + kGuard);
    }
    res.objective_trace.push_back(residual_norm(a, w, h, 2));
  }
  return res;
}

NmfResult nmf_multiplicative(const DenseMatrix& a, int k, int iters, uint64_t seed) {
  if (k < 1) throw std::invalid_argument("nmf_multiplicative: k must be positive");
  Rng rng(seed);
  DenseMatrix w0(a.rows(), k), h0(k, a.cols());
  for (double& v : w0.data()) v = rng.uniform(0.1, 1.0);
  for (double& v : h0.data()) v = rng.uniform(0.1, 1.0);
  return nmf_from(a, std::move(w0), std::move(h0), iters);
}

std::vector<int> random_assignment(int n, int k, uint64_t seed) {
  if (k < 1 || n < 1) throw std::invalid_argument("random_assignment: need n,k >= 1");
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = i % k;  // every cluster covered when n >= k
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(out[i], out[rng.uniform_int(0, i)]);
  return out;
}

KMeansState kmeans(const DenseMatrix& points, int k, const std::vector<int>& init_assignment,
                   int max_iters) {
  const int m = points.rows(), n = points.cols();
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= #points");
  if (static_cast<int>(init_assignment.size()) != n)
    throw std::invalid_argument("kmeans: init assignment length != #points");
  for (int c : init_assignment) {
    if (c < 0 || c >= k) throw std::invalid_argument("kmeans: init assignment out of range");
  }

  KMeansState st;
  st.centroids = DenseMatrix(m, k);
  st.assignment = init_assignment;

  auto update_centroids = [&]() {
    std::vector<int> count(k, 0);
    DenseMatrix sum(m, k);
    for (int j = 0; j < n; ++j) {
      const int c = st.assignment[j];
      ++count[c];
      for (int i = 0; i < m; ++i) sum(i, c) += points(i, j);
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] == 0) continue;  // emptied cluster keeps its centroid
      for (int i = 0; i < m; ++i) st.centroids(i, c) = sum(i, c) / count[c];
    }
  };
  auto sqdist = [&](int j, int c) {
    double d = 0.0;
    for (int i = 0; i < m; ++i) {
      const double r = points(i, j) - st.centroids(i, c);
      d += r * r;
    }
    return d;
  };

  update_centroids();
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (int j = 0; j < n; ++j) {
      int best = 0;
      double best_d = sqdist(j, 0);
      for (int c = 1; c < k; ++c) {
        const double d = sqdist(j, c);
        if (d < best_d) {  // strict: ties stay at the lowest index
          best_d = d;
          best = c;
        }
      }
      if (best != st.assignment[j]) {
        st.assignment[j] = best;
        changed = true;
      }
    }
    st.assignment_trace.push_back(st.assignment);
    st.iterations = it + 1;
    if (!changed) break;
    update_centroids();
  }

  st.inertia = 0.0;
  for (int j = 0; j < n; ++j) st.inertia += sqdist(j, st.assignment[j]);
  return st;
}

}  // namespace combifd::baselines
