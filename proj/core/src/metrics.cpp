#include "combifd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace combifd::metrics {
namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

int label_count(const std::vector<int>& labels) {
  int k = 0;
  for (int l : labels) {
    if (l < -1) throw std::invalid_argument("labels must be >= -1");
    k = std::max(k, l + 1);
  }
  return k;
}
}  // namespace

std::vector<int> max_weight_matching(const DenseMatrix& weights) {
  if (weights.rows() != weights.cols())
    throw std::invalid_argument("max_weight_matching: matrix must be square");
  const int n = weights.rows();
  if (n == 0) return {};
  // Hungarian method with potentials on the negated weights
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -weights(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> match(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j]) match[p[j] - 1] = j - 1;
  }
  return match;
}

ClusterAssignment assign_clusters(const DenseMatrix& w, const DenseMatrix& h,
                                  double theta_rel) {
  if (w.cols() != h.rows())
    throw std::invalid_argument("assign_clusters: factor shapes do not compose");
  const int k = h.rows(), n = h.cols();
  std::vector<double> dw(k, 0.0);  // column sums of W
  for (int i = 0; i < w.rows(); ++i) {
    for (int s = 0; s < k; ++s) dw[s] += w(i, s);
  }
  ClusterAssignment out;
  out.hard.resize(n);
  for (int j = 0; j < n; ++j) {
    int best = -1;
    double best_score = 0.0;
    bool all_zero = true;
    for (int s = 0; s < k; ++s) {
      const double score = dw[s] * h(s, j);
      if (score != 0.0) all_zero = false;
      if (best < 0 || score > best_score) {
        best = s;
        best_score = score;
      }
    }
    out.hard[j] = all_zero ? -1 : best;
  }
  out.soft = soft_supports(h, theta_rel);
  return out;
}

std::vector<std::vector<int>> soft_supports(const DenseMatrix& h, double theta_rel) {
  const int k = h.rows(), n = h.cols();
  std::vector<std::vector<int>> out(n);
  for (int j = 0; j < n; ++j) {
    double colmax = 0.0;
    for (int s = 0; s < k; ++s) colmax = std::max(colmax, h(s, j));
    if (colmax <= 0.0) continue;
    const double theta = theta_rel * colmax;
    for (int s = 0; s < k; ++s) {
      if (h(s, j) > theta) out[j].push_back(s);
    }
  }
  return out;
}

double accuracy_hard(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("accuracy_hard: label vectors differ in length");
  const int n = static_cast<int>(pred.size());
  if (n == 0) return 1.0;
  const int k = std::max({label_count(pred), label_count(truth), 1});
  if (k > 20) throw std::invalid_argument("accuracy_hard: more than 20 clusters");
  DenseMatrix overlap(k, k);
  for (int j = 0; j < n; ++j) {
    if (pred[j] >= 0 && truth[j] >= 0) overlap(pred[j], truth[j]) += 1.0;
  }
  const std::vector<int> match = max_weight_matching(overlap);
  double agree = 0.0;
  for (int i = 0; i < k; ++i) agree += overlap(i, match[i]);
  return agree / n;
}

double accuracy_soft(const std::vector<std::vector<int>>& pred,
                     const std::vector<std::vector<int>>& truth, int k,
                     bool normalize_by_k) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("accuracy_soft: support lists differ in length");
  if (k < 1 || k > 20) throw std::invalid_argument("accuracy_soft: need 1 <= k <= 20");
  const int n = static_cast<int>(pred.size());
  // flip per-point supports into per-cluster membership masks
  std::vector<std::vector<char>> pm(k, std::vector<char>(n, 0)), tm(k, std::vector<char>(n, 0));
  auto fill = [&](const std::vector<std::vector<int>>& sets, std::vector<std::vector<char>>& mask) {
    for (int j = 0; j < n; ++j) {
      for (int s : sets[j]) {
        if (s < 0 || s >= k) throw std::invalid_argument("accuracy_soft: label out of range");
        mask[s][j] = 1;
      }
    }
  };
  fill(pred, pm);
  fill(truth, tm);
  DenseMatrix jac(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      int inter = 0, uni = 0;
      for (int j = 0; j < n; ++j) {
        inter += pm[a][j] & tm[b][j];
        uni += pm[a][j] | tm[b][j];
      }
      jac(a, b) = (uni == 0) ? 1.0 : static_cast<double>(inter) / uni;
    }
  }
  const std::vector<int> match = max_weight_matching(jac);
  double total = 0.0;
  for (int a = 0; a < k; ++a) total += jac(a, match[a]);
  const double denom = normalize_by_k ? k : std::max(n, 1);
  return std::clamp(total / denom, 0.0, 1.0);
}

}  // namespace combifd::metrics
