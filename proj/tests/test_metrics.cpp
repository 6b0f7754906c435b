#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "combifd/matrix.hpp"
#include "combifd/metrics.hpp"
#include "combifd/rng.hpp"

using namespace combifd;

namespace {

/// brute force over all label permutations
double brute_accuracy(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  int best = 0;
  do {
    int agree = 0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (pred[j] >= 0 && truth[j] >= 0 && perm[pred[j]] == truth[j]) ++agree;
    }
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

double brute_matching_value(const DenseMatrix& w) {
  const int n = w.rows();
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += w(i, perm[i]);
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("one-hot columns give one-element supports and matching hard labels") {
  DenseMatrix w{{1.0, 0.0}, {0.0, 1.0}};
  DenseMatrix h{{1.0, 0.0, 1.0}, {0.0, 1.0, 0.0}};
  metrics::ClusterAssignment a = metrics::assign_clusters(w, h);
  CHECK(a.hard == std::vector<int>{0, 1, 0});
  CHECK(a.soft == std::vector<std::vector<int>>{{0}, {1}, {0}});
}

TEST_CASE("column sums of W weigh the hard argmax") {
  // basis 0 has total weight 3, basis 1 weight 1: h of (0.4, 1.0) still goes to 0
  DenseMatrix w{{3.0, 1.0}};
  DenseMatrix h{{0.4}, {1.0}};
  metrics::ClusterAssignment a = metrics::assign_clusters(w, h);
  CHECK(a.hard[0] == 0);  // 3*0.4 = 1.2 > 1*1.0
  DenseMatrix w2{{1.0, 1.0}};
  metrics::ClusterAssignment b = metrics::assign_clusters(w2, h);
  CHECK(b.hard[0] == 1);
}

TEST_CASE("points with no basis weight are left unassigned") {
  DenseMatrix w{{1.0, 1.0}};
  DenseMatrix h{{0.0, 0.5}, {0.0, 0.2}};
  metrics::ClusterAssignment a = metrics::assign_clusters(w, h);
  CHECK(a.hard[0] == -1);
  CHECK(a.hard[1] == 0);
  CHECK(a.soft[0].empty());
  // an unassigned point can never agree
  CHECK(metrics::accuracy_hard({-1, 0}, {0, 0}) == doctest::Approx(0.5));
}

TEST_CASE("supports use a relative threshold") {
  DenseMatrix h{{1.0}, {0.5}, {0.0009}, {0.0}};
  auto s = metrics::soft_supports(h, 1e-3);
  CHECK(s[0] == std::vector<int>{0, 1});  // 0.0009 < 1e-3 * 1.0 drops out
  auto s2 = metrics::soft_supports(h, 1e-4);
  CHECK(s2[0] == std::vector<int>{0, 1, 2});
}

TEST_CASE("hard accuracy is permutation invariant and matches brute force") {
  Rng rng(13);
  for (int rep = 0; rep < 200; ++rep) {
    int k = 2 + static_cast<int>(rng.uniform_int(0, 4));  // up to 6
    int n = 5 + static_cast<int>(rng.uniform_int(0, 10));
    std::vector<int> pred(n), truth(n);
    for (int j = 0; j < n; ++j) {
      pred[j] = static_cast<int>(rng.uniform_int(0, k - 1));
      truth[j] = static_cast<int>(rng.uniform_int(0, k - 1));
      if (rng.next_double() < 0.05) pred[j] = -1;
    }
    double got = metrics::accuracy_hard(pred, truth);
    CHECK(got == doctest::Approx(brute_accuracy(pred, truth, k)).epsilon(1e-12));
  }
}

TEST_CASE("relabeling the prediction does not change hard accuracy") {
  std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  std::vector<int> pred = {2, 2, 0, 0, 1, 1};
  CHECK(metrics::accuracy_hard(pred, truth) == doctest::Approx(1.0));
  CHECK(metrics::accuracy_hard(truth, truth) == doctest::Approx(1.0));
}

TEST_CASE("soft accuracy endpoints") {
  // identical clusterings score perfectly per cluster: k summed Jaccards,
  // so k/n under the point normalization and 1 under the cluster one
  std::vector<std::vector<int>> a = {{0}, {0, 1}, {1}};
  CHECK(metrics::accuracy_soft(a, a, 2, true) == doctest::Approx(1.0));
  CHECK(metrics::accuracy_soft(a, a, 2) == doctest::Approx(2.0 / 3.0));
  // hand case: pred clusters {0,1} / {2}, truth clusters {0} / {1,2}.
  // Best bijection pairs them in order: 1/2 + 1/2 = 1 summed Jaccard.
  std::vector<std::vector<int>> p = {{0}, {0}, {1}};
  std::vector<std::vector<int>> t = {{0}, {1}, {1}};
  CHECK(metrics::accuracy_soft(p, t, 2) == doctest::Approx(1.0 / 3.0));
  CHECK(metrics::accuracy_soft(p, t, 2, true) == doctest::Approx(0.5));
  std::vector<std::vector<int>> q = {{0}, {1}, {0}};
  std::vector<std::vector<int>> r = {{1}, {0}, {1}};
  CHECK(metrics::accuracy_soft(q, r, 2, true) == doctest::Approx(1.0));
}

TEST_CASE("soft accuracy is invariant to positive column scaling of H") {
  Rng rng(31);
  DenseMatrix h(4, 7);
  for (double& v : h.data()) v = rng.next_double() < 0.4 ? 0.0 : rng.uniform(0.1, 1.0);
  DenseMatrix h2 = h;
  for (int j = 0; j < 7; ++j) {
    double s = rng.uniform(0.5, 5.0);
    for (int i = 0; i < 4; ++i) h2(i, j) *= s;
  }
  CHECK(metrics::soft_supports(h) == metrics::soft_supports(h2));
}

TEST_CASE("soft accuracy of a clean clustering under relabeling is 1") {
  std::vector<std::vector<int>> truth = {{0}, {0}, {1}, {1}, {2}};
  std::vector<std::vector<int>> pred = {{2}, {2}, {0}, {0}, {1}};
  CHECK(metrics::accuracy_soft(pred, truth, 3, true) == doctest::Approx(1.0));
}

TEST_CASE("matching equals the brute-force permutation optimum") {
  Rng rng(41);
  for (int rep = 0; rep < 60; ++rep) {
    int n = 2 + static_cast<int>(rng.uniform_int(0, 4));  // up to 6
    DenseMatrix w(n, n);
    for (double& v : w.data()) v = rng.uniform(-3.0, 3.0);
    std::vector<int> match = metrics::max_weight_matching(w);
    double total = 0.0;
    std::vector<bool> used(n, false);
    for (int i = 0; i < n; ++i) {
      REQUIRE(match[i] >= 0);
      REQUIRE(match[i] < n);
      REQUIRE(!used[match[i]]);
      used[match[i]] = true;
      total += w(i, match[i]);
    }
    CHECK(total == doctest::Approx(brute_matching_value(w)).epsilon(1e-10));
  }
}
