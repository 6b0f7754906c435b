#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "combifd/amiqo.hpp"
#include "combifd/baselines.hpp"
#include "combifd/matrix.hpp"
#include "combifd/rng.hpp"

using namespace combifd;

namespace {

DenseMatrix random_matrix(int r, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
  DenseMatrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

/// Flat assignment for a sparsity system from an explicit clustering.
std::vector<double> flat_from_clustering(const ConstraintSystem& sys, const DenseMatrix& w,
                                         const std::vector<int>& assign) {
  const Dims& d = sys.dims();
  std::vector<double> v(sys.var_count(), 0.0);
  for (int j = 0; j < d.k; ++j)
    for (int i = 0; i < d.m; ++i) v[sys.flat_index(VariableRef::w(i, j))] = w(i, j);
  for (int j = 0; j < d.n; ++j) {
    v[sys.flat_index(VariableRef::h(assign[j], j))] = 1.0;
    v[sys.flat_index(VariableRef::bin(j * d.k + assign[j]))] = 1.0;
  }
  return v;
}

DenseMatrix centroids_of(const DenseMatrix& points, int k, const std::vector<int>& assign) {
  DenseMatrix c(points.rows(), k);
  std::vector<int> count(k, 0);
  for (int j = 0; j < points.cols(); ++j) {
    ++count[assign[j]];
    for (int i = 0; i < points.rows(); ++i) c(i, assign[j]) += points(i, j);
  }
  for (int s = 0; s < k; ++s)
    if (count[s] > 0)
      for (int i = 0; i < points.rows(); ++i) c(i, s) /= count[s];
  return c;
}

std::vector<int> hard_from_h(const DenseMatrix& h) {
  std::vector<int> out(h.cols(), -1);
  for (int j = 0; j < h.cols(); ++j) {
    double best = -1.0;
    for (int i = 0; i < h.rows(); ++i) {
      if (h(i, j) > best + 1e-12) {
        best = h(i, j);
        out[j] = i;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("a zero-residual start is preserved") {
  Rng rng(3);
  DenseMatrix w = random_matrix(4, 2, rng, 0.1, 1.0);
  std::vector<int> assign = {0, 1, 0, 1, 1};
  ConstraintSystem sys = build_sparsity({4, 2, 5, 0, 0}, 1);
  DenseMatrix h(2, 5);
  for (int j = 0; j < 5; ++j) h(assign[j], j) = 1.0;
  DenseMatrix a = matmul(w, h);
  std::vector<double> init = flat_from_clustering(sys, w, assign);
  amiqo::AmiqoOptions opts;
  opts.max_iters = 3;
  amiqo::AmiqoResult r = amiqo::run_from(a, sys, init, opts);
  CHECK(r.objective <= 1e-8);
  CHECK(sys.validate(r.assignment).empty());
}

TEST_CASE("trace objectives never increase") {
  Rng rng(9);
  for (int rep = 0; rep < 4; ++rep) {
    DenseMatrix a = random_matrix(5, 6, rng);
    ConstraintSystem sys = build_sparsity({5, 3, 6, 0, 0}, rep % 2 + 1);
    amiqo::AmiqoOptions opts;
    opts.seed = 100 + rep;
    opts.max_iters = 4;
    amiqo::AmiqoResult r = amiqo::run(a, sys, opts);
    REQUIRE(!r.trace.empty());
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& t : r.trace) {
      CHECK(t.objective <= prev + 1e-9);
      prev = t.objective;
    }
    CHECK(sys.validate(r.assignment).empty());
    CHECK(r.objective == doctest::Approx(r.trace.back().objective));
  }
}

TEST_CASE("the first half step matches the direct least-squares step") {
  Rng rng(17);
  DenseMatrix a = random_matrix(4, 5, rng);
  ConstraintSystem sys = build_nonnegativity({4, 2, 5, 0, 0});
  DenseMatrix w0 = random_matrix(4, 2, rng, 0.1, 1.0);
  DenseMatrix h0 = random_matrix(2, 5, rng, 0.1, 1.0);
  std::vector<double> init(sys.var_count(), 0.0);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 4; ++i) init[sys.flat_index(VariableRef::w(i, j))] = w0(i, j);
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 2; ++i) init[sys.flat_index(VariableRef::h(i, j))] = h0(i, j);
  amiqo::AmiqoOptions opts;
  opts.max_iters = 1;
  opts.keep_iterates = true;
  amiqo::AmiqoResult r = amiqo::run_from(a, sys, init, opts);
  REQUIRE(r.iterates.size() >= 1);
  DenseMatrix w_step = amiqo::extract_factor(sys, r.iterates[0], VarKind::W);
  DenseMatrix direct = qp::solve_nnls_step(a, h0, qp::NnlsSide::SolveForW, sys);
  double w_norm = 0.0, diff = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) {
      diff = std::max(diff, std::abs(w_step(i, j) - direct(i, j)));
      w_norm = std::max(w_norm, std::abs(direct(i, j)));
    }
  CHECK(diff <= 1e-6 * std::max(1.0, w_norm));
}

TEST_CASE("unit-support alternation reproduces Lloyd sweeps") {
  Rng rng(29);
  for (int rep = 0; rep < 3; ++rep) {
    const int m = 3, k = 3, n = 10;
    DenseMatrix points = random_matrix(m, n, rng);
    std::vector<int> init = baselines::random_assignment(n, k, 40 + rep);
    baselines::KMeansState lloyd = baselines::kmeans(points, k, init);
    REQUIRE(!lloyd.assignment_trace.empty());

    ConstraintSystem sys = build_sparsity({m, k, n, 0, 0}, 1);
    std::vector<double> start =
        flat_from_clustering(sys, centroids_of(points, k, init), init);
    amiqo::AmiqoOptions opts;
    opts.max_iters = static_cast<int>(lloyd.assignment_trace.size());
    opts.rel_tol = 0.0;
    opts.keep_iterates = true;
    amiqo::AmiqoResult r = amiqo::run_from(points, sys, start, opts);

    for (std::size_t t = 0; t < lloyd.assignment_trace.size(); ++t) {
      // iterate 2t is the W half of sweep t+1, 2t+1 the H half
      std::size_t idx = 2 * t + 1;
      if (idx >= r.iterates.size()) break;
      DenseMatrix h = amiqo::extract_factor(sys, r.iterates[idx], VarKind::H);
      CHECK(hard_from_h(h) == lloyd.assignment_trace[t]);
    }
  }
}

TEST_CASE("improve-only runs stay monotone and feasible") {
  Rng rng(53);
  DenseMatrix a = random_matrix(4, 6, rng);
  ConstraintSystem sys = build_sparsity({4, 3, 6, 0, 0}, 2);
  amiqo::AmiqoOptions opts;
  opts.seed = 7;
  opts.max_iters = 4;
  opts.improve_only = true;
  amiqo::AmiqoResult r = amiqo::run(a, sys, opts);
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& t : r.trace) {
    CHECK(t.objective <= prev + 1e-9);
    prev = t.objective;
  }
  CHECK(sys.validate(r.assignment).empty());
}

TEST_CASE("entrywise residual objective is supported") {
  Rng rng(61);
  DenseMatrix a = random_matrix(3, 4, rng);
  ConstraintSystem sys = build_nonnegativity({3, 2, 4, 0, 0});
  amiqo::AmiqoOptions opts;
  opts.p = 1;
  opts.seed = 2;
  opts.max_iters = 3;
  amiqo::AmiqoResult r = amiqo::run(a, sys, opts);
  CHECK(r.objective ==
        doctest::Approx(residual_norm(a, r.factors.w, r.factors.h, 1)).epsilon(1e-8));
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& t : r.trace) {
    CHECK(t.objective <= prev + 1e-9);
    prev = t.objective;
  }
}

TEST_CASE("identical seeds give identical runs") {
  Rng rng(71);
  DenseMatrix a = random_matrix(4, 5, rng);
  ConstraintSystem sys = build_sparsity({4, 2, 5, 0, 0}, 1);
  amiqo::AmiqoOptions opts;
  opts.seed = 99;
  opts.max_iters = 3;
  amiqo::AmiqoResult r1 = amiqo::run(a, sys, opts);
  amiqo::AmiqoResult r2 = amiqo::run(a, sys, opts);
  CHECK(r1.assignment == r2.assignment);
  CHECK(r1.objective == r2.objective);
}

TEST_CASE("infeasible initial assignments are rejected") {
  DenseMatrix a{{1.0, 0.0}, {0.0, 1.0}};
  ConstraintSystem sys = build_sparsity({2, 2, 2, 0, 0}, 1);
  std::vector<double> bad(sys.var_count(), 0.5);
  CHECK_THROWS_AS(amiqo::run_from(a, sys, bad, {}), std::invalid_argument);
}

TEST_CASE("factor extraction reads the right blocks") {
  ConstraintSystem sys = build_nonnegativity({2, 2, 3, 0, 0});
  std::vector<double> v(sys.var_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  DenseMatrix w = amiqo::extract_factor(sys, v, VarKind::W);
  DenseMatrix h = amiqo::extract_factor(sys, v, VarKind::H);
  CHECK(w.rows() == 2);
  CHECK(w.cols() == 2);
  CHECK(h.rows() == 2);
  CHECK(h.cols() == 3);
  CHECK(w(0, 0) == doctest::Approx(v[sys.flat_index(VariableRef::w(0, 0))]));
  CHECK(h(1, 2) == doctest::Approx(v[sys.flat_index(VariableRef::h(1, 2))]));
}
