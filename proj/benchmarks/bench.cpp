#include <benchmark/benchmark.h>

#include "combifd/amiqo.hpp"
#include "combifd/constraints.hpp"
#include "combifd/matrix.hpp"
#include "combifd/miqp.hpp"
#include "combifd/qp.hpp"
#include "combifd/rng.hpp"

using namespace combifd;

namespace {

DenseMatrix random_matrix(int r, int c, Rng& rng) {
  DenseMatrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(0.0, 1.0);
  return m;
}

void bm_qp_dense(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  qp::QpModel m = qp::QpModel::make(n);
  DenseMatrix g = random_matrix(n, n, rng);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double q = (i == j) ? 0.1 : 0.0;
      for (int t = 0; t < n; ++t) q += g(t, i) * g(t, j);
      m.q_terms.emplace_back(i, j, q);
    }
  for (int i = 0; i < n; ++i) {
    m.c[i] = rng.uniform(-1.0, 1.0);
    m.lo[i] = 0.0;
    m.hi[i] = 1.0;
  }
  for (auto _ : state) {
    qp::QpSolution s = qp::solve_qp(m);
    benchmark::DoNotOptimize(s.objective);
  }
}
BENCHMARK(bm_qp_dense)->Arg(8)->Arg(32)->Arg(64);

void bm_miqp_sparsity(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  const int k = 3;
  DenseMatrix a = random_matrix(4, n, rng);
  DenseMatrix w = random_matrix(4, k, rng);
  ConstraintSystem sys = build_sparsity({4, k, n, 0, 0}, 1);
  ConstraintSystem reduced = sys.fix_factor(FixedFactor::W, w);
  qp::QpModel m = qp::from_system(reduced);
  qp::add_least_squares_objective(m, reduced, a, w);
  std::vector<int> bins;
  for (int i = 0; i < reduced.var_count(); ++i)
    if (reduced.is_binary(i)) bins.push_back(i);
  for (auto _ : state) {
    miqp::MiqpResult r = miqp::solve_miqp(m, bins);
    benchmark::DoNotOptimize(r.incumbent.objective);
  }
}
BENCHMARK(bm_miqp_sparsity)->Arg(4)->Arg(16)->Arg(32);

void bm_amiqo_sweep(benchmark::State& state) {
  Rng rng(3);
  DenseMatrix a = random_matrix(6, 12, rng);
  ConstraintSystem sys = build_sparsity({6, 3, 12, 0, 0}, 1);
  for (auto _ : state) {
    amiqo::AmiqoOptions opts;
    opts.seed = 5;
    opts.max_iters = 2;
    amiqo::AmiqoResult r = amiqo::run(a, sys, opts);
    benchmark::DoNotOptimize(r.objective);
  }
}
BENCHMARK(bm_amiqo_sweep);

}  // namespace

BENCHMARK_MAIN();
