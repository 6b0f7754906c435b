#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "combifd/constraints.hpp"
#include "combifd/matrix.hpp"
#include "combifd/qp.hpp"
#include "combifd/rng.hpp"

using namespace combifd;
using qp::QpModel;

namespace {

QpModel random_box_qp(int n, Rng& rng) {
  QpModel m = QpModel::make(n);
  // PSD Q = G'G + small diagonal
  DenseMatrix g(n, n);
  for (double& v : g.data()) v = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double q = 0.0;
      for (int k = 0; k < n; ++k) q += g(k, i) * g(k, j);
      if (i == j) q += 0.1;
      m.q_terms.emplace_back(i, j, q);
    }
  }
  for (int i = 0; i < n; ++i) {
    m.c[i] = rng.uniform(-2.0, 2.0);
    m.lo[i] = rng.uniform(-1.0, 0.0);
    m.hi[i] = m.lo[i] + rng.uniform(0.5, 2.0);
  }
  return m;
}

double objective_at(const QpModel& m, const Eigen::VectorXd& x) {
  double obj = m.c0 + m.c.dot(x);
  for (auto& [i, j, v] : m.q_terms) obj += (i == j ? 0.5 : 1.0) * v * x[i] * x[j];
  return obj;
}

// long-run projected gradient over box bounds, the independent oracle
Eigen::VectorXd projected_gradient(const QpModel& m, int iters = 200000) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(m.n, m.n);
  for (auto& [i, j, v] : m.q_terms) {
    q(i, j) = v;
    q(j, i) = v;
  }
  const double step = 0.9 / q.operatorNorm();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m.n);
  for (int i = 0; i < m.n; ++i) x[i] = std::clamp(0.0, m.lo[i], m.hi[i]);
  for (int it = 0; it < iters; ++it) {
    x -= step * (q * x + m.c);
    for (int i = 0; i < m.n; ++i) x[i] = std::clamp(x[i], m.lo[i], m.hi[i]);
  }
  return x;
}

}  // namespace

TEST_CASE("one-variable bound KKT") {
  QpModel m = QpModel::make(1);
  m.q_terms.emplace_back(0, 0, 2.0);  // objective x^2
  m.lo[0] = 1.0;
  qp::QpSolution s = qp::solve_qp(m);
  REQUIRE(s.status == qp::QpStatus::Optimal);
  CHECK(s.x[0] == doctest::Approx(1.0));
  CHECK(s.objective == doctest::Approx(1.0));
  REQUIRE(s.active.size() == 1);
  CHECK(s.active[0].type == qp::ActiveEntry::Type::Lower);
  CHECK(s.multipliers[0] == doctest::Approx(2.0));
}

TEST_CASE("symmetric two-variable row") {
  // min (x-2)^2 + (y-2)^2 s.t. x+y <= 2
  QpModel m = QpModel::make(2);
  m.q_terms.emplace_back(0, 0, 2.0);
  m.q_terms.emplace_back(1, 1, 2.0);
  m.c << -4.0, -4.0;
  m.c0 = 8.0;
  m.rows.push_back({{{0, 1.0}, {1, 1.0}}, 2.0, false});
  qp::QpSolution s = qp::solve_qp(m);
  REQUIRE(s.status == qp::QpStatus::Optimal);
  CHECK(s.x[0] == doctest::Approx(1.0));
  CHECK(s.x[1] == doctest::Approx(1.0));
  CHECK(s.objective == doctest::Approx(2.0));
  CHECK(qp::check_kkt(m, s).ok());
}

TEST_CASE("random box QPs match a projected-gradient oracle") {
  Rng rng(21);
  for (int rep = 0; rep < 8; ++rep) {
    QpModel m = random_box_qp(6, rng);
    qp::QpSolution s = qp::solve_qp(m);
    REQUIRE(s.status == qp::QpStatus::Optimal);
    CHECK(qp::check_kkt(m, s).ok());
    Eigen::VectorXd oracle = projected_gradient(m);
    CHECK(std::abs(s.objective - objective_at(m, oracle)) <= 1e-5);
  }
}

TEST_CASE("random QPs with rows satisfy KKT") {
  Rng rng(33);
  for (int rep = 0; rep < 12; ++rep) {
    QpModel m = random_box_qp(5, rng);
    for (int r = 0; r < 3; ++r) {
      qp::SparseRow row;
      for (int i = 0; i < 5; ++i) {
        if (rng.next_double() < 0.6) row.terms.emplace_back(i, rng.uniform(-1.0, 1.0));
      }
      if (row.terms.empty()) continue;
      row.rhs = rng.uniform(0.2, 1.5);
      row.eq = (r == 0 && rng.next_double() < 0.3);
      if (row.eq) row.rhs = rng.uniform(-0.2, 0.2);
      m.rows.push_back(std::move(row));
    }
    qp::QpSolution s = qp::solve_qp(m);
    if (s.status == qp::QpStatus::Infeasible) {
      CHECK(qp::certificate_valid(m, s.certificate));
      continue;
    }
    REQUIRE(s.status == qp::QpStatus::Optimal);
    CHECK(qp::check_kkt(m, s).ok());
  }
}

TEST_CASE("warm-started re-solve certifies in at most two iterations") {
  Rng rng(55);
  for (int rep = 0; rep < 10; ++rep) {
    QpModel m = random_box_qp(5, rng);
    m.rows.push_back({{{0, 1.0}, {2, 1.0}, {4, -1.0}}, 0.4, false});
    qp::QpSolution s = qp::solve_qp(m);
    REQUIRE(s.status == qp::QpStatus::Optimal);
    qp::WarmStart warm{s.x, s.active};
    qp::QpSolution again = qp::solve_qp(m, &warm);
    REQUIRE(again.status == qp::QpStatus::Optimal);
    CHECK(again.iterations <= 2);
    CHECK(std::abs(again.objective - s.objective) <= 1e-10);
  }
}

TEST_CASE("infeasible bounds produce a valid certificate") {
  QpModel m = QpModel::make(1);
  m.q_terms.emplace_back(0, 0, 2.0);
  m.lo[0] = 0.0;
  m.rows.push_back({{{0, 1.0}}, -1.0, false});  // x <= -1 vs x >= 0
  qp::QpSolution s = qp::solve_qp(m);
  REQUIRE(s.status == qp::QpStatus::Infeasible);
  CHECK(qp::certificate_valid(m, s.certificate));
}

TEST_CASE("negative curvature is rejected with a direction") {
  QpModel m = QpModel::make(2);
  m.q_terms.emplace_back(0, 0, -1.0);
  m.q_terms.emplace_back(1, 1, 1.0);
  m.lo << 0.0, 0.0;
  m.hi << 1.0, 1.0;
  CHECK_THROWS_AS(qp::solve_qp(m), qp::NonConvexError);
  try {
    qp::solve_qp(m);
  } catch (const qp::NonConvexError& e) {
    CHECK(e.direction.size() == 2);
    CHECK(std::abs(e.direction[0]) > 0.5);
  }
}

TEST_CASE("first-order optimality under box perturbations") {
  Rng rng(77);
  QpModel m = random_box_qp(6, rng);
  qp::QpSolution s = qp::solve_qp(m);
  REQUIRE(s.status == qp::QpStatus::Optimal);
  for (int rep = 0; rep < 40; ++rep) {
    Eigen::VectorXd x = s.x;
    for (int i = 0; i < m.n; ++i)
      x[i] = std::clamp(x[i] + 1e-4 * rng.uniform(-1.0, 1.0), m.lo[i], m.hi[i]);
    CHECK(objective_at(m, x) >= s.objective - 1e-7);
  }
}

TEST_CASE("LP objectives (zero Q) solve through the graded ridge") {
  // min t s.t. t >= x - 0.5, t >= 0.5 - x, x in [0,1]: optimum t=0 at x=0.5
  QpModel m = QpModel::make(2);  // x, t
  m.c << 0.0, 1.0;
  m.lo << 0.0, 0.0;
  m.hi << 1.0, 10.0;
  m.rows.push_back({{{0, 1.0}, {1, -1.0}}, 0.5, false});
  m.rows.push_back({{{0, -1.0}, {1, -1.0}}, -0.5, false});
  qp::QpSolution s = qp::solve_qp(m);
  REQUIRE(s.status == qp::QpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(s.x[0] == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("decompose splits independent blocks and agrees with the joint solve") {
  Rng rng(91);
  QpModel m = QpModel::make(4);
  m.q_terms.emplace_back(0, 0, 2.0);
  m.q_terms.emplace_back(0, 1, 0.5);
  m.q_terms.emplace_back(1, 1, 2.0);
  m.q_terms.emplace_back(2, 2, 1.0);
  m.q_terms.emplace_back(3, 3, 1.0);
  for (int i = 0; i < 4; ++i) {
    m.c[i] = rng.uniform(-1.0, 1.0);
    m.lo[i] = -1.0;
    m.hi[i] = 1.0;
  }
  m.rows.push_back({{{2, 1.0}, {3, 1.0}}, 0.5, false});
  auto parts = qp::decompose(m);
  CHECK(parts.size() == 2);
  double sum = 0.0;
  for (const auto& part : parts) {
    qp::QpSolution s = qp::solve_qp(part.model);
    REQUIRE(s.status == qp::QpStatus::Optimal);
    sum += s.objective;
  }
  qp::QpSolution joint = qp::solve_qp(m);
  CHECK(sum == doctest::Approx(joint.objective).epsilon(1e-7));
}

TEST_CASE("nnls step recovers an exact factorization") {
  Rng rng(101);
  DenseMatrix w(4, 2), h(2, 3);
  for (double& v : w.data()) v = rng.uniform(0.1, 1.0);
  for (double& v : h.data()) v = rng.uniform(0.1, 1.0);
  DenseMatrix a = matmul(w, h);
  ConstraintSystem sys = build_nonnegativity({4, 2, 3, 0, 0});
  DenseMatrix got = qp::solve_nnls_step(a, w, qp::NnlsSide::SolveForH, sys);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(got(i, j) == doctest::Approx(h(i, j)).epsilon(1e-6));
  }
}

TEST_CASE("nnls step hand case") {
  DenseMatrix a{{1, 0}, {0, 1}};
  DenseMatrix w{{1}, {1}};
  ConstraintSystem sys = build_nonnegativity({2, 1, 2, 0, 0});
  DenseMatrix h = qp::solve_nnls_step(a, w, qp::NnlsSide::SolveForH, sys);
  CHECK(h(0, 0) == doctest::Approx(0.5));
  CHECK(h(0, 1) == doctest::Approx(0.5));
  CHECK(residual_norm(a, w, h, 2) == doctest::Approx(1.0));
}

TEST_CASE("nnls step with a coupling row solves columns jointly") {
  DenseMatrix a{{1, 1}};
  DenseMatrix w{{1}};
  ConstraintSystem sys = build_nonnegativity({1, 1, 2, 0, 0});
  sys.add_row({{{VariableRef::h(0, 0), 1.0}, {VariableRef::h(0, 1), 1.0}}, Sense::LessEq, 0.6});
  DenseMatrix h = qp::solve_nnls_step(a, w, qp::NnlsSide::SolveForH, sys);
  CHECK(h(0, 0) + h(0, 1) == doctest::Approx(0.6).epsilon(1e-7));
  CHECK(h(0, 0) == doctest::Approx(0.3).epsilon(1e-6));
}
