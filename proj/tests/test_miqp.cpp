#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "combifd/constraints.hpp"
#include "combifd/miqp.hpp"
#include "combifd/rng.hpp"

using namespace combifd;
using qp::QpModel;

namespace {

double objective_at(const QpModel& m, const std::vector<double>& x) {
  double obj = m.c0;
  for (int i = 0; i < m.n; ++i) obj += m.c[i] * x[i];
  for (auto& [i, j, v] : m.q_terms) obj += (i == j ? 0.5 : 1.0) * v * x[i] * x[j];
  return obj;
}

bool point_ok(const QpModel& m, const std::vector<double>& x, const std::vector<int>& bins,
              double tol = 1e-6) {
  for (int i = 0; i < m.n; ++i) {
    if (x[i] < m.lo[i] - tol || x[i] > m.hi[i] + tol) return false;
  }
  for (const auto& row : m.rows) {
    double lhs = 0.0;
    for (auto& [v, c] : row.terms) lhs += c * x[v];
    if (row.eq ? std::abs(lhs - row.rhs) > tol : lhs > row.rhs + tol) return false;
  }
  for (int b : bins) {
    if (std::abs(x[b] - std::round(x[b])) > tol) return false;
  }
  return true;
}

/// exhaustive oracle: enumerate every binary pattern, solve the pinned QP
double brute_force(const QpModel& m, const std::vector<int>& bins, bool* any = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  const int nb = static_cast<int>(bins.size());
  for (int mask = 0; mask < (1 << nb); ++mask) {
    QpModel pinned = m;
    for (int t = 0; t < nb; ++t) {
      double v = (mask >> t) & 1;
      pinned.lo[bins[t]] = v;
      pinned.hi[bins[t]] = v;
    }
    qp::QpSolution s = qp::solve_qp(pinned);
    if (s.status == qp::QpStatus::Optimal) best = std::min(best, s.objective);
  }
  if (any) *any = std::isfinite(best);
  return best;
}

QpModel random_mixed(Rng& rng, int n_cont, int n_bin, std::vector<int>& bins) {
  const int n = n_cont + n_bin;
  QpModel m = QpModel::make(n);
  for (int i = 0; i < n; ++i) {
    m.q_terms.emplace_back(i, i, rng.uniform(0.5, 2.0));
    m.c[i] = rng.uniform(-2.0, 2.0);
  }
  if (n >= 2 && rng.next_double() < 0.7)
    m.q_terms.emplace_back(0, 1, rng.uniform(-0.3, 0.3));
  for (int i = 0; i < n_cont; ++i) {
    m.lo[i] = rng.uniform(-1.0, 0.0);
    m.hi[i] = m.lo[i] + rng.uniform(0.5, 2.0);
  }
  bins.clear();
  for (int i = n_cont; i < n; ++i) {
    m.lo[i] = 0.0;
    m.hi[i] = 1.0;
    bins.push_back(i);
  }
  for (int r = 0; r < 2; ++r) {
    qp::SparseRow row;
    for (int i = 0; i < n; ++i) {
      if (rng.next_double() < 0.5) row.terms.emplace_back(i, rng.uniform(-1.0, 1.0));
    }
    if (row.terms.empty()) continue;
    row.rhs = rng.uniform(0.3, 1.5);
    m.rows.push_back(std::move(row));
  }
  return m;
}

}  // namespace

TEST_CASE("single binary picks the better corner") {
  // min (b - 0.5)^2 over b in {0,1}: both corners give 0.25
  QpModel m = QpModel::make(1);
  m.q_terms.emplace_back(0, 0, 2.0);
  m.c[0] = -1.0;
  m.c0 = 0.25;
  m.lo[0] = 0.0;
  m.hi[0] = 1.0;
  miqp::MiqpResult r = miqp::solve_miqp(m, {0});
  REQUIRE(r.status == miqp::MiqpStatus::Optimal);
  CHECK(r.incumbent.objective == doctest::Approx(0.25));
  CHECK(r.incumbent.x[0] == doctest::Approx(0.0));  // ties break toward 0
}

TEST_CASE("unit-support selection picks the dominant basis column") {
  // columns of W are e1, e2; a = (0.9, 0.1); exactly one h entry may be live
  ConstraintSystem sys = build_sparsity({2, 2, 1, 0, 0}, 1);
  QpModel m = qp::from_system(sys);
  // ||a - W h||^2 with W = I: (h0-0.9)^2 + (h1-0.1)^2
  int h0 = sys.flat_index(VariableRef::h(0, 0));
  int h1 = sys.flat_index(VariableRef::h(1, 0));
  m.q_terms.emplace_back(h0, h0, 2.0);
  m.q_terms.emplace_back(h1, h1, 2.0);
  m.c[h0] = -1.8;
  m.c[h1] = -0.2;
  m.c0 = 0.81 + 0.01;
  std::vector<int> bins;
  for (int i = 0; i < sys.var_count(); ++i)
    if (sys.is_binary(i)) bins.push_back(i);
  miqp::MiqpResult r = miqp::solve_miqp(m, bins);
  REQUIRE(r.status == miqp::MiqpStatus::Optimal);
  CHECK(r.incumbent.x[h0] == doctest::Approx(1.0));
  CHECK(r.incumbent.x[h1] == doctest::Approx(0.0));
  CHECK(r.incumbent.objective == doctest::Approx(0.01 + 0.01));
}

TEST_CASE("random instances match exhaustive enumeration") {
  Rng rng(7);
  int solved = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> bins;
    QpModel m = random_mixed(rng, 2 + static_cast<int>(rng.uniform_int(0, 2)),
                             3 + static_cast<int>(rng.uniform_int(0, 3)), bins);
    bool any = false;
    double oracle = brute_force(m, bins, &any);
    miqp::MiqpResult r = miqp::solve_miqp(m, bins);
    if (!any) {
      CHECK(r.status == miqp::MiqpStatus::Infeasible);
      continue;
    }
    REQUIRE(r.status == miqp::MiqpStatus::Optimal);
    CHECK(std::abs(r.incumbent.objective - oracle) <=
          1e-8 * std::max(1.0, std::abs(oracle)));
    CHECK(point_ok(m, r.incumbent.x, bins));
    CHECK(std::abs(objective_at(m, r.incumbent.x) - r.incumbent.objective) <= 1e-7);
    ++solved;
  }
  CHECK(solved >= 15);
}

TEST_CASE("both node orders reach the same optimum") {
  Rng rng(19);
  std::vector<int> bins;
  QpModel m = random_mixed(rng, 3, 5, bins);
  miqp::MiqpParams best, dfs;
  dfs.selection = miqp::NodeSelection::DepthFirst;
  miqp::MiqpResult a = miqp::solve_miqp(m, bins, best);
  miqp::MiqpResult b = miqp::solve_miqp(m, bins, dfs);
  REQUIRE(a.status == miqp::MiqpStatus::Optimal);
  REQUIRE(b.status == miqp::MiqpStatus::Optimal);
  CHECK(std::abs(a.incumbent.objective - b.incumbent.objective) <= 1e-8);
}

TEST_CASE("repeat runs are bit-for-bit deterministic") {
  Rng rng(23);
  std::vector<int> bins;
  QpModel m = random_mixed(rng, 3, 6, bins);
  std::ostringstream log1, log2;
  miqp::MiqpParams p;
  p.log = &log1;
  miqp::MiqpResult a = miqp::solve_miqp(m, bins, p);
  p.log = &log2;
  miqp::MiqpResult b = miqp::solve_miqp(m, bins, p);
  CHECK(log1.str() == log2.str());
  CHECK(a.nodes == b.nodes);
  CHECK(a.incumbent.x == b.incumbent.x);
}

TEST_CASE("node log lines are well formed") {
  QpModel m = QpModel::make(2);
  m.q_terms.emplace_back(0, 0, 2.0);
  m.q_terms.emplace_back(1, 1, 2.0);
  m.c << -1.0, -1.0;
  m.lo << 0.0, 0.0;
  m.hi << 1.0, 1.0;
  std::ostringstream log;
  miqp::MiqpParams p;
  p.log = &log;
  miqp::solve_miqp(m, {0, 1}, p);
  std::istringstream in(log.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    CHECK(line.find("\"node\":") != std::string::npos);
    CHECK(line.find("\"depth\":") != std::string::npos);
    CHECK(line.find("\"bound\":") != std::string::npos);
    CHECK(line.find("\"status\":") != std::string::npos);
    ++lines;
  }
  CHECK(lines >= 1);
}

TEST_CASE("a feasible start is never made worse") {
  Rng rng(31);
  std::vector<int> bins;
  QpModel m = random_mixed(rng, 2, 4, bins);
  // clear rows so the all-zero point is feasible
  m.rows.clear();
  for (int i = 0; i < m.n; ++i) {
    m.lo[i] = std::min(m.lo[i], 0.0);
    m.hi[i] = std::max(m.hi[i], 0.0);
  }
  std::vector<double> start(m.n, 0.0);
  miqp::MiqpParams p;
  p.node_limit = 1;  // starve the search: the start must survive as incumbent
  p.diving = false;
  miqp::MiqpResult r = miqp::solve_miqp(m, bins, p, &start);
  CHECK(r.incumbent.objective <= objective_at(m, start) + 1e-12);
  CHECK(r.status != miqp::MiqpStatus::NoIncumbent);
}

TEST_CASE("improve_target stops early with a qualifying incumbent") {
  Rng rng(41);
  std::vector<int> bins;
  QpModel m = random_mixed(rng, 2, 6, bins);
  m.rows.clear();
  miqp::MiqpResult full = miqp::solve_miqp(m, bins);
  REQUIRE(full.status == miqp::MiqpStatus::Optimal);
  miqp::MiqpParams p;
  p.improve_target = full.incumbent.objective + 0.5;
  miqp::MiqpResult r = miqp::solve_miqp(m, bins, p);
  REQUIRE(r.status != miqp::MiqpStatus::NoIncumbent);
  CHECK(r.incumbent.objective < *p.improve_target);
  CHECK(r.nodes <= full.nodes);
}

TEST_CASE("no incumbent without budget") {
  Rng rng(47);
  std::vector<int> bins;
  QpModel m = random_mixed(rng, 2, 8, bins);
  // a row forcing an awkward fractional relaxation
  m.rows.push_back({{{bins[0], 1.0}, {bins[1], 1.0}, {bins[2], 1.0}}, 1.5, false});
  miqp::MiqpParams p;
  p.node_limit = 1;
  p.diving = false;
  miqp::MiqpResult r = miqp::solve_miqp(m, bins, p);
  CHECK((r.status == miqp::MiqpStatus::NoIncumbent || r.status == miqp::MiqpStatus::Feasible ||
         r.status == miqp::MiqpStatus::Optimal));
  if (r.status == miqp::MiqpStatus::NoIncumbent) CHECK(r.nodes >= 1);
}

TEST_CASE("infeasible binary system yields a certificate at the root") {
  QpModel m = QpModel::make(2);
  m.lo << 0.0, 0.0;
  m.hi << 1.0, 1.0;
  m.rows.push_back({{{0, 1.0}, {1, 1.0}}, 2.0, true});   // b0 + b1 = 2
  m.rows.push_back({{{0, 1.0}}, 0.0, true});             // b0 = 0: contradiction
  miqp::MiqpResult r = miqp::solve_miqp(m, {0, 1});
  REQUIRE(r.status == miqp::MiqpStatus::Infeasible);
  CHECK(qp::certificate_valid(m, r.certificate));
}

TEST_CASE("find_feasible satisfies plain nonnegativity") {
  ConstraintSystem sys = build_nonnegativity({3, 2, 4, 0, 0});
  std::vector<double> v = miqp::find_feasible(sys, 5);
  CHECK(sys.validate(v).empty());
}

TEST_CASE("find_feasible respects sparsity structure") {
  ConstraintSystem sys = build_sparsity({4, 3, 4, 0, 0}, 2);
  std::vector<double> v = miqp::find_feasible(sys, 11);
  CHECK(sys.validate(v).empty());
}

TEST_CASE("different seeds explore different corners") {
  ConstraintSystem sys = build_sparsity({2, 3, 3, 0, 0}, 1);
  std::vector<double> a = miqp::find_feasible(sys, 1);
  std::vector<double> b = miqp::find_feasible(sys, 2);
  std::vector<double> c = miqp::find_feasible(sys, 3);
  CHECK((a != b || b != c));
}

TEST_CASE("contradictory links are reported infeasible with a certificate") {
  // k=1: any pair is must-linked by force; a cannot-link cannot hold
  ConstraintSystem sys = build_semi_supervised({2, 1, 2, 0, 0}, 1, {}, {{0, 1}});
  CHECK_THROWS_AS(miqp::find_feasible(sys, 1), qp::InfeasibleSystemError);
  try {
    miqp::find_feasible(sys, 1);
  } catch (const qp::InfeasibleSystemError& e) {
    CHECK(!e.certificate.weights.empty());
  }
}
