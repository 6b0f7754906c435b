#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stdexcept>

#include "combifd/constraints.hpp"

using namespace combifd;

TEST_CASE("flat index round trips for every variable") {
  ConstraintSystem sys({2, 3, 2, 2, 2});
  for (int flat = 0; flat < sys.var_count(); ++flat) {
    CHECK(sys.flat_index(sys.unflatten(flat)) == flat);
  }
  CHECK(sys.var_count() == 2 * 3 + 3 * 2 + 2 + 2);
  // column stacking: W(1,0) sits right after W(0,0)
  CHECK(sys.flat_index(VariableRef::w(1, 0)) == 1);
  CHECK(sys.flat_index(VariableRef::w(0, 1)) == 2);
}

TEST_CASE("add_row canonicalizes duplicates and rejects bad refs") {
  ConstraintSystem sys({2, 2, 2, 0, 0});
  sys.add_row({{{VariableRef::w(0, 0), 1.0}, {VariableRef::w(0, 0), 2.0}}, Sense::LessEq, 1.0});
  REQUIRE(sys.rows().size() == 1);
  REQUIRE(sys.rows()[0].terms.size() == 1);
  CHECK(sys.rows()[0].terms[0].second == 3.0);
  CHECK_THROWS_AS(sys.add_row({{{VariableRef::w(5, 0), 1.0}}, Sense::LessEq, 0.0}),
                  std::out_of_range);
}

TEST_CASE("nonnegativity sets bounds, not rows") {
  ConstraintSystem sys = build_nonnegativity({2, 2, 2, 0, 0});
  CHECK(sys.rows().empty());
  int bounded = 0;
  for (int f = 0; f < sys.var_count(); ++f) {
    if (sys.lower(f) == 0.0) ++bounded;
  }
  CHECK(bounded == 8);
}

TEST_CASE("sparsity system structure and feasibility") {
  ConstraintSystem sys = build_sparsity({2, 3, 2, 0, 0}, 1);
  CHECK(sys.dims().n_bin == 6);

  // one-hot H with matching binaries is feasible
  std::vector<double> v(sys.var_count(), 0.0);
  auto set = [&](const VariableRef& r, double val) { v[sys.flat_index(r)] = val; };
  set(VariableRef::h(0, 0), 1.0);
  set(VariableRef::h(2, 1), 1.0);
  set(VariableRef::bin(0 * 3 + 0), 1.0);  // column 0, cluster 0
  set(VariableRef::bin(1 * 3 + 2), 1.0);  // column 1, cluster 2
  CHECK(sys.validate(v).empty());

  // a column split over two supports breaks S=1
  set(VariableRef::h(0, 0), 0.5);
  set(VariableRef::h(1, 0), 0.5);
  set(VariableRef::bin(0 * 3 + 1), 1.0);
  CHECK(!sys.validate(v).empty());

  CHECK_THROWS_AS(build_sparsity({2, 3, 2, 0, 0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_sparsity({2, 3, 2, 0, 0}, 4), std::invalid_argument);
}

TEST_CASE("sparsity with S=k leaves the simplex feasible") {
  ConstraintSystem sys = build_sparsity({1, 2, 1, 0, 0}, 2);
  std::vector<double> v(sys.var_count(), 0.0);
  v[sys.flat_index(VariableRef::h(0, 0))] = 0.3;
  v[sys.flat_index(VariableRef::h(1, 0))] = 0.7;
  v[sys.flat_index(VariableRef::bin(0))] = 1.0;
  v[sys.flat_index(VariableRef::bin(1))] = 1.0;
  CHECK(sys.validate(v).empty());
}

TEST_CASE("semi-supervised pair rows") {
  // ML chain (0,1), (1,2): enumerate every hard clustering for k=2, n=3
  ConstraintSystem sys = build_semi_supervised({1, 2, 3, 0, 0}, 1, {{0, 1}, {1, 2}}, {});
  for (int c0 = 0; c0 < 2; ++c0) {
    for (int c1 = 0; c1 < 2; ++c1) {
      for (int c2 = 0; c2 < 2; ++c2) {
        std::vector<double> v(sys.var_count(), 0.0);
        const int cs[3] = {c0, c1, c2};
        for (int j = 0; j < 3; ++j) {
          v[sys.flat_index(VariableRef::h(cs[j], j))] = 1.0;
          v[sys.flat_index(VariableRef::bin(j * 2 + cs[j]))] = 1.0;
        }
        const bool feasible = sys.validate(v).empty();
        CHECK(feasible == (c0 == c1 && c1 == c2));
      }
    }
  }
  CHECK_THROWS_AS(build_semi_supervised({1, 2, 3, 0, 0}, 1, {{0, 1}}, {{0, 1}}),
                  std::invalid_argument);
}

TEST_CASE("fix_factor substitutes into rhs") {
  ConstraintSystem sys({1, 1, 1, 0, 0});
  sys.add_row({{{VariableRef::w(0, 0), 1.0}, {VariableRef::h(0, 0), 1.0}}, Sense::LessEq, 1.0});
  DenseMatrix hval{{0.4}};
  ConstraintSystem red = sys.fix_factor(FixedFactor::H, hval);
  REQUIRE(red.rows().size() == 1);
  REQUIRE(red.rows()[0].terms.size() == 1);
  CHECK(red.rows()[0].rhs == doctest::Approx(0.6));
  CHECK(red.rows()[0].terms[0].first == VariableRef::w(0, 0));
}

TEST_CASE("fix_factor keeps violated constant rows detectable") {
  ConstraintSystem sys({1, 1, 1, 0, 0});
  sys.add_row({{{VariableRef::h(0, 0), 1.0}}, Sense::LessEq, 0.5});
  DenseMatrix hval{{0.9}};
  ConstraintSystem red = sys.fix_factor(FixedFactor::H, hval);
  std::vector<double> v(red.var_count(), 0.0);
  auto report = red.validate(v);
  REQUIRE(report.size() == 1);
  CHECK(report[0].amount == doctest::Approx(0.4));
}

TEST_CASE("validate flags integrality and row violations") {
  ConstraintSystem sys({1, 1, 1, 1, 1});
  sys.add_row({{{VariableRef::aux(0), 2.0}}, Sense::LessEq, 1.0});
  std::vector<double> v(sys.var_count(), 0.0);
  v[sys.flat_index(VariableRef::bin(0))] = 0.5;
  v[sys.flat_index(VariableRef::aux(0))] = 1.0;
  auto report = sys.validate(v);
  bool integrality = false, row = false;
  for (const Violation& viol : report) {
    if (viol.type == Violation::Type::Integrality) integrality = true;
    if (viol.type == Violation::Type::Row) {
      row = true;
      CHECK(viol.amount == doctest::Approx(1.0));
    }
  }
  CHECK(integrality);
  CHECK(row);
}

TEST_CASE("fix_factor validate consistency on a random system") {
  ConstraintSystem sys({2, 2, 2, 1, 1});
  sys.add_row({{{VariableRef::w(0, 0), 1.0}, {VariableRef::h(1, 1), -2.0}}, Sense::LessEq, 0.3});
  sys.add_row({{{VariableRef::h(0, 0), 1.0}, {VariableRef::aux(0), 1.0}}, Sense::Eq, 1.0});
  std::vector<double> full(sys.var_count());
  for (std::size_t i = 0; i < full.size(); ++i) full[i] = 0.1 * static_cast<double>(i % 5);
  DenseMatrix hval(2, 2);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) hval(i, j) = full[sys.flat_index(VariableRef::h(i, j))];
  }
  ConstraintSystem red = sys.fix_factor(FixedFactor::H, hval);
  std::vector<double> part(red.var_count());
  for (int f = 0; f < red.var_count(); ++f) part[f] = full[sys.flat_index(red.unflatten(f))];
  CHECK(red.validate(part).size() == sys.validate(full).size());
}

TEST_CASE("json round trip") {
  ConstraintSystem sys = build_sparsity({2, 2, 2, 0, 0}, 1);
  sys.add_row({{{VariableRef::w(1, 0), -1.5}}, Sense::LessEq, -0.25});
  ConstraintSystem back = system_from_json(to_json(sys));
  CHECK(back.dims() == sys.dims());
  CHECK(back.rows().size() == sys.rows().size());
  for (int f = 0; f < sys.var_count(); ++f) {
    CHECK(back.lower(f) == sys.lower(f));
    CHECK(back.upper(f) == sys.upper(f));
  }
  CHECK(to_json(back) == to_json(sys));
}
