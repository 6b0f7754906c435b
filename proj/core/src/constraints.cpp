#include "combifd/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace combifd {

ConstraintSystem::ConstraintSystem(Dims dims) : dims_(dims) {
  if (dims.m < 0 || dims.k < 0 || dims.n < 0 || dims.n_aux < 0 || dims.n_bin < 0) {
    throw std::invalid_argument("ConstraintSystem: negative dimension");
  }
  lower_.assign(var_count(), -kInf);
  upper_.assign(var_count(), kInf);
  for (int i = 0; i < dims_.n_bin; ++i) {
    const int f = flat_index(VariableRef::bin(i));
    lower_[f] = 0.0;
    upper_[f] = 1.0;
  }
}

int ConstraintSystem::var_count() const {
  int total = dims_.n_aux + dims_.n_bin;
  if (fixed_ != FixedFactor::W) total += dims_.m * dims_.k;
  if (fixed_ != FixedFactor::H) total += dims_.k * dims_.n;
  return total;
}

int ConstraintSystem::flat_index(const VariableRef& ref) const {
  auto bad = [&](const char* why) {
    throw std::out_of_range(std::string("VariableRef out of range: ") + why);
  };
  int offset = 0;
  switch (ref.kind) {
    case VarKind::W:
      if (fixed_ == FixedFactor::W) bad("W is fixed");
      if (ref.i < 0 || ref.i >= dims_.m || ref.j < 0 || ref.j >= dims_.k) bad("W index");
      return ref.j * dims_.m + ref.i;
    case VarKind::H:
      if (fixed_ == FixedFactor::H) bad("H is fixed");
      if (ref.i < 0 || ref.i >= dims_.k || ref.j < 0 || ref.j >= dims_.n) bad("H index");
      offset = (fixed_ == FixedFactor::W) ? 0 : dims_.m * dims_.k;
      return offset + ref.j * dims_.k + ref.i;
    case VarKind::Aux:
      if (ref.i < 0 || ref.i >= dims_.n_aux) bad("Aux index");
      offset = var_count() - dims_.n_aux - dims_.n_bin;
      return offset + ref.i;
    case VarKind::Bin:
      if (ref.i < 0 || ref.i >= dims_.n_bin) bad("Bin index");
      offset = var_count() - dims_.n_bin;
      return offset + ref.i;
  }
  bad("unknown kind");
  return -1;
}

VariableRef ConstraintSystem::unflatten(int flat) const {
  if (flat < 0 || flat >= var_count()) throw std::out_of_range("unflatten: flat index");
  int w_count = (fixed_ == FixedFactor::W) ? 0 : dims_.m * dims_.k;
  int h_count = (fixed_ == FixedFactor::H) ? 0 : dims_.k * dims_.n;
  if (flat < w_count) return VariableRef::w(flat % dims_.m, flat / dims_.m);
  flat -= w_count;
  if (flat < h_count) return VariableRef::h(flat % dims_.k, flat / dims_.k);
  flat -= h_count;
  if (flat < dims_.n_aux) return VariableRef::aux(flat);
  return VariableRef::bin(flat - dims_.n_aux);
}

bool ConstraintSystem::is_binary(int flat) const {
  return unflatten(flat).kind == VarKind::Bin;
}

namespace {
void canonicalize(LinearRow& row, const ConstraintSystem& sys) {
  for (auto& [ref, coef] : row.terms) {
    (void)sys.flat_index(ref);  // range check
    if (!std::isfinite(coef)) throw std::invalid_argument("LinearRow: non-finite coefficient");
  }
  if (!std::isfinite(row.rhs)) throw std::invalid_argument("LinearRow: non-finite rhs");
  std::sort(row.terms.begin(), row.terms.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<VariableRef, double>> out;
  for (const auto& t : row.terms) {
    if (!out.empty() && out.back().first == t.first) {
      out.back().second += t.second;
    } else {
      out.push_back(t);
    }
  }
  std::erase_if(out, [](const auto& t) { return t.second == 0.0; });
  row.terms = std::move(out);
}
}  // namespace

void ConstraintSystem::add_row(LinearRow row) {
  canonicalize(row, *this);
  rows_.push_back(std::move(row));
}

int ConstraintSystem::add_aux_vars(int count) {
  if (count < 0) throw std::invalid_argument("add_aux_vars: negative count");
  const int first = dims_.n_aux;
  // bounds arrays: insert between aux and bin blocks
  const int insert_at = var_count() - dims_.n_bin;
  lower_.insert(lower_.begin() + insert_at, count, -kInf);
  upper_.insert(upper_.begin() + insert_at, count, kInf);
  dims_.n_aux += count;
  return first;
}

int ConstraintSystem::add_binary_vars(int count) {
  if (count < 0) throw std::invalid_argument("add_binary_vars: negative count");
  const int first = dims_.n_bin;
  lower_.insert(lower_.end(), count, 0.0);
  upper_.insert(upper_.end(), count, 1.0);
  dims_.n_bin += count;
  return first;
}

ConstraintSystem ConstraintSystem::fix_factor(FixedFactor which, const DenseMatrix& values) const {
  if (which == FixedFactor::None) return *this;
  if (fixed_ != FixedFactor::None) throw std::invalid_argument("fix_factor: a factor is already fixed");
  const VarKind kind = (which == FixedFactor::W) ? VarKind::W : VarKind::H;
  const int want_rows = (which == FixedFactor::W) ? dims_.m : dims_.k;
  const int want_cols = (which == FixedFactor::W) ? dims_.k : dims_.n;
  if (values.rows() != want_rows || values.cols() != want_cols) {
    throw std::invalid_argument("fix_factor: values shape " + std::to_string(values.rows()) + "x" +
                                std::to_string(values.cols()) + ", expected " +
                                std::to_string(want_rows) + "x" + std::to_string(want_cols));
  }

  ConstraintSystem out;
  out.dims_ = dims_;
  out.fixed_ = which;
  out.lower_.assign(out.var_count(), -kInf);
  out.upper_.assign(out.var_count(), kInf);
  for (int f = 0; f < var_count(); ++f) {
    const VariableRef ref = unflatten(f);
    if (ref.kind == kind) continue;
    const int g = out.flat_index(ref);
    out.lower_[g] = lower_[f];
    out.upper_[g] = upper_[f];
  }
  for (const LinearRow& row : rows_) {
    LinearRow r;
    r.sense = row.sense;
    r.rhs = row.rhs;
    for (const auto& [ref, coef] : row.terms) {
      if (ref.kind == kind) {
        r.rhs -= coef * values(ref.i, ref.j);
      } else {
        r.terms.emplace_back(ref, coef);
      }
    }
    out.add_row(std::move(r));
  }
  return out;
}

std::vector<Violation> ConstraintSystem::validate(const std::vector<double>& v, double tol) const {
  if (static_cast<int>(v.size()) != var_count()) {
    throw std::invalid_argument("validate: assignment size " + std::to_string(v.size()) +
                                ", expected " + std::to_string(var_count()));
  }
  std::vector<Violation> report;
  for (int r = 0; r < static_cast<int>(rows_.size()); ++r) {
    const LinearRow& row = rows_[r];
    double lhs = 0.0;
    for (const auto& [ref, coef] : row.terms) lhs += coef * v[flat_index(ref)];
    const double viol = (row.sense == Sense::Eq) ? std::abs(lhs - row.rhs) : lhs - row.rhs;
    if (viol > tol) report.push_back({Violation::Type::Row, r, viol});
  }
  for (int f = 0; f < var_count(); ++f) {
    if (v[f] < lower_[f] - tol) report.push_back({Violation::Type::LowerBound, f, lower_[f] - v[f]});
    if (v[f] > upper_[f] + tol) report.push_back({Violation::Type::UpperBound, f, v[f] - upper_[f]});
    if (is_binary(f)) {
      const double d = std::min(std::abs(v[f]), std::abs(v[f] - 1.0));
      if (d > tol) report.push_back({Violation::Type::Integrality, f, d});
    }
  }
  return report;
}

void add_nonnegativity(ConstraintSystem& sys) {
  const Dims& d = sys.dims();
  if (sys.fixed_factor() != FixedFactor::W) {
    for (int j = 0; j < d.k; ++j)
      for (int i = 0; i < d.m; ++i) sys.set_lower(VariableRef::w(i, j), 0.0);
  }
  if (sys.fixed_factor() != FixedFactor::H) {
    for (int j = 0; j < d.n; ++j)
      for (int i = 0; i < d.k; ++i) sys.set_lower(VariableRef::h(i, j), 0.0);
  }
}

ConstraintSystem build_nonnegativity(const Dims& dims) {
  ConstraintSystem sys(dims);
  add_nonnegativity(sys);
  return sys;
}

ConstraintSystem build_sparsity(const Dims& dims, int s, int* first_bin) {
  if (s <= 0 || s > dims.k) {
    throw std::invalid_argument("build_sparsity: S must be in [1, k], got " + std::to_string(s));
  }
  ConstraintSystem sys = build_nonnegativity(dims);
  const int k = dims.k, n = dims.n;
  const int b0 = sys.add_binary_vars(k * n);
  if (first_bin) *first_bin = b0;
  auto bin = [&](int i, int j) { return VariableRef::bin(b0 + j * k + i); };
  for (int j = 0; j < n; ++j) {
    LinearRow norm{{}, Sense::Eq, 1.0};
    LinearRow cap{{}, Sense::LessEq, static_cast<double>(s)};
    for (int i = 0; i < k; ++i) {
      sys.add_row({{{VariableRef::h(i, j), 1.0}, {bin(i, j), -1.0}}, Sense::LessEq, 0.0});
      norm.terms.emplace_back(VariableRef::h(i, j), 1.0);
      cap.terms.emplace_back(bin(i, j), 1.0);
    }
    sys.add_row(std::move(norm));
    sys.add_row(std::move(cap));
  }
  return sys;
}

ConstraintSystem build_semi_supervised(const Dims& dims, int s,
                                       const std::vector<std::pair<int, int>>& must_link,
                                       const std::vector<std::pair<int, int>>& cannot_link) {
  auto norm_pair = [](std::pair<int, int> p) {
    return p.first <= p.second ? p : std::pair<int, int>{p.second, p.first};
  };
  std::set<std::pair<int, int>> ml;
  for (auto p : must_link) ml.insert(norm_pair(p));
  for (auto p : cannot_link) {
    if (ml.count(norm_pair(p))) {
      throw std::invalid_argument("build_semi_supervised: pair (" + std::to_string(p.first) + "," +
                                  std::to_string(p.second) + ") in both ML and CL");
    }
  }
  int b0 = 0;
  ConstraintSystem sys = build_sparsity(dims, s, &b0);
  const int k = dims.k, n = dims.n;
  auto bin = [&](int i, int j) { return VariableRef::bin(b0 + j * k + i); };
  auto check_point = [&](int j) {
    if (j < 0 || j >= n) throw std::invalid_argument("build_semi_supervised: point index " + std::to_string(j));
  };
  for (auto [a, b] : must_link) {
    check_point(a);
    check_point(b);
    for (int i = 0; i < k; ++i)
      sys.add_row({{{bin(i, a), 1.0}, {bin(i, b), -1.0}}, Sense::Eq, 0.0});
  }
  for (auto [a, b] : cannot_link) {
    check_point(a);
    check_point(b);
    for (int i = 0; i < k; ++i)
      sys.add_row({{{bin(i, a), 1.0}, {bin(i, b), 1.0}}, Sense::LessEq, 1.0});
  }
  return sys;
}

namespace {
using nlohmann::json;

const char* kind_name(VarKind k) {
  switch (k) {
    case VarKind::W: return "W";
    case VarKind::H: return "H";
    case VarKind::Aux: return "x";
    case VarKind::Bin: return "b";
  }
  return "?";
}

VarKind kind_from(const std::string& s) {
  if (s == "W") return VarKind::W;
  if (s == "H") return VarKind::H;
  if (s == "x") return VarKind::Aux;
  if (s == "b") return VarKind::Bin;
  throw std::invalid_argument("constraint JSON: unknown variable kind '" + s + "'");
}
}  // namespace

std::string to_json(const ConstraintSystem& sys) {
  json j;
  const Dims& d = sys.dims();
  j["dims"] = {{"m", d.m}, {"k", d.k}, {"n", d.n}, {"n_aux", d.n_aux}, {"n_bin", d.n_bin}};
  j["rows"] = json::array();
  for (const LinearRow& row : sys.rows()) {
    json terms = json::array();
    for (const auto& [ref, coef] : row.terms) {
      terms.push_back({kind_name(ref.kind), ref.i, ref.j, coef});
    }
    j["rows"].push_back({{"terms", terms},
                         {"sense", row.sense == Sense::Eq ? "=" : "<="},
                         {"rhs", row.rhs}});
  }
  json bounds = json::array();
  for (int f = 0; f < sys.var_count(); ++f) {
    const double lo = sys.lower(f), hi = sys.upper(f);
    const VariableRef ref = sys.unflatten(f);
    if (ref.kind == VarKind::Bin && lo == 0.0 && hi == 1.0) continue;  // implicit
    if (lo == -ConstraintSystem::kInf && hi == ConstraintSystem::kInf) continue;
    json entry = {{"var", {kind_name(ref.kind), ref.i, ref.j}}};
    if (lo != -ConstraintSystem::kInf) entry["lo"] = lo;
    if (hi != ConstraintSystem::kInf) entry["hi"] = hi;
    bounds.push_back(entry);
  }
  j["bounds"] = bounds;
  return j.dump(2);
}

ConstraintSystem system_from_json(const std::string& text) {
  json j = json::parse(text);
  Dims d;
  d.m = j.at("dims").at("m").get<int>();
  d.k = j.at("dims").at("k").get<int>();
  d.n = j.at("dims").at("n").get<int>();
  d.n_aux = j.at("dims").value("n_aux", 0);
  d.n_bin = j.at("dims").value("n_bin", 0);
  ConstraintSystem sys(d);
  for (const auto& jr : j.value("rows", json::array())) {
    LinearRow row;
    for (const auto& jt : jr.at("terms")) {
      VariableRef ref;
      ref.kind = kind_from(jt.at(0).get<std::string>());
      ref.i = jt.at(1).get<int>();
      ref.j = jt.at(2).get<int>();
      row.terms.emplace_back(ref, jt.at(3).get<double>());
    }
    const std::string sense = jr.value("sense", "<=");
    if (sense == "=") row.sense = Sense::Eq;
    else if (sense == "<=") row.sense = Sense::LessEq;
    else throw std::invalid_argument("constraint JSON: unknown sense '" + sense + "'");
    row.rhs = jr.at("rhs").get<double>();
    sys.add_row(std::move(row));
  }
  for (const auto& jb : j.value("bounds", json::array())) {
    VariableRef ref;
    const auto& jv = jb.at("var");
    ref.kind = kind_from(jv.at(0).get<std::string>());
    ref.i = jv.at(1).get<int>();
    ref.j = jv.at(2).get<int>();
    if (jb.contains("lo")) sys.set_lower(ref, jb.at("lo").get<double>());
    if (jb.contains("hi")) sys.set_upper(ref, jb.at("hi").get<double>());
  }
  return sys;
}

ConstraintSystem read_system_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open constraint file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return system_from_json(ss.str());
}

void write_system_file(const std::string& path, const ConstraintSystem& sys) {
  std::ofstream f(path);
  if (!f) throw std::invalid_argument("cannot open constraint file " + path);
  f << to_json(sys) << '\n';
}

}  // namespace combifd
