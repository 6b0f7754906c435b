#include "combifd/amiqo.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "combifd/qp.hpp"

namespace combifd::amiqo {
namespace {

struct HalfOut {
  std::vector<double> v;  // full flat assignment after the step
  long nodes = 0;
  bool optimal = false;
};

/// One alternating step: fix one factor at its current values, re-optimize
/// the other factor together with x and b. The previous iterate seeds the
/// incumbent, so the returned assignment is never worse.
HalfOut half_step(const DenseMatrix& a, const ConstraintSystem& sys, FixedFactor fix,
                  const std::vector<double>& v_prev, const AmiqoOptions& opts,
                  double prev_norm) {
  const Dims& d = sys.dims();
  const VarKind fixed_kind = (fix == FixedFactor::W) ? VarKind::W : VarKind::H;
  DenseMatrix fixed_vals = extract_factor(sys, v_prev, fixed_kind);
  ConstraintSystem reduced = sys.fix_factor(fix, fixed_vals);

  const int orig_aux = d.n_aux;
  int t0 = -1;  // first L1 slack (aux index) when p == 1
  if (opts.p == 1) {
    t0 = reduced.add_aux_vars(d.m * d.n);
    for (int i = 0; i < d.m * d.n; ++i)
      reduced.set_lower(VariableRef::aux(t0 + i), 0.0);
    for (int j = 0; j < d.n; ++j) {
      for (int i = 0; i < d.m; ++i) {
        // |A_ij - (WH)_ij| <= t_ij, with one factor a constant
        LinearRow up, down;
        for (int s = 0; s < d.k; ++s) {
          const VariableRef free_ref = (fix == FixedFactor::W) ? VariableRef::h(s, j)
                                                               : VariableRef::w(i, s);
          const double coef = (fix == FixedFactor::W) ? fixed_vals(i, s) : fixed_vals(s, j);
          up.terms.emplace_back(free_ref, coef);
          down.terms.emplace_back(free_ref, -coef);
        }
        up.terms.emplace_back(VariableRef::aux(t0 + j * d.m + i), -1.0);
        up.rhs = a(i, j);
        down.terms.emplace_back(VariableRef::aux(t0 + j * d.m + i), -1.0);
        down.rhs = -a(i, j);
        reduced.add_row(std::move(up));
        reduced.add_row(std::move(down));
      }
    }
  }

  qp::QpModel model = qp::from_system(reduced);
  if (opts.p == 2) {
    qp::add_least_squares_objective(model, reduced, a, fixed_vals);
  } else {
    for (int i = 0; i < d.m * d.n; ++i)
      model.c[reduced.flat_index(VariableRef::aux(t0 + i))] = 1.0;
  }

  // previous iterate in reduced coordinates (slacks at the exact residuals)
  const DenseMatrix free_prev =
      extract_factor(sys, v_prev, fix == FixedFactor::W ? VarKind::H : VarKind::W);
  std::vector<double> start(model.n, 0.0);
  for (int i = 0; i < model.n; ++i) {
    const VariableRef ref = reduced.unflatten(i);
    if (ref.kind == VarKind::Aux && ref.i >= orig_aux) {
      const int e = ref.i - t0;
      const int ri = e % d.m, rj = e / d.m;
      double wh = 0.0;
      for (int s = 0; s < d.k; ++s)
        wh += (fix == FixedFactor::W ? fixed_vals(ri, s) * free_prev(s, rj)
                                     : free_prev(ri, s) * fixed_vals(s, rj));
      start[i] = std::abs(a(ri, rj) - wh);
    } else {
      start[i] = v_prev[sys.flat_index(ref)];
    }
  }
  model.ridge_center = Eigen::Map<const Eigen::VectorXd>(start.data(), model.n);

  miqp::MiqpParams params = opts.miqp;
  if (opts.improve_only)
    params.improve_target = ((opts.p == 2) ? prev_norm * prev_norm : prev_norm) - 1e-12;

  std::vector<int> bins;
  for (int v = 0; v < reduced.var_count(); ++v) {
    if (reduced.is_binary(v)) bins.push_back(v);
  }

  miqp::MiqpResult res = miqp::solve_miqp(model, bins, params, &start);
  HalfOut out;
  out.v = v_prev;
  out.nodes = res.nodes;
  switch (res.status) {
    case miqp::MiqpStatus::Infeasible:
      throw qp::InfeasibleSystemError("alternating step subproblem is infeasible",
                                      res.certificate);
    case miqp::MiqpStatus::NoIncumbent:
      return out;  // keep the previous iterate
    case miqp::MiqpStatus::Optimal:
      out.optimal = true;
      [[fallthrough]];
    case miqp::MiqpStatus::Feasible:
      for (int i = 0; i < model.n; ++i) {
        const VariableRef ref = reduced.unflatten(i);
        if (ref.kind == VarKind::Aux && ref.i >= orig_aux) continue;
        out.v[sys.flat_index(ref)] = res.incumbent.x[i];
      }
      return out;
  }
  return out;
}

void emit_trace(const AmiqoOptions& opts, const TraceEntry& e) {
  if (!opts.trace) return;
  nlohmann::json j;
  j["iteration"] = e.iteration;
  j["half"] = std::string(1, e.half);
  j["objective"] = e.objective;
  j["miqp_nodes"] = e.miqp_nodes;
  j["feasible"] = true;
  j["proven_optimal"] = e.proven_optimal;
  *opts.trace << j.dump() << "\n";
}

}  // namespace

DenseMatrix extract_factor(const ConstraintSystem& sys, const std::vector<double>& v,
                           VarKind kind) {
  const Dims& d = sys.dims();
  const int rows = (kind == VarKind::W) ? d.m : d.k;
  const int cols = (kind == VarKind::W) ? d.k : d.n;
  DenseMatrix out(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) {
      const VariableRef ref =
          (kind == VarKind::W) ? VariableRef::w(i, j) : VariableRef::h(i, j);
      out(i, j) = v[sys.flat_index(ref)];
    }
  }
  return out;
}

AmiqoResult run_from(const DenseMatrix& a, const ConstraintSystem& sys,
                     const std::vector<double>& initial, const AmiqoOptions& opts) {
  const Dims& d = sys.dims();
  if (sys.fixed_factor() != FixedFactor::None)
    throw std::invalid_argument("run_from: system must have both factors free");
  if (a.rows() != d.m || a.cols() != d.n)
    throw std::invalid_argument("run_from: data shape does not match system dims");
  if (static_cast<int>(initial.size()) != sys.var_count())
    throw std::invalid_argument("run_from: initial assignment has wrong length");
  if (opts.p != 1 && opts.p != 2)
    throw std::invalid_argument("run_from: p must be 1 or 2");
  if (!sys.validate(initial).empty())
    throw std::invalid_argument("run_from: initial assignment is infeasible");

  AmiqoResult res;
  std::vector<double> v = initial;
  double obj = residual_norm(a, extract_factor(sys, v, VarKind::W),
                             extract_factor(sys, v, VarKind::H), opts.p);

  for (int t = 1; t <= opts.max_iters; ++t) {
    const double at_start = obj;
    for (FixedFactor fix : {FixedFactor::H, FixedFactor::W}) {
      HalfOut h = half_step(a, sys, fix, v, opts, obj);
      v = std::move(h.v);
      obj = residual_norm(a, extract_factor(sys, v, VarKind::W),
                          extract_factor(sys, v, VarKind::H), opts.p);
      TraceEntry e{t, fix == FixedFactor::H ? 'W' : 'H', obj, h.nodes, h.optimal};
      res.trace.push_back(e);
      emit_trace(opts, e);
      if (opts.keep_iterates) res.iterates.push_back(v);
    }
    res.iterations = t;
    if (at_start - obj < opts.rel_tol * std::max(1.0, at_start)) break;
  }

  res.factors = {extract_factor(sys, v, VarKind::W), extract_factor(sys, v, VarKind::H)};
  res.assignment = std::move(v);
  res.objective = obj;
  return res;
}

AmiqoResult run(const DenseMatrix& a, const ConstraintSystem& sys, const AmiqoOptions& opts) {
  std::vector<double> v0 = miqp::find_feasible(sys, opts.seed);
  return run_from(a, sys, v0, opts);
}

}  // namespace combifd::amiqo
