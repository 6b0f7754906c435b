#include "combifd/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace combifd::qp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// small union-find
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// ---------------------------------------------------------------------------
// constraint handles, ">=" orientation
struct Handle {
  ActiveEntry::Type type;
  int index;  // row index / variable index
  bool eq;
  std::vector<std::pair<int, double>> normal;
  double b;
  double scale;  // 1 + |b| + max|coef|
};

std::vector<Handle> build_handles(const QpModel& m) {
  std::vector<Handle> hs;
  // equality rows first so the GI init phase picks them up in order
  for (int pass = 0; pass < 2; ++pass) {
    for (int r = 0; r < static_cast<int>(m.rows.size()); ++r) {
      const SparseRow& row = m.rows[r];
      if (row.eq != (pass == 0)) continue;
      Handle h;
      h.type = ActiveEntry::Type::Row;
      h.index = r;
      h.eq = row.eq;
      double cmax = 0.0;
      if (row.eq) {
        h.normal = row.terms;
        h.b = row.rhs;
      } else {
        for (const auto& [v, a] : row.terms) h.normal.emplace_back(v, -a);
        h.b = -row.rhs;
      }
      for (const auto& [v, a] : h.normal) cmax = std::max(cmax, std::abs(a));
      h.scale = 1.0 + std::abs(h.b) + cmax;
      hs.push_back(std::move(h));
    }
  }
  for (int i = 0; i < m.n; ++i) {
    if (m.lo[i] != -kInf) {
      hs.push_back({ActiveEntry::Type::Lower, i, false, {{i, 1.0}}, m.lo[i], 2.0 + std::abs(m.lo[i])});
    }
    if (m.hi[i] != kInf) {
      hs.push_back({ActiveEntry::Type::Upper, i, false, {{i, -1.0}}, -m.hi[i], 2.0 + std::abs(m.hi[i])});
    }
  }
  return hs;
}

struct RidgeRetry {};

// Blockwise Cholesky of G = Q + delta*I; fills J = L^-T and solves G x = -g.
struct Factorization {
  std::vector<std::vector<int>> blocks;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> llts;

  void factor(const QpModel& m, double delta) {
    UnionFind uf(m.n);
    for (const auto& [i, j, v] : m.q_terms) {
      if (i != j && v != 0.0) uf.unite(i, j);
    }
    std::vector<std::vector<int>> groups(m.n);
    for (int i = 0; i < m.n; ++i) groups[uf.find(i)].push_back(i);
    blocks.clear();
    for (auto& g : groups) {
      if (!g.empty()) blocks.push_back(std::move(g));
    }
    llts.clear();
    llts.reserve(blocks.size());
    std::vector<int> pos(m.n, -1);
    for (const auto& blk : blocks) {
      for (int t = 0; t < static_cast<int>(blk.size()); ++t) pos[blk[t]] = t;
      Eigen::MatrixXd G = Eigen::MatrixXd::Zero(blk.size(), blk.size());
      for (int t = 0; t < static_cast<int>(blk.size()); ++t) G(t, t) = delta;
      for (const auto& [i, j, v] : m.q_terms) {
        const int pi = pos[i], pj = pos[j];
        if (pi < 0 || pj < 0) continue;
        G(pi, pj) += v;
        if (pi != pj) G(pj, pi) += v;
      }
      Eigen::LLT<Eigen::MatrixXd> llt(G);
      if (llt.info() != Eigen::Success) {
        for (int i : blk) pos[i] = -1;
        throw RidgeRetry{};
      }
      llts.push_back(std::move(llt));
      for (int i : blk) pos[i] = -1;
    }
  }

  void init_j(Eigen::MatrixXd& J) const {
    J.setZero();
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      const auto& blk = blocks[bi];
      const int nb = static_cast<int>(blk.size());
      Eigen::MatrixXd Linv_t =
          llts[bi].matrixU().solve(Eigen::MatrixXd::Identity(nb, nb));  // L^-T
      for (int a = 0; a < nb; ++a)
        for (int b = 0; b < nb; ++b) J(blk[a], blk[b]) = Linv_t(a, b);
    }
  }

  Eigen::VectorXd solve_neg(const Eigen::VectorXd& g) const {
    Eigen::VectorXd x(g.size());
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      const auto& blk = blocks[bi];
      Eigen::VectorXd gb(blk.size());
      for (std::size_t t = 0; t < blk.size(); ++t) gb[t] = -g[blk[t]];
      Eigen::VectorXd xb = llts[bi].solve(gb);
      for (std::size_t t = 0; t < blk.size(); ++t) x[blk[t]] = xb[t];
    }
    return x;
  }
};

double eval_true_objective(const QpModel& m, const Eigen::VectorXd& x) {
  double obj = m.c0 + m.c.dot(x);
  for (const auto& [i, j, v] : m.q_terms) {
    obj += (i == j) ? 0.5 * v * x[i] * x[i] : v * x[i] * x[j];
  }
  return obj;
}

Eigen::VectorXd true_gradient(const QpModel& m, const Eigen::VectorXd& x) {
  Eigen::VectorXd g = m.c;
  for (const auto& [i, j, v] : m.q_terms) {
    g[i] += v * x[j];
    if (i != j) g[j] += v * x[i];
  }
  return g;
}

double handle_value(const Handle& h, const Eigen::VectorXd& x) {
  double s = -h.b;
  for (const auto& [v, a] : h.normal) s += a * x[v];
  return s;  // >= 0 means satisfied
}

// ---------------------------------------------------------------------------
// Goldfarb-Idnani dual active-set core over the handle list.
struct GiOut {
  QpStatus status = QpStatus::Optimal;
  Eigen::VectorXd x;
  std::vector<int> active;  // handle ids
  Eigen::VectorXd u;        // multipliers per active entry
  int iterations = 0;
  FarkasCertificate cert;  // handle-id based; mapped by caller
};

class GiSolver {
 public:
  GiSolver(const QpModel& m, const std::vector<Handle>& handles, const Factorization& fac,
           const Eigen::VectorXd& g)
      : m_(m), hs_(handles), n_(m.n) {
    J_.resize(n_, n_);
    fac.init_j(J_);
    R_ = Eigen::MatrixXd::Zero(n_, n_);
    x_ = fac.solve_neg(g);
    u_ = Eigen::VectorXd::Zero(n_ + 1);
    in_active_.assign(hs_.size(), 0);
    max_iter_ = 100 + 24 * (n_ + static_cast<int>(hs_.size()));
  }

  GiOut run() {
    GiOut out;
    // phase 1: equality handles
    for (int hid = 0; hid < static_cast<int>(hs_.size()); ++hid) {
      if (!hs_[hid].eq) continue;
      if (!add_equality(hid, out)) return out;  // infeasible
    }
    // phase 2: inequalities
    for (;;) {
      if (++out.iterations > max_iter_) {
        out.status = QpStatus::IterationLimit;
        break;
      }
      const int ip = pick_violated(out.iterations > max_iter_ / 2);
      if (ip < 0) break;  // optimal
      if (!enforce(ip, out)) return out;  // infeasible or iteration limit
    }
    out.x = x_;
    out.active.assign(active_.begin(), active_.end());
    out.u = u_.head(iq_);
    return out;
  }

 private:
  Eigen::VectorXd normal_dense(int hid) const {
    Eigen::VectorXd np = Eigen::VectorXd::Zero(n_);
    for (const auto& [v, a] : hs_[hid].normal) np[v] += a;
    return np;
  }

  void compute_dzr(const Eigen::VectorXd& np, Eigen::VectorXd& d, Eigen::VectorXd& z,
                   Eigen::VectorXd& r) const {
    d = J_.transpose() * np;
    z = (iq_ < n_) ? Eigen::VectorXd(J_.rightCols(n_ - iq_) * d.tail(n_ - iq_))
                   : Eigen::VectorXd(Eigen::VectorXd::Zero(n_));
    if (iq_ > 0) {
      r = R_.topLeftCorner(iq_, iq_).triangularView<Eigen::Upper>().solve(d.head(iq_));
    } else {
      r.resize(0);
    }
  }

  // Givens-based constraint addition; returns false on linear dependence.
  bool add_constraint(Eigen::VectorXd& d) {
    for (int j = n_ - 1; j >= iq_ + 1; --j) {
      double cc = d[j - 1], ss = d[j];
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d[j] = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        d[j - 1] = -h;
        cc = -cc;
        ss = -ss;
      } else {
        d[j - 1] = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = 0; k < n_; ++k) {
        const double t1 = J_(k, j - 1), t2 = J_(k, j);
        J_(k, j - 1) = t1 * cc + t2 * ss;
        J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    ++iq_;
    R_.col(iq_ - 1).head(iq_) = d.head(iq_);
    const double rnorm = R_.topLeftCorner(iq_, iq_).diagonal().cwiseAbs().maxCoeff();
    return std::abs(d[iq_ - 1]) > 1e-13 * (1.0 + rnorm);
  }

  void delete_constraint(int pos) {
    in_active_[active_[pos]] = 0;  // dropped handles must become pickable again
    for (int i = pos; i < iq_ - 1; ++i) {
      active_[i] = active_[i + 1];
      u_[i] = u_[i + 1];
      R_.col(i) = R_.col(i + 1);
    }
    u_[iq_ - 1] = u_[iq_];
    u_[iq_] = 0.0;
    R_.col(iq_ - 1).setZero();
    --iq_;
    active_.pop_back();
    for (int j = pos; j < iq_; ++j) {
      double cc = R_(j, j), ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = j + 1; k < iq_; ++k) {
        const double t1 = R_(j, k), t2 = R_(j + 1, k);
        R_(j, k) = t1 * cc + t2 * ss;
        R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
      }
      for (int k = 0; k < n_; ++k) {
        const double t1 = J_(k, j), t2 = J_(k, j + 1);
        J_(k, j) = t1 * cc + t2 * ss;
        J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

  void build_certificate(int hid, const Eigen::VectorXd& r, GiOut& out) const {
    out.status = QpStatus::Infeasible;
    out.cert.weights.clear();
    out.cert.weights.emplace_back(ActiveEntry{hs_[hid].type, hs_[hid].index}, 1.0);
    for (int k = 0; k < iq_; ++k) {
      if (std::abs(r[k]) <= 1e-12) continue;
      const Handle& h = hs_[active_[k]];
      out.cert.weights.emplace_back(ActiveEntry{h.type, h.index}, -r[k]);
    }
    out.x = x_;
  }

  bool add_equality(int hid, GiOut& out) {
    const Eigen::VectorXd np = normal_dense(hid);
    Eigen::VectorXd d, z, r;
    compute_dzr(np, d, z, r);
    const double s = handle_value(hs_[hid], x_);
    const double znorm = z.norm();
    if (znorm <= 1e-12 * (1.0 + d.norm())) {
      // linearly dependent equality: consistent -> skip, else infeasible
      if (std::abs(s) <= 1e-9 * hs_[hid].scale) return true;
      build_certificate(hid, r, out);
      return false;
    }
    const double t = -s / z.dot(np);
    x_ += t * z;
    if (iq_ > 0) u_.head(iq_) -= t * r;
    u_[iq_] = t;
    active_.push_back(hid);
    in_active_[hid] = 1;
    if (!add_constraint(d)) {
      // numerically dependent but a step was possible; treat as added anyway
    }
    ++n_eq_active_;
    return true;
  }

  int pick_violated(bool bland) const {
    int best = -1;
    double worst = 0.0;
    for (int hid = 0; hid < static_cast<int>(hs_.size()); ++hid) {
      if (hs_[hid].eq || in_active_[hid]) continue;
      const double s = handle_value(hs_[hid], x_);
      const double tol = 1e-10 * hs_[hid].scale;
      if (s >= -tol) continue;
      if (bland) return hid;  // least-index anti-cycling
      if (s < worst) {
        worst = s;
        best = hid;
      }
    }
    return best;
  }

  // Enforce one violated inequality (the GI step pair). Returns false when
  // solve should abort (infeasible / iteration limit recorded in out).
  bool enforce(int ip, GiOut& out) {
    const Eigen::VectorXd np = normal_dense(ip);
    u_[iq_] = 0.0;
    for (int guard = 0; guard <= 2 * n_ + iq_ + 4; ++guard) {
      Eigen::VectorXd d, z, r;
      compute_dzr(np, d, z, r);
      double t1 = kInf;
      int l1 = -1;
      for (int k = n_eq_active_; k < iq_; ++k) {
        if (r[k] > 1e-13) {
          const double cand = u_[k] / r[k];
          if (cand < t1 - 1e-15 || (cand <= t1 + 1e-15 && (l1 < 0 || active_[k] < active_[l1]))) {
            t1 = cand;
            l1 = k;
          }
        }
      }
      const double s = handle_value(hs_[ip], x_);
      const double zn = z.dot(np);
      const double t2 = (z.norm() > 1e-12 * (1.0 + d.norm()) && zn > 0.0) ? -s / zn : kInf;
      const double t = std::min(t1, t2);
      if (t == kInf) {
        build_certificate(ip, r, out);
        return false;
      }
      if (t2 == kInf) {
        // dual step only
        u_.head(iq_) -= t * r;
        u_[iq_] += t;
        delete_constraint(l1);
        continue;
      }
      x_ += t * z;
      if (iq_ > 0) u_.head(iq_) -= t * r;
      u_[iq_] += t;
      if (t == t2) {
        active_.push_back(ip);
        in_active_[ip] = 1;
        if (!add_constraint(d)) {
          // dependent normal at zero violation; drop again to stay consistent
          in_active_[ip] = 0;
          active_.pop_back();
          --iq_;
          R_.col(iq_).setZero();
        }
        return true;
      }
      delete_constraint(l1);
    }
    out.status = QpStatus::IterationLimit;
    out.x = x_;
    out.active.assign(active_.begin(), active_.end());
    out.u = u_.head(iq_);
    return false;
  }

  const QpModel& m_;
  const std::vector<Handle>& hs_;
  int n_;
  Eigen::MatrixXd J_, R_;
  Eigen::VectorXd x_, u_;
  std::vector<int> active_;
  std::vector<char> in_active_;
  int iq_ = 0;
  int n_eq_active_ = 0;
  int max_iter_ = 0;
};

// ---------------------------------------------------------------------------
// presolve: eliminate variables with lo == hi (within 1e-12)
struct Reduced {
  QpModel model;
  std::vector<int> var_map;      // original -> reduced (-1 when eliminated)
  std::vector<int> inv_var_map;  // reduced -> original
  std::vector<int> row_map;      // reduced row -> original row
  Eigen::VectorXd fixed_value;   // original-space, meaningful where var_map < 0
};

Reduced eliminate_fixed(const QpModel& m) {
  Reduced r;
  r.var_map.assign(m.n, -1);
  r.fixed_value = Eigen::VectorXd::Zero(m.n);
  int nr = 0;
  for (int i = 0; i < m.n; ++i) {
    if (m.lo[i] != -kInf && m.hi[i] != kInf && m.hi[i] - m.lo[i] <= 1e-12) {
      r.fixed_value[i] = 0.5 * (m.lo[i] + m.hi[i]);
    } else {
      r.var_map[i] = nr++;
      r.inv_var_map.push_back(i);
    }
  }
  QpModel& red = r.model;
  red.n = nr;
  red.c = Eigen::VectorXd::Zero(nr);
  red.c0 = m.c0;
  red.lo.resize(nr);
  red.hi.resize(nr);
  red.ridge_center = Eigen::VectorXd::Zero(nr);
  red.ridge = m.ridge;
  for (int i = 0; i < m.n; ++i) {
    const int ri = r.var_map[i];
    if (ri < 0) continue;
    red.c[ri] = m.c[i];
    red.lo[ri] = m.lo[i];
    red.hi[ri] = m.hi[i];
    if (m.ridge_center.size() == m.n) red.ridge_center[ri] = m.ridge_center[i];
  }
  for (const auto& [i, j, v] : m.q_terms) {
    const int ri = r.var_map[i], rj = r.var_map[j];
    if (ri >= 0 && rj >= 0) {
      red.q_terms.emplace_back(std::min(ri, rj), std::max(ri, rj), v);
    } else if (ri >= 0) {
      red.c[ri] += v * r.fixed_value[j];
    } else if (rj >= 0) {
      red.c[rj] += v * r.fixed_value[i];
    } else {
      red.c0 += (i == j ? 0.5 : 1.0) * v * r.fixed_value[i] * r.fixed_value[j];
    }
  }
  for (int i = 0; i < m.n; ++i) {
    if (r.var_map[i] < 0) red.c0 += m.c[i] * r.fixed_value[i];
  }
  for (int rowi = 0; rowi < static_cast<int>(m.rows.size()); ++rowi) {
    const SparseRow& row = m.rows[rowi];
    SparseRow nrow;
    nrow.eq = row.eq;
    nrow.rhs = row.rhs;
    for (const auto& [v, a] : row.terms) {
      if (r.var_map[v] >= 0) {
        nrow.terms.emplace_back(r.var_map[v], a);
      } else {
        nrow.rhs -= a * r.fixed_value[v];
      }
    }
    red.rows.push_back(std::move(nrow));
    r.row_map.push_back(rowi);
  }
  return r;
}

// Completes a Farkas certificate across eliminated variables: any residual
// normal mass on a fixed variable is cancelled with that variable's bound.
FarkasCertificate complete_certificate(const QpModel& orig, const Reduced& red,
                                       const FarkasCertificate& cert_reduced_rows) {
  FarkasCertificate out;
  Eigen::VectorXd residual = Eigen::VectorXd::Zero(orig.n);
  for (const auto& [entry, w] : cert_reduced_rows.weights) {
    ActiveEntry e = entry;
    if (e.type == ActiveEntry::Type::Row) {
      e.index = red.row_map[e.index];
      const SparseRow& row = orig.rows[e.index];
      const double sign = row.eq ? 1.0 : -1.0;  // ">=" orientation of the row
      for (const auto& [v, a] : row.terms) residual[v] += w * sign * a;
    } else {
      e.index = red.inv_var_map[e.index];
      residual[e.index] += w * (e.type == ActiveEntry::Type::Lower ? 1.0 : -1.0);
    }
    out.weights.emplace_back(e, w);
  }
  for (int i = 0; i < orig.n; ++i) {
    if (red.var_map[i] >= 0 || std::abs(residual[i]) <= 1e-12) continue;
    if (residual[i] < 0.0) {
      out.weights.emplace_back(ActiveEntry{ActiveEntry::Type::Lower, i}, -residual[i]);
    } else {
      out.weights.emplace_back(ActiveEntry{ActiveEntry::Type::Upper, i}, residual[i]);
    }
  }
  return out;
}

double ridge_abs(const QpModel& m) {
  double dmax = 0.0;
  for (const auto& [i, j, v] : m.q_terms) {
    if (i == j) dmax = std::max(dmax, std::abs(v));
  }
  return m.ridge * std::max(1.0, dmax);
}

Eigen::VectorXd ridged_gradient_vec(const QpModel& m, double delta) {
  // linear part of the ridged objective: g = c - delta * center
  Eigen::VectorXd g = m.c;
  if (m.ridge_center.size() == m.n) g -= delta * m.ridge_center;
  return g;
}

// ---------------------------------------------------------------------------
// warm-start shortcut: refine a candidate active set with sparse KKT solves.
// Starting from the warm active set, alternately adds the most violated
// inactive constraint and drops the constraint with the most negative
// multiplier until the KKT conditions hold.  Any irregularity (singular
// system, missing handle, no progress within the pass budget) bails out to
// the full solver, so this path can only accept verified optima.
bool try_warm(const QpModel& m, double delta, const std::vector<Handle>& handles,
              const WarmStart& warm, GiOut& out) {
  std::vector<int> row_handle(m.rows.size(), -1), lo_handle(m.n, -1), hi_handle(m.n, -1);
  for (int h = 0; h < static_cast<int>(handles.size()); ++h) {
    switch (handles[h].type) {
      case ActiveEntry::Type::Row: row_handle[handles[h].index] = h; break;
      case ActiveEntry::Type::Lower: lo_handle[handles[h].index] = h; break;
      case ActiveEntry::Type::Upper: hi_handle[handles[h].index] = h; break;
    }
  }
  // collect: pinned vars (1 = lower bound, 2 = upper) and active/equality rows
  std::vector<char> pin(m.n, 0);
  std::vector<char> row_act(m.rows.size(), 0);
  for (int r = 0; r < static_cast<int>(m.rows.size()); ++r) {
    if (m.rows[r].eq) row_act[r] = 1;
  }
  for (const ActiveEntry& e : warm.active) {
    switch (e.type) {
      case ActiveEntry::Type::Row:
        if (e.index < 0 || e.index >= static_cast<int>(m.rows.size())) return false;
        row_act[e.index] = 1;
        break;
      case ActiveEntry::Type::Lower:
        if (e.index < 0 || e.index >= m.n || m.lo[e.index] == -kInf) return false;
        pin[e.index] = 1;
        break;
      case ActiveEntry::Type::Upper:
        if (e.index < 0 || e.index >= m.n || m.hi[e.index] == kInf) return false;
        if (pin[e.index]) return false;
        pin[e.index] = 2;
        break;
    }
  }

  const Eigen::VectorXd g0 = ridged_gradient_vec(m, delta);
  Eigen::VectorXd x(m.n), grad(m.n);
  Eigen::VectorXd pinval = Eigen::VectorXd::Zero(m.n);
  std::vector<int> act_rows;
  std::vector<double> lam;
  const int max_passes = 100;
  int pass = 0;
  for (;; ++pass) {
    if (pass >= max_passes) return false;
    std::vector<int> free_vars;
    std::vector<int> fpos(m.n, -1);
    for (int i = 0; i < m.n; ++i) {
      if (!pin[i]) {
        fpos[i] = static_cast<int>(free_vars.size());
        free_vars.push_back(i);
      } else {
        pinval[i] = pin[i] == 1 ? m.lo[i] : m.hi[i];
      }
    }
    act_rows.clear();
    for (int r = 0; r < static_cast<int>(m.rows.size()); ++r) {
      if (row_act[r]) act_rows.push_back(r);
    }
    const int nf = static_cast<int>(free_vars.size());
    const int nr = static_cast<int>(act_rows.size());

    // sparse KKT system over the free variables and active rows
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(m.q_terms.size() + nf + 4 * nr);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf + nr);
    for (int a = 0; a < nf; ++a) {
      trips.emplace_back(a, a, delta);
      rhs[a] = -g0[free_vars[a]];
    }
    for (const auto& [i, j, v] : m.q_terms) {
      if (!pin[i] && !pin[j]) {
        trips.emplace_back(fpos[i], fpos[j], v);
        if (i != j) trips.emplace_back(fpos[j], fpos[i], v);
      } else if (!pin[i]) {
        rhs[fpos[i]] -= v * pinval[j];
      } else if (!pin[j]) {
        rhs[fpos[j]] -= v * pinval[i];
      }
    }
    for (int t = 0; t < nr; ++t) {
      const SparseRow& row = m.rows[act_rows[t]];
      double rr = row.rhs;
      for (const auto& [v, a] : row.terms) {
        if (pin[v]) {
          rr -= a * pinval[v];
        } else {
          trips.emplace_back(nf + t, fpos[v], a);
          trips.emplace_back(fpos[v], nf + t, a);
        }
      }
      rhs[nf + t] = rr;
    }
    Eigen::VectorXd sol = Eigen::VectorXd::Zero(nf + nr);
    if (nf + nr > 0) {
      Eigen::SparseMatrix<double> K(nf + nr, nf + nr);
      K.setFromTriplets(trips.begin(), trips.end());
      // The active rows may be linearly dependent (e.g. redundant equality
      // systems), which makes the exact KKT matrix singular even though the
      // system is consistent.  Factor a dual-regularized, quasi-definite copy
      // instead and recover the exact solution by iterative refinement; an
      // inconsistent system leaves a large residual and is rejected below.
      double kscale = 0.0;
      for (const auto& t : trips) kscale = std::max(kscale, std::abs(t.value()));
      const double eps = 1e-12 * (1.0 + kscale);
      for (int t = 0; t < nr; ++t) trips.emplace_back(nf + t, nf + t, -eps);
      Eigen::SparseMatrix<double> Kreg(nf + nr, nf + nr);
      Kreg.setFromTriplets(trips.begin(), trips.end());
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.compute(Kreg);
      if (lu.info() != Eigen::Success) return false;
      sol = lu.solve(rhs);
      const double rtol = 1e-10 * (1.0 + rhs.cwiseAbs().maxCoeff());
      for (int it = 0; it < 12; ++it) {
        const Eigen::VectorXd r = rhs - K * sol;
        if (r.cwiseAbs().maxCoeff() <= rtol) break;
        sol += lu.solve(r);
      }
      if ((K * sol - rhs).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + rhs.cwiseAbs().maxCoeff())) {
        return false;
      }
    }

    for (int i = 0; i < m.n; ++i) x[i] = pin[i] ? pinval[i] : 0.0;
    for (int a = 0; a < nf; ++a) x[free_vars[a]] = sol[a];
    grad = g0 + delta * x;
    for (const auto& [i, j, v] : m.q_terms) {
      grad[i] += v * x[j];
      if (i != j) grad[j] += v * x[i];
    }
    lam.assign(nr, 0.0);
    for (int t = 0; t < nr; ++t) lam[t] = sol[nf + t];

    // activate every violated inactive constraint in one batch; violated
    // bounds are pinned outright.  An overdetermined (or dependent) active
    // set is allowed: the regularized solve plus the residual gate reject
    // any set whose stationarity system is inconsistent.
    int added = 0;
    std::vector<std::pair<double, int>> violated_rows;
    for (int h = 0; h < static_cast<int>(handles.size()); ++h) {
      const Handle& hd = handles[h];
      if (hd.eq) continue;
      if (hd.type == ActiveEntry::Type::Row) {
        if (row_act[hd.index]) continue;
      } else if (pin[hd.index]) {
        continue;
      }
      const double rel = -handle_value(hd, x) / hd.scale;
      if (rel <= 1e-9) continue;
      if (hd.type == ActiveEntry::Type::Row) {
        violated_rows.emplace_back(rel, hd.index);
      } else {
        pin[hd.index] = hd.type == ActiveEntry::Type::Lower ? 1 : 2;
        ++added;
      }
    }
    for (const auto& [rel, r] : violated_rows) {
      row_act[r] = 1;
      ++added;
    }
    if (added > 0) continue;

    // primal feasible: drop every constraint with a negative multiplier
    const double gsc = 1.0 + (m.n > 0 ? grad.cwiseAbs().maxCoeff() : 0.0);
    int dropped = 0;
    for (int t = 0; t < nr; ++t) {
      const SparseRow& row = m.rows[act_rows[t]];
      if (row.eq) continue;
      const double uval = lam[t];
      if (uval < -1e-9 * (1.0 + std::abs(uval))) {
        row_act[act_rows[t]] = 0;
        ++dropped;
      }
    }
    {
      Eigen::VectorXd rc = Eigen::VectorXd::Zero(m.n);
      for (int t = 0; t < nr; ++t) {
        const SparseRow& row = m.rows[act_rows[t]];
        const double uval = row.eq ? -lam[t] : lam[t];
        const double sign = row.eq ? 1.0 : -1.0;
        for (const auto& [v, a] : row.terms) rc[v] += uval * sign * a;
      }
      for (int i = 0; i < m.n; ++i) {
        if (!pin[i]) continue;
        const double resid = grad[i] - rc[i];
        const double uval = pin[i] == 1 ? resid : -resid;
        if (uval < -1e-9 * gsc) {
          pin[i] = 0;
          ++dropped;
        }
      }
    }
    if (dropped > 0) continue;
    break;  // primal feasible with nonnegative multipliers
  }

  // strict verification and multiplier packaging
  const int nr = static_cast<int>(act_rows.size());
  std::vector<int> act_handles;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(m.n + static_cast<int>(m.rows.size()));
  int cnt = 0;
  Eigen::VectorXd row_contrib = Eigen::VectorXd::Zero(m.n);
  for (int t = 0; t < nr; ++t) {
    const SparseRow& row = m.rows[act_rows[t]];
    const double lambda = lam[t];  // G x + g + lambda * a = 0 per row
    const double uval = row.eq ? -lambda : lambda;
    if (!row.eq && uval < -1e-9 * (1.0 + std::abs(uval))) return false;
    const int hid = row_handle[act_rows[t]];
    if (hid < 0) return false;
    act_handles.push_back(hid);
    u[cnt++] = uval;
    const double sign = row.eq ? 1.0 : -1.0;
    for (const auto& [v, a] : row.terms) row_contrib[v] += uval * sign * a;
  }
  const double gscale = 1.0 + grad.cwiseAbs().maxCoeff();
  for (int i = 0; i < m.n; ++i) {
    if (!pin[i]) continue;
    const double resid = grad[i] - row_contrib[i];
    ActiveEntry::Type want;
    double uval;
    const bool at_lo = m.lo[i] != -kInf && std::abs(pinval[i] - m.lo[i]) <= 1e-12 * (1.0 + std::abs(m.lo[i]));
    const bool at_hi = m.hi[i] != kInf && std::abs(pinval[i] - m.hi[i]) <= 1e-12 * (1.0 + std::abs(m.hi[i]));
    if (resid >= 0.0 && at_lo) {
      want = ActiveEntry::Type::Lower;
      uval = resid;
    } else if (resid <= 0.0 && at_hi) {
      want = ActiveEntry::Type::Upper;
      uval = -resid;
    } else if (std::abs(resid) <= 1e-9 * gscale && (at_lo || at_hi)) {
      want = at_lo ? ActiveEntry::Type::Lower : ActiveEntry::Type::Upper;
      uval = 0.0;
    } else {
      return false;
    }
    const int hid = (want == ActiveEntry::Type::Lower) ? lo_handle[i] : hi_handle[i];
    if (hid < 0) return false;
    act_handles.push_back(hid);
    u[cnt++] = uval;
  }
  // primal feasibility of everything else
  for (const Handle& h : handles) {
    const double s = handle_value(h, x);
    if (h.eq) {
      if (std::abs(s) > 1e-9 * h.scale) return false;
    } else if (s < -1e-9 * h.scale) {
      return false;
    }
  }
  out.status = QpStatus::Optimal;
  out.x = x;
  out.active = act_handles;
  out.u = u.head(cnt);
  out.iterations = pass + 1;
  return true;
}

}  // namespace

QpModel QpModel::make(int n) {
  QpModel m;
  m.n = n;
  m.c = Eigen::VectorXd::Zero(n);
  m.lo = Eigen::VectorXd::Constant(n, -kInf);
  m.hi = Eigen::VectorXd::Constant(n, kInf);
  return m;
}

QpSolution solve_qp(const QpModel& model, const WarmStart* warm) {
  if (model.c.size() != model.n || model.lo.size() != model.n || model.hi.size() != model.n) {
    throw std::invalid_argument("solve_qp: inconsistent model dimensions");
  }
  const Reduced red = eliminate_fixed(model);
  const QpModel& rm = red.model;

  QpSolution sol;
  // constant rows (all terms eliminated or empty to begin with)
  for (int r = 0; r < static_cast<int>(rm.rows.size()); ++r) {
    const SparseRow& row = rm.rows[r];
    if (!row.terms.empty()) continue;
    const bool bad = row.eq ? std::abs(row.rhs) > 1e-9 * (1.0 + std::abs(row.rhs))
                            : row.rhs < -1e-9;
    if (bad) {
      sol.status = QpStatus::Infeasible;
      FarkasCertificate c;
      c.weights.emplace_back(ActiveEntry{ActiveEntry::Type::Row, r}, 1.0);
      sol.certificate = complete_certificate(model, red, c);
      sol.x = red.fixed_value;
      return sol;
    }
  }

  // map a full-space warm start into the reduced space
  WarmStart rwarm;
  bool have_warm = false;
  if (warm && warm->x.size() == model.n) {
    have_warm = true;
    rwarm.x.resize(rm.n);
    for (int i = 0; i < rm.n; ++i) rwarm.x[i] = warm->x[red.inv_var_map[i]];
    for (const ActiveEntry& e : warm->active) {
      if (e.type == ActiveEntry::Type::Row) {
        rwarm.active.push_back(e);  // row ids are preserved by eliminate_fixed
      } else if (red.var_map[e.index] >= 0) {
        rwarm.active.push_back({e.type, red.var_map[e.index]});
      }
    }
  }

  // ridge schedule: single step for true QPs, graded for LP-like objectives
  std::vector<double> deltas;
  bool has_quadratic = false;
  for (const auto& [i, j, v] : rm.q_terms) {
    if (v != 0.0) has_quadratic = true;
  }
  const double base = ridge_abs(rm);
  if (!has_quadratic && rm.c.size() > 0 && rm.c.cwiseAbs().maxCoeff() > 0.0) {
    const double cmax = rm.c.cwiseAbs().maxCoeff();
    deltas = {1e-2 * cmax, 1e-6 * cmax, std::min(1e-10 * cmax, base)};
  } else {
    deltas = {base};
  }

  GiOut out;
  std::vector<Handle> handles = build_handles(rm);
  int total_iters = 0;
  bool boosted = false;
  bool warm_hit = false;

  if (rm.n == 0) {
    out.status = QpStatus::Optimal;
    out.x.resize(0);
  } else {
    for (std::size_t stage = 0; stage < deltas.size(); ++stage) {
      double delta = std::max(deltas[stage], 1e-300);
      if (have_warm) {
        GiOut wout;
        if (try_warm(rm, delta, handles, rwarm, wout)) {
          out = wout;
          total_iters += wout.iterations;
          warm_hit = true;
          rwarm.x = out.x;
          rwarm.active.clear();
          for (std::size_t a = 0; a < out.active.size(); ++a) {
            const Handle& h = handles[out.active[a]];
            rwarm.active.push_back({h.type, h.index});
          }
          continue;
        }
      }
      Factorization fac;
      int tries = 0;
      for (;;) {
        try {
          fac.factor(rm, delta);
          break;
        } catch (const RidgeRetry&) {
          // tell genuinely indefinite Q apart from a merely singular PSD one
          // before masking the failure with more ridge
          Eigen::MatrixXd G = Eigen::MatrixXd::Zero(rm.n, rm.n);
          for (const auto& [i, j, v] : rm.q_terms) {
            G(i, j) += v;
            if (i != j) G(j, i) += v;
          }
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
          double scale = 1.0;
          if (rm.n > 0) scale = std::max(1.0, G.diagonal().cwiseAbs().maxCoeff());
          if (es.eigenvalues()[0] < -1e-8 * scale || ++tries > 3) {
            Eigen::VectorXd dir_red = es.eigenvectors().col(0);
            Eigen::VectorXd dir = Eigen::VectorXd::Zero(model.n);
            for (int i = 0; i < rm.n; ++i) dir[red.inv_var_map[i]] = dir_red[i];
            throw NonConvexError("solve_qp: Q has negative curvature " +
                                     std::to_string(es.eigenvalues()[0]),
                                 dir);
          }
          delta *= 1e4;
          boosted = true;
        }
      }
      GiSolver gi(rm, handles, fac, ridged_gradient_vec(rm, delta));
      out = gi.run();
      total_iters += out.iterations;
      warm_hit = false;
      if (out.status != QpStatus::Optimal) break;
      have_warm = true;
      rwarm.x = out.x;
      rwarm.active.clear();
      for (int hid : out.active) rwarm.active.push_back({handles[hid].type, handles[hid].index});
    }
  }

  sol.status = out.status;
  sol.iterations = total_iters;
  sol.ridge_boosted = boosted;
  sol.warm_hit = warm_hit;
  sol.x = red.fixed_value;
  for (int i = 0; i < rm.n; ++i) {
    if (out.x.size() == rm.n) sol.x[red.inv_var_map[i]] = out.x[i];
  }
  if (out.status == QpStatus::Infeasible) {
    // map handle-based certificate (reduced ids) into the original space
    FarkasCertificate reduced_cert = out.cert;
    sol.certificate = complete_certificate(model, red, reduced_cert);
    return sol;
  }
  sol.objective = eval_true_objective(model, sol.x);
  if (out.status == QpStatus::Optimal) {
    for (std::size_t a = 0; a < out.active.size(); ++a) {
      const Handle& h = (out.active[a] >= 0) ? handles[out.active[a]] : handles[0];
      ActiveEntry e{h.type, h.index};
      if (e.type != ActiveEntry::Type::Row) e.index = red.inv_var_map[e.index];
      sol.active.push_back(e);
      sol.multipliers.push_back(out.u[a]);
    }
    // bound multipliers for eliminated variables (keeps stationarity whole)
    Eigen::VectorXd grad = true_gradient(model, sol.x);
    Eigen::VectorXd covered = Eigen::VectorXd::Zero(model.n);
    for (std::size_t a = 0; a < sol.active.size(); ++a) {
      const ActiveEntry& e = sol.active[a];
      if (e.type == ActiveEntry::Type::Row) {
        const SparseRow& row = model.rows[e.index];
        const double sign = row.eq ? 1.0 : -1.0;
        for (const auto& [v, c] : row.terms) covered[v] += sol.multipliers[a] * sign * c;
      } else {
        covered[e.index] += sol.multipliers[a] * (e.type == ActiveEntry::Type::Lower ? 1.0 : -1.0);
      }
    }
    for (int i = 0; i < model.n; ++i) {
      if (red.var_map[i] >= 0) continue;
      const double resid = grad[i] - covered[i];
      if (resid >= 0.0) {
        sol.active.push_back({ActiveEntry::Type::Lower, i});
        sol.multipliers.push_back(resid);
      } else {
        sol.active.push_back({ActiveEntry::Type::Upper, i});
        sol.multipliers.push_back(-resid);
      }
    }
  }
  return sol;
}

KktReport check_kkt(const QpModel& model, const QpSolution& sol) {
  KktReport rep;
  if (sol.status != QpStatus::Optimal) return rep;
  Eigen::VectorXd grad = true_gradient(model, sol.x);
  Eigen::VectorXd nsum = Eigen::VectorXd::Zero(model.n);
  for (std::size_t a = 0; a < sol.active.size(); ++a) {
    const ActiveEntry& e = sol.active[a];
    const double u = sol.multipliers[a];
    double slack = 0.0;
    switch (e.type) {
      case ActiveEntry::Type::Row: {
        const SparseRow& row = model.rows[e.index];
        const double sign = row.eq ? 1.0 : -1.0;
        double lhs = 0.0;
        for (const auto& [v, c] : row.terms) {
          nsum[v] += u * sign * c;
          lhs += c * sol.x[v];
        }
        slack = sign * (lhs - row.rhs);
        if (!row.eq) rep.dual = std::max(rep.dual, -u);
        break;
      }
      case ActiveEntry::Type::Lower:
        nsum[e.index] += u;
        slack = sol.x[e.index] - model.lo[e.index];
        rep.dual = std::max(rep.dual, -u);
        break;
      case ActiveEntry::Type::Upper:
        nsum[e.index] -= u;
        slack = model.hi[e.index] - sol.x[e.index];
        rep.dual = std::max(rep.dual, -u);
        break;
    }
    rep.complementarity = std::max(rep.complementarity, std::abs(u * slack));
  }
  rep.stationarity = (grad - nsum).cwiseAbs().maxCoeff();
  for (const SparseRow& row : model.rows) {
    double lhs = 0.0;
    for (const auto& [v, c] : row.terms) lhs += c * sol.x[v];
    const double viol = row.eq ? std::abs(lhs - row.rhs) : lhs - row.rhs;
    rep.primal = std::max(rep.primal, viol);
  }
  for (int i = 0; i < model.n; ++i) {
    if (model.lo[i] != -kInf) rep.primal = std::max(rep.primal, model.lo[i] - sol.x[i]);
    if (model.hi[i] != kInf) rep.primal = std::max(rep.primal, sol.x[i] - model.hi[i]);
  }
  return rep;
}

bool certificate_valid(const QpModel& model, const FarkasCertificate& cert, double tol) {
  if (cert.weights.empty()) return false;
  Eigen::VectorXd combo = Eigen::VectorXd::Zero(model.n);
  double rhs = 0.0;
  double wmax = 0.0;
  for (const auto& [e, w] : cert.weights) {
    wmax = std::max(wmax, std::abs(w));
    switch (e.type) {
      case ActiveEntry::Type::Row: {
        const SparseRow& row = model.rows[e.index];
        if (!row.eq && w < -tol) return false;
        const double sign = row.eq ? 1.0 : -1.0;
        for (const auto& [v, c] : row.terms) combo[v] += w * sign * c;
        rhs += w * sign * row.rhs;
        break;
      }
      case ActiveEntry::Type::Lower:
        if (w < -tol || model.lo[e.index] == -kInf) return false;
        combo[e.index] += w;
        rhs += w * model.lo[e.index];
        break;
      case ActiveEntry::Type::Upper:
        if (w < -tol || model.hi[e.index] == kInf) return false;
        combo[e.index] -= w;
        rhs -= w * model.hi[e.index];
        break;
    }
  }
  const double scale = std::max(1.0, wmax);
  return combo.cwiseAbs().maxCoeff() <= tol * scale && rhs > tol * scale * 1e-3;
}

std::vector<SubModel> decompose(const QpModel& model) {
  UnionFind uf(model.n);
  for (const auto& [i, j, v] : model.q_terms) {
    if (i != j && v != 0.0) uf.unite(i, j);
  }
  for (const SparseRow& row : model.rows) {
    for (std::size_t t = 1; t < row.terms.size(); ++t) {
      uf.unite(row.terms[0].first, row.terms[t].first);
    }
  }
  std::vector<std::vector<int>> groups(model.n);
  for (int i = 0; i < model.n; ++i) groups[uf.find(i)].push_back(i);

  std::vector<SubModel> parts;
  std::vector<int> part_of(model.n, -1);
  for (auto& g : groups) {
    if (g.empty()) continue;
    SubModel sm;
    sm.vars = g;
    sm.model = QpModel::make(static_cast<int>(g.size()));
    sm.model.ridge = model.ridge;
    sm.model.ridge_center = Eigen::VectorXd::Zero(g.size());
    for (std::size_t t = 0; t < g.size(); ++t) {
      part_of[g[t]] = static_cast<int>(parts.size());
      sm.model.c[t] = model.c[g[t]];
      sm.model.lo[t] = model.lo[g[t]];
      sm.model.hi[t] = model.hi[g[t]];
      if (model.ridge_center.size() == model.n) sm.model.ridge_center[t] = model.ridge_center[g[t]];
    }
    parts.push_back(std::move(sm));
  }
  // constant share of c0 goes to the first part for bookkeeping
  if (!parts.empty()) parts[0].model.c0 = model.c0;

  std::vector<std::vector<int>> local(model.n);
  for (const SubModel& sm : parts) {
    for (std::size_t t = 0; t < sm.vars.size(); ++t) local[sm.vars[t]].push_back(static_cast<int>(t));
  }
  std::vector<int> local_of(model.n, -1);
  for (const SubModel& sm : parts) {
    for (std::size_t t = 0; t < sm.vars.size(); ++t) local_of[sm.vars[t]] = static_cast<int>(t);
  }
  for (const auto& [i, j, v] : model.q_terms) {
    const int p = part_of[i];
    auto& qt = parts[p].model.q_terms;
    const int li = local_of[i], lj = local_of[j];
    qt.emplace_back(std::min(li, lj), std::max(li, lj), v);
  }
  // empty rows form a dedicated constant part so feasibility stays checked
  SubModel const_part;
  const_part.model = QpModel::make(0);
  for (int r = 0; r < static_cast<int>(model.rows.size()); ++r) {
    const SparseRow& row = model.rows[r];
    if (row.terms.empty()) {
      const_part.model.rows.push_back(row);
      const_part.rows.push_back(r);
      continue;
    }
    const int p = part_of[row.terms[0].first];
    SparseRow nrow;
    nrow.eq = row.eq;
    nrow.rhs = row.rhs;
    for (const auto& [v, a] : row.terms) nrow.terms.emplace_back(local_of[v], a);
    parts[p].model.rows.push_back(std::move(nrow));
    parts[p].rows.push_back(r);
  }
  if (!const_part.model.rows.empty()) parts.push_back(std::move(const_part));
  return parts;
}

QpModel from_system(const ConstraintSystem& sys) {
  QpModel m = QpModel::make(sys.var_count());
  for (int i = 0; i < m.n; ++i) {
    m.lo[i] = sys.lower(i);
    m.hi[i] = sys.upper(i);
  }
  for (const LinearRow& row : sys.rows()) {
    SparseRow r;
    r.eq = row.sense == Sense::Eq;
    r.rhs = row.rhs;
    for (const auto& [ref, coef] : row.terms) r.terms.emplace_back(sys.flat_index(ref), coef);
    m.rows.push_back(std::move(r));
  }
  m.ridge_center = Eigen::VectorXd::Zero(m.n);
  return m;
}

void add_least_squares_objective(QpModel& model, const ConstraintSystem& reduced,
                                 const DenseMatrix& a, const DenseMatrix& fixed_values) {
  const Dims& d = reduced.dims();
  double sq = 0.0;
  for (double v : a.data()) sq += v * v;
  model.c0 += sq;
  if (reduced.fixed_factor() == FixedFactor::W) {
    // free H; fixed_values = W (m x k)
    const DenseMatrix& w = fixed_values;
    if (w.rows() != d.m || w.cols() != d.k || a.rows() != d.m || a.cols() != d.n) {
      throw std::invalid_argument("add_least_squares_objective: shape mismatch (W fixed)");
    }
    DenseMatrix g = matmul(w.transposed(), w);     // k x k
    DenseMatrix wa = matmul(w.transposed(), a);    // k x n
    for (int j = 0; j < d.n; ++j) {
      for (int i1 = 0; i1 < d.k; ++i1) {
        const int f1 = reduced.flat_index(VariableRef::h(i1, j));
        model.c[f1] += -2.0 * wa(i1, j);
        for (int i2 = i1; i2 < d.k; ++i2) {
          const int f2 = reduced.flat_index(VariableRef::h(i2, j));
          if (g(i1, i2) != 0.0) model.q_terms.emplace_back(f1, f2, 2.0 * g(i1, i2));
        }
      }
    }
  } else if (reduced.fixed_factor() == FixedFactor::H) {
    // free W; fixed_values = H (k x n)
    const DenseMatrix& h = fixed_values;
    if (h.rows() != d.k || h.cols() != d.n || a.rows() != d.m || a.cols() != d.n) {
      throw std::invalid_argument("add_least_squares_objective: shape mismatch (H fixed)");
    }
    DenseMatrix g = matmul(h, h.transposed());     // k x k
    DenseMatrix ah = matmul(a, h.transposed());    // m x k
    for (int i = 0; i < d.m; ++i) {
      for (int l1 = 0; l1 < d.k; ++l1) {
        const int f1 = reduced.flat_index(VariableRef::w(i, l1));
        model.c[f1] += -2.0 * ah(i, l1);
        for (int l2 = l1; l2 < d.k; ++l2) {
          const int f2 = reduced.flat_index(VariableRef::w(i, l2));
          if (g(l1, l2) != 0.0) model.q_terms.emplace_back(f1, f2, 2.0 * g(l1, l2));
        }
      }
    }
  } else {
    throw std::invalid_argument("add_least_squares_objective: system has no fixed factor");
  }
}

DenseMatrix solve_nnls_step(const DenseMatrix& a, const DenseMatrix& fixed, NnlsSide which,
                            const ConstraintSystem& extra) {
  const FixedFactor ff = (which == NnlsSide::SolveForW) ? FixedFactor::H : FixedFactor::W;
  ConstraintSystem reduced = extra.fix_factor(ff, fixed);
  QpModel model = from_system(reduced);
  add_least_squares_objective(model, reduced, a, fixed);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(model.n);
  for (const SubModel& part : decompose(model)) {
    QpSolution s = solve_qp(part.model);
    if (s.status == QpStatus::Infeasible) {
      throw InfeasibleSystemError("solve_nnls_step: constraints infeasible", s.certificate);
    }
    if (s.status != QpStatus::Optimal) {
      throw std::runtime_error("solve_nnls_step: QP iteration limit");
    }
    for (std::size_t t = 0; t < part.vars.size(); ++t) x[part.vars[t]] = s.x[t];
  }

  const Dims& d = reduced.dims();
  DenseMatrix out = (which == NnlsSide::SolveForW) ? DenseMatrix(d.m, d.k) : DenseMatrix(d.k, d.n);
  for (int i = 0; i < out.rows(); ++i) {
    for (int j = 0; j < out.cols(); ++j) {
      const VariableRef ref = (which == NnlsSide::SolveForW) ? VariableRef::w(i, j) : VariableRef::h(i, j);
      out(i, j) = x[reduced.flat_index(ref)];
    }
  }
  out.check_finite("solve_nnls_step");
  return out;
}

}  // namespace combifd::qp
