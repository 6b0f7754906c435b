#include "combifd/miqp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <ostream>
#include <queue>
#include <stdexcept>

#include <json.hpp>

#include "combifd/rng.hpp"

namespace combifd::miqp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kIntTol = 1e-6;

struct Clock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double limit = kInf;
  bool expired() const {
    if (!std::isfinite(limit)) return false;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= limit;
  }
};

double eval_objective(const qp::QpModel& m, const Eigen::VectorXd& x) {
  double obj = m.c0 + m.c.dot(x);
  for (const auto& [i, j, v] : m.q_terms) obj += (i == j ? 0.5 : 1.0) * v * x[i] * x[j];
  return obj;
}

bool point_feasible(const qp::QpModel& m, const std::vector<int>& bins,
                    const Eigen::VectorXd& x, double tol) {
  for (int i = 0; i < m.n; ++i) {
    if (x[i] < m.lo[i] - tol || x[i] > m.hi[i] + tol) return false;
  }
  for (const auto& row : m.rows) {
    double act = 0.0, scale = 1.0 + std::abs(row.rhs);
    for (const auto& [v, cf] : row.terms) {
      act += cf * x[v];
      scale = std::max(scale, std::abs(cf));
    }
    double slack = act - row.rhs;
    if (row.eq ? std::abs(slack) > tol * scale : slack > tol * scale) return false;
  }
  for (int b : bins) {
    if (std::abs(x[b] - std::round(x[b])) > kIntTol) return false;
  }
  return true;
}

/// Tightens binary bounds via row min-activity arguments; every derived
/// fixing holds for all integral completions, so pruning on a contradiction
/// is sound. Continuous bounds are deliberately left untouched.
bool propagate_binaries(const qp::QpModel& m, const std::vector<char>& is_bin,
                        Eigen::VectorXd& lo, Eigen::VectorXd& hi) {
  for (int pass = 0; pass < 8; ++pass) {
    bool changed = false;
    for (const auto& row : m.rows) {
      for (int dir : {+1, -1}) {
        if (dir < 0 && !row.eq) continue;
        const double rhs = dir * row.rhs;
        double minact = 0.0;
        int n_inf = 0;
        for (const auto& [v, cf0] : row.terms) {
          const double cf = dir * cf0;
          const double contrib = cf > 0 ? cf * lo[v] : cf * hi[v];
          if (std::isfinite(contrib)) minact += contrib;
          else ++n_inf;
        }
        if (n_inf == 0 && minact > rhs + 1e-7 * (1.0 + std::abs(rhs) + std::abs(minact)))
          return false;
        if (n_inf > 1) continue;
        for (const auto& [v, cf0] : row.terms) {
          if (!is_bin[v] || lo[v] == hi[v]) continue;
          const double cf = dir * cf0;
          const double own = cf > 0 ? cf * lo[v] : cf * hi[v];
          double rest;
          if (n_inf == 0) rest = minact - own;
          else if (!std::isfinite(own)) rest = minact;
          else continue;  // the infinity sits on another variable
          const double cap = (rhs - rest) / cf;
          if (cf > 0) {
            if (cap < 1.0 - 1e-6 && hi[v] > 0.5) { hi[v] = 0.0; changed = true; }
          } else {
            if (cap > 1e-6 && lo[v] < 0.5) { lo[v] = 1.0; changed = true; }
          }
          if (lo[v] > hi[v]) return false;
        }
      }
    }
    if (!changed) break;
  }
  return true;
}

struct Node {
  long id = 0;
  int depth = 0;
  double bound = -kInf;
  std::vector<std::pair<int, int>> fixings;  // (variable, 0/1)
  std::shared_ptr<qp::WarmStart> warm;
};

struct BestBoundOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound > b.bound;
    return a.id > b.id;  // older node first on ties -> deterministic
  }
};

struct PartResult {
  MiqpStatus status = MiqpStatus::NoIncumbent;
  Eigen::VectorXd x;
  double objective = kInf;
  double bound = -kInf;
  qp::FarkasCertificate certificate;
};

class BranchAndBound {
 public:
  BranchAndBound(const qp::QpModel& model, std::vector<int> bins, const MiqpParams& params,
                 std::optional<double> target, Clock& clock, long& nodes_left, long& nodes_used)
      : base_(model),
        work_(model),
        bins_(std::move(bins)),
        params_(params),
        target_(target),
        clock_(clock),
        nodes_left_(nodes_left),
        nodes_used_(nodes_used),
        is_bin_(model.n, 0) {
    for (int b : bins_) is_bin_[b] = 1;
  }

  PartResult run(const Eigen::VectorXd* start) {
    std::shared_ptr<qp::WarmStart> root_warm;
    if (start && point_feasible(base_, bins_, *start, 1e-6)) {
      inc_x_ = *start;
      inc_obj_ = eval_objective(base_, *start);
      have_inc_ = true;
      // seed the root relaxation with the constraints tight at the incumbent
      root_warm = std::make_shared<qp::WarmStart>();
      root_warm->x = *start;
      for (int i = 0; i < base_.n; ++i) {
        if (base_.lo[i] == base_.hi[i]) continue;  // eliminated in presolve
        if (std::isfinite(base_.lo[i]) &&
            std::abs((*start)[i] - base_.lo[i]) <= 1e-9 * (1.0 + std::abs(base_.lo[i]))) {
          root_warm->active.push_back({qp::ActiveEntry::Type::Lower, i});
        } else if (std::isfinite(base_.hi[i]) &&
                   std::abs((*start)[i] - base_.hi[i]) <= 1e-9 * (1.0 + std::abs(base_.hi[i]))) {
          root_warm->active.push_back({qp::ActiveEntry::Type::Upper, i});
        }
      }
      for (int r = 0; r < static_cast<int>(base_.rows.size()); ++r) {
        const auto& row = base_.rows[r];
        if (row.eq) continue;  // always active in the shortcut path
        double s = -row.rhs, scale = 1.0 + std::abs(row.rhs);
        for (const auto& [v, a] : row.terms) {
          s += a * (*start)[v];
          scale = std::max(scale, std::abs(a));
        }
        if (std::abs(s) <= 1e-9 * scale)
          root_warm->active.push_back({qp::ActiveEntry::Type::Row, r});
      }
    }
    push(Node{next_id_++, 0, -kInf, {}, std::move(root_warm)});

    bool budget_hit = false;
    while (!empty()) {
      if (nodes_left_ <= 0 || clock_.expired()) { budget_hit = true; break; }
      Node node = pop();
      if (node.bound >= cut()) {
        if (params_.selection == NodeSelection::BestBound) { clear(); break; }
        continue;
      }
      if (!process(node)) { budget_hit = true; break; }  // early stop on target
      if (target_hit_) break;
    }

    PartResult out;
    out.bound = open_bound();
    clear();
    if (root_infeasible_) {
      out.status = MiqpStatus::Infeasible;
      out.certificate = root_certificate_;
      return out;
    }
    if (!have_inc_) {
      out.status = budget_hit ? MiqpStatus::NoIncumbent : MiqpStatus::Infeasible;
      return out;
    }
    out.x = inc_x_;
    out.objective = inc_obj_;
    if (!budget_hit && !target_hit_) out.bound = inc_obj_;
    const double gap = inc_obj_ - out.bound;
    out.status = gap <= params_.rel_gap * std::max(1.0, std::abs(inc_obj_)) + 1e-9
                     ? MiqpStatus::Optimal
                     : MiqpStatus::Feasible;
    return out;
  }

 private:
  double cut() const {
    if (!have_inc_) return kInf;
    return inc_obj_ - std::max(params_.rel_gap * std::max(1.0, std::abs(inc_obj_)), 1e-9);
  }

  void push(Node n) {
    if (params_.selection == NodeSelection::BestBound) heap_.push(std::move(n));
    else stack_.push_back(std::move(n));
  }
  bool empty() const { return heap_.empty() && stack_.empty(); }
  Node pop() {
    if (params_.selection == NodeSelection::BestBound) {
      Node n = heap_.top();
      heap_.pop();
      return n;
    }
    Node n = std::move(stack_.back());
    stack_.pop_back();
    return n;
  }
  void clear() {
    while (!heap_.empty()) heap_.pop();
    stack_.clear();
  }
  double open_bound() const {
    double b = kInf;
    if (params_.selection == NodeSelection::BestBound) {
      if (!heap_.empty()) b = heap_.top().bound;
    } else {
      for (const Node& n : stack_) b = std::min(b, n.bound);
    }
    if (b == kInf) b = have_inc_ ? inc_obj_ : -kInf;
    return b;
  }

  void log(const Node& node, double bound, const char* status) {
    if (!params_.log) return;
    nlohmann::json j;
    j["node"] = node.id;
    j["depth"] = node.depth;
    if (std::isfinite(bound)) j["bound"] = bound;
    j["status"] = status;
    *params_.log << j.dump() << "\n";
  }

  void set_node_bounds(const std::vector<std::pair<int, int>>& fixings) {
    work_.lo = base_.lo;
    work_.hi = base_.hi;
    for (auto [v, val] : fixings) {
      work_.lo[v] = val;
      work_.hi[v] = val;
    }
  }

  // charged against the shared node budget
  qp::QpSolution relax(const qp::WarmStart* warm) {
    --nodes_left_;
    ++nodes_used_;
    return qp::solve_qp(work_, warm);
  }

  int pick_branch_var(const Eigen::VectorXd& x, const std::vector<char>& fixed) const {
    int best = -1;
    double best_score = kIntTol;
    for (int v : bins_) {
      if (fixed[v]) continue;
      const double score = 0.5 - std::abs(x[v] - std::floor(x[v]) - 0.5);
      if (score > best_score + 1e-12) {
        best_score = score;
        best = v;
      }
    }
    return best;  // -1 means integral
  }

  /// Re-solves with every binary pinned at its rounded value so the
  /// incumbent is an exact vertex of the integral slice.
  void try_incumbent(const Node& node, const qp::QpSolution& relaxed) {
    auto fixings = node.fixings;
    std::vector<char> fixed(base_.n, 0);
    for (auto [v, val] : fixings) fixed[v] = 1;
    for (int v : bins_) {
      if (!fixed[v]) fixings.emplace_back(v, static_cast<int>(std::lround(relaxed.x[v])));
    }
    set_node_bounds(fixings);
    qp::WarmStart w{relaxed.x, relaxed.active};
    qp::QpSolution sol = relax(&w);
    if (sol.status != qp::QpStatus::Optimal) return;
    if (!have_inc_ || sol.objective < inc_obj_) {
      inc_x_ = sol.x;
      inc_obj_ = sol.objective;
      have_inc_ = true;
      if (target_ && inc_obj_ < *target_) target_hit_ = true;
    }
  }

  void dive(const Node& node, const qp::QpSolution& relaxed) {
    auto fixings = node.fixings;
    std::vector<char> fixed(base_.n, 0);
    for (auto [v, val] : fixings) fixed[v] = 1;
    qp::QpSolution cur = relaxed;
    for (std::size_t round = 0; round <= bins_.size(); ++round) {
      // pin everything already integral, then the least fractional survivor
      int loosest = -1;
      double loosest_score = kInf;
      for (int v : bins_) {
        if (fixed[v]) continue;
        const double frac = std::abs(cur.x[v] - std::round(cur.x[v]));
        if (frac <= kIntTol) {
          fixings.emplace_back(v, static_cast<int>(std::lround(cur.x[v])));
          fixed[v] = 1;
        } else if (frac < loosest_score) {
          loosest_score = frac;
          loosest = v;
        }
      }
      if (loosest < 0) {
        try_incumbent(Node{node.id, node.depth, node.bound, fixings, nullptr}, cur);
        return;
      }
      fixings.emplace_back(loosest, cur.x[loosest] >= 0.5 ? 1 : 0);
      fixed[loosest] = 1;
      set_node_bounds(fixings);
      if (!propagate_binaries(work_, is_bin_, work_.lo, work_.hi)) return;
      if (nodes_left_ <= 0 || clock_.expired()) return;
      qp::WarmStart w{cur.x, cur.active};
      qp::QpSolution sol = relax(&w);
      log(node, sol.status == qp::QpStatus::Optimal ? sol.objective : node.bound, "dive");
      if (sol.status != qp::QpStatus::Optimal) return;
      if (sol.objective >= cut()) return;
      cur = std::move(sol);
    }
  }

  // returns false when the shared budget ran out mid-node
  bool process(const Node& node) {
    set_node_bounds(node.fixings);
    if (node.depth > 0 &&
        !propagate_binaries(work_, is_bin_, work_.lo, work_.hi)) {
      log(node, node.bound, "pruned-propagation");
      return true;
    }
    qp::QpSolution sol = relax(node.warm.get());

    if (sol.status == qp::QpStatus::Infeasible) {
      if (node.depth == 0) {
        root_infeasible_ = true;
        root_certificate_ = sol.certificate;
      }
      log(node, node.bound, "pruned-infeasible");
      return true;
    }

    std::vector<char> fixed(base_.n, 0);
    for (auto [v, val] : node.fixings) fixed[v] = 1;

    if (sol.status == qp::QpStatus::IterationLimit) {
      // no usable relaxation value: branch blindly on the first open binary
      log(node, node.bound, "iteration-limit");
      for (int v : bins_) {
        if (!fixed[v]) {
          branch(node, v, node.bound, nullptr);
          return true;
        }
      }
      return true;
    }

    const double bound = std::max(node.bound, sol.objective);
    if (bound >= cut()) {
      log(node, bound, "pruned-bound");
      return true;
    }

    const int var = pick_branch_var(sol.x, fixed);
    if (var < 0) {
      log(node, bound, "integral");
      try_incumbent(node, sol);
      return true;
    }

    const bool want_dive = params_.diving && bins_.size() > 8 &&
                           (!have_inc_ || nodes_used_ % std::max(1, params_.dive_period) == 0);
    if (want_dive) dive(node, sol);
    if (target_hit_) return true;
    if (bound >= cut()) {  // the dive may have tightened the incumbent
      log(node, bound, "pruned-bound");
      return true;
    }

    log(node, bound, "branched");
    auto warm = std::make_shared<qp::WarmStart>(qp::WarmStart{sol.x, sol.active});
    branch(node, var, bound, warm);
    return true;
  }

  void branch(const Node& node, int var, double bound,
              std::shared_ptr<qp::WarmStart> warm) {
    Node zero{next_id_++, node.depth + 1, bound, node.fixings, warm};
    zero.fixings.emplace_back(var, 0);
    Node one{next_id_++, node.depth + 1, bound, node.fixings, std::move(warm)};
    one.fixings.emplace_back(var, 1);
    if (params_.selection == NodeSelection::BestBound) {
      push(std::move(zero));  // lower id -> explored first on equal bounds
      push(std::move(one));
    } else {
      push(std::move(one));  // stack: zero child on top
      push(std::move(zero));
    }
  }

  const qp::QpModel& base_;
  qp::QpModel work_;
  std::vector<int> bins_;
  const MiqpParams& params_;
  std::optional<double> target_;
  Clock& clock_;
  long& nodes_left_;
  long& nodes_used_;
  std::vector<char> is_bin_;

  std::priority_queue<Node, std::vector<Node>, BestBoundOrder> heap_;
  std::vector<Node> stack_;
  long next_id_ = 0;

  Eigen::VectorXd inc_x_;
  double inc_obj_ = kInf;
  bool have_inc_ = false;
  bool target_hit_ = false;
  bool root_infeasible_ = false;
  qp::FarkasCertificate root_certificate_;
};

qp::FarkasCertificate map_certificate(const qp::FarkasCertificate& cert,
                                      const qp::SubModel& part) {
  qp::FarkasCertificate out;
  for (const auto& [entry, w] : cert.weights) {
    qp::ActiveEntry mapped = entry;
    if (entry.type == qp::ActiveEntry::Type::Row) mapped.index = part.rows[entry.index];
    else mapped.index = part.vars[entry.index];
    out.weights.emplace_back(mapped, w);
  }
  return out;
}

}  // namespace

MiqpResult solve_miqp(const qp::QpModel& model, const std::vector<int>& binaries,
                      const MiqpParams& params, const std::vector<double>* start) {
  for (int b : binaries) {
    if (b < 0 || b >= model.n) throw std::out_of_range("binary index out of range");
    if (model.lo[b] < -1e-9 || model.hi[b] > 1.0 + 1e-9)
      throw std::invalid_argument("binary variable bounds must lie within [0,1]");
  }
  Clock clock{std::chrono::steady_clock::now(), params.time_limit};

  Eigen::VectorXd x0;
  if (start) {
    if (static_cast<int>(start->size()) != model.n)
      throw std::invalid_argument("start point has wrong dimension");
    x0 = Eigen::Map<const Eigen::VectorXd>(start->data(), model.n);
  }

  std::vector<char> is_bin(model.n, 0);
  for (int b : binaries) is_bin[b] = 1;

  std::vector<qp::SubModel> parts = qp::decompose(model);
  // continuous parts first so a lone binary part can absorb the improve target
  std::vector<int> order;
  int n_bin_parts = 0;
  for (int p = 0; p < static_cast<int>(parts.size()); ++p) {
    bool has_bin = std::any_of(parts[p].vars.begin(), parts[p].vars.end(),
                               [&](int v) { return is_bin[v]; });
    if (!has_bin) order.push_back(p);
    n_bin_parts += has_bin;
  }
  for (int p = 0; p < static_cast<int>(parts.size()); ++p) {
    if (std::find(order.begin(), order.end(), p) == order.end()) order.push_back(p);
  }

  MiqpResult res;
  res.incumbent.x.assign(model.n, 0.0);
  Eigen::VectorXd full_x = Eigen::VectorXd::Zero(model.n);
  double total_obj = 0.0, total_bound = 0.0;
  long nodes_left = params.node_limit;
  bool all_optimal = true;

  for (int p : order) {
    const qp::SubModel& part = parts[p];
    std::vector<int> part_bins;
    for (int v = 0; v < static_cast<int>(part.vars.size()); ++v) {
      if (is_bin[part.vars[v]]) part_bins.push_back(v);
    }
    Eigen::VectorXd part_start;
    if (start) {
      part_start.resize(part.vars.size());
      for (int v = 0; v < static_cast<int>(part.vars.size()); ++v)
        part_start[v] = x0[part.vars[v]];
    }

    if (part_bins.empty()) {
      qp::QpSolution sol = qp::solve_qp(part.model);
      if (sol.status == qp::QpStatus::Infeasible) {
        res.status = MiqpStatus::Infeasible;
        res.certificate = map_certificate(sol.certificate, part);
        res.nodes = params.node_limit - nodes_left;
        return res;
      }
      if (sol.status != qp::QpStatus::Optimal) {
        if (start && point_feasible(part.model, part_bins, part_start, 1e-6)) {
          sol.x = part_start;
          sol.objective = eval_objective(part.model, part_start);
          all_optimal = false;
        } else {
          res.status = MiqpStatus::NoIncumbent;
          res.nodes = params.node_limit - nodes_left;
          return res;
        }
      }
      for (int v = 0; v < static_cast<int>(part.vars.size()); ++v)
        full_x[part.vars[v]] = sol.x[v];
      total_obj += sol.objective;
      total_bound += sol.objective;
      continue;
    }

    std::optional<double> target;
    if (params.improve_target && n_bin_parts == 1)
      target = *params.improve_target - total_obj;

    BranchAndBound bnb(part.model, part_bins, params, target, clock, nodes_left, res.nodes);
    PartResult pr = bnb.run(start ? &part_start : nullptr);

    switch (pr.status) {
      case MiqpStatus::Infeasible:
        res.status = MiqpStatus::Infeasible;
        res.certificate = map_certificate(pr.certificate, part);
        return res;
      case MiqpStatus::NoIncumbent:
        res.status = MiqpStatus::NoIncumbent;
        return res;
      case MiqpStatus::Feasible:
        all_optimal = false;
        [[fallthrough]];
      case MiqpStatus::Optimal:
        for (int v = 0; v < static_cast<int>(part.vars.size()); ++v)
          full_x[part.vars[v]] = pr.x[v];
        total_obj += pr.objective;
        total_bound += pr.bound;
        break;
    }
  }

  res.status = all_optimal ? MiqpStatus::Optimal : MiqpStatus::Feasible;
  res.incumbent.x.assign(full_x.data(), full_x.data() + model.n);
  res.incumbent.objective = total_obj;
  res.best_bound = total_bound;
  return res;
}

std::vector<double> find_feasible(const ConstraintSystem& sys, uint64_t seed) {
  qp::QpModel model = qp::from_system(sys);
  Rng rng(seed);
  model.ridge_center.resize(model.n);
  for (int i = 0; i < model.n; ++i) {
    double lo = model.lo[i], hi = model.hi[i];
    if (!std::isfinite(lo)) lo = std::isfinite(hi) ? hi - 2.0 : -1.0;
    if (!std::isfinite(hi)) hi = lo + 2.0;
    model.ridge_center[i] = rng.uniform(lo, hi);
  }
  model.ridge = 1e-6;  // pull the projection toward the random interior point

  std::vector<int> bins;
  for (int v = 0; v < sys.var_count(); ++v) {
    if (sys.is_binary(v)) bins.push_back(v);
  }

  MiqpParams params;
  params.selection = NodeSelection::DepthFirst;  // objective is constant: dive for any leaf
  params.node_limit = 200000;
  MiqpResult r = solve_miqp(model, bins, params);
  if (r.status == MiqpStatus::Infeasible)
    throw qp::InfeasibleSystemError("constraint system is infeasible", r.certificate);
  if (r.status == MiqpStatus::NoIncumbent)
    throw BudgetExhaustedError("feasibility search exhausted its node budget");
  return r.incumbent.x;
}

}  // namespace combifd::miqp
