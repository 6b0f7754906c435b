#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "combifd/amiqo.hpp"
#include "combifd/baselines.hpp"
#include "combifd/constraints.hpp"
#include "combifd/matrix.hpp"
#include "combifd/metrics.hpp"
#include "combifd/miqp.hpp"
#include "combifd/phasemap.hpp"
#include "combifd/rng.hpp"

namespace fs = std::filesystem;
using namespace combifd;

namespace {

struct SharedOpts {
  int k = 2;
  int p = 2;
  int iters = 25;
  uint64_t seed = 0;
  double rel_tol = 1e-5;
  long node_limit = 200000;
  double time_limit = std::numeric_limits<double>::infinity();
  bool improve_only = false;
  bool deterministic = false;
  int jobs = 1;
  std::string out = "out";
};

void add_shared(CLI::App* cmd, SharedOpts& o) {
  cmd->add_option("--k", o.k, "basis / cluster count");
  cmd->add_option("--p", o.p, "residual norm: 2 (Frobenius) or 1")->check(CLI::IsMember({1, 2}));
  cmd->add_option("--iters", o.iters, "max alternating iterations");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--rel-tol", o.rel_tol, "relative improvement stopping tolerance");
  cmd->add_option("--node-limit", o.node_limit, "branch-and-bound node budget per step");
  cmd->add_option("--time-limit", o.time_limit, "per-step time limit in seconds");
  cmd->add_flag("--improve-only", o.improve_only, "stop each step at the first improvement");
  cmd->add_flag("--deterministic", o.deterministic,
                "bit-reproducible runs (ignores the time limit)");
  cmd->add_option("--jobs", o.jobs, "parallel workers for multi-run sweeps");
  cmd->add_option("--out", o.out, "output directory");
}

amiqo::AmiqoOptions solver_options(const SharedOpts& o, std::ostream* trace) {
  amiqo::AmiqoOptions opts;
  opts.max_iters = o.iters;
  opts.rel_tol = o.rel_tol;
  opts.p = o.p;
  opts.seed = o.seed;
  opts.improve_only = o.improve_only;
  opts.trace = trace;
  opts.miqp.node_limit = o.node_limit;
  opts.miqp.deterministic = o.deterministic;
  if (!o.deterministic) opts.miqp.time_limit = o.time_limit;
  return opts;
}

double feasibility_residual(const ConstraintSystem& sys, const std::vector<double>& v) {
  double worst = 0.0;
  for (const Violation& viol : sys.validate(v, 0.0)) worst = std::max(worst, viol.amount);
  return worst;
}

void write_assignment(const fs::path& path, const std::vector<double>& v) {
  DenseMatrix col(static_cast<int>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) col(static_cast<int>(i), 0) = v[i];
  write_csv_file(path.string(), col);
}

std::vector<double> read_assignment(const std::string& path) {
  DenseMatrix col = read_csv_file(path);
  if (col.cols() != 1) throw std::runtime_error("assignment file must have one column");
  return col.data();
}

void write_report(const fs::path& dir, const nlohmann::json& j) {
  std::ofstream out(dir / "report.json");
  out << j.dump(1) << "\n";
}

/// Full solve pipeline shared by factorize/cluster/phasemap: runs the solver,
/// writes W.csv, H.csv, assignment.csv, system.json, trace.jsonl, report.json.
amiqo::AmiqoResult solve_and_emit(const DenseMatrix& a, const ConstraintSystem& sys,
                                  const SharedOpts& o, nlohmann::json& report) {
  fs::create_directories(o.out);
  std::ofstream trace(fs::path(o.out) / "trace.jsonl");
  const auto t0 = std::chrono::steady_clock::now();
  amiqo::AmiqoResult res = amiqo::run(a, sys, solver_options(o, &trace));
  report["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report["objective"] = res.objective;
  report["iterations"] = res.iterations;
  report["feasibility_residual"] = feasibility_residual(sys, res.assignment);
  write_csv_file((fs::path(o.out) / "W.csv").string(), res.factors.w);
  write_csv_file((fs::path(o.out) / "H.csv").string(), res.factors.h);
  write_assignment(fs::path(o.out) / "assignment.csv", res.assignment);
  write_system_file((fs::path(o.out) / "system.json").string(), sys);
  return res;
}

std::vector<int> read_labels(const std::string& path) {
  DenseMatrix m = read_csv_file(path);
  std::vector<int> labels;
  for (double v : m.data()) labels.push_back(static_cast<int>(std::lround(v)));
  return labels;
}

std::vector<std::pair<int, int>> read_pairs(const std::string& path) {
  DenseMatrix m = read_csv_file(path);
  if (m.cols() != 2) throw std::runtime_error("pair file must have two columns: " + path);
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < m.rows(); ++i)
    out.emplace_back(static_cast<int>(std::lround(m(i, 0))),
                     static_cast<int>(std::lround(m(i, 1))));
  return out;
}

/// Group-summed concentrations: collapses the stretched copies of each free
/// pattern into one row.
DenseMatrix aggregate_groups(const DenseMatrix& h, int q) {
  const int groups = h.rows() / q;
  DenseMatrix out(groups, h.cols());
  for (int z = 0; z < groups; ++z) {
    for (int l = 0; l < q; ++l) {
      for (int j = 0; j < h.cols(); ++j) out(z, j) += h(z * q + l, j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_factorize(const SharedOpts& o, const std::string& data_path,
                  const std::string& sys_path, bool baseline) {
  DenseMatrix a = read_csv_file(data_path);
  fs::create_directories(o.out);
  nlohmann::json report;
  if (baseline) {
    const auto t0 = std::chrono::steady_clock::now();
    baselines::NmfResult nmf = baselines::nmf_multiplicative(a, o.k, o.iters, o.seed);
    report["wall_time"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report["objective"] = nmf.objective_trace.empty() ? residual_norm(a, nmf.w, nmf.h, 2)
                                                      : nmf.objective_trace.back();
    report["iterations"] = o.iters;
    report["baseline"] = "nmf";
    write_csv_file((fs::path(o.out) / "W.csv").string(), nmf.w);
    write_csv_file((fs::path(o.out) / "H.csv").string(), nmf.h);
    write_report(o.out, report);
    return 0;
  }
  ConstraintSystem sys =
      sys_path.empty() ? build_nonnegativity({a.rows(), o.k, a.cols(), 0, 0})
                       : read_system_file(sys_path);
  if (sys.dims().m != a.rows() || sys.dims().n != a.cols())
    throw std::runtime_error("constraint system dims do not match the data");
  solve_and_emit(a, sys, o, report);
  write_report(o.out, report);
  return 0;
}

int cmd_cluster(const SharedOpts& o, const std::string& data_path, int s,
                const std::string& ml_path, const std::string& cl_path,
                const std::string& labels_path, const std::string& sweep, int runs) {
  DenseMatrix a = read_csv_file(data_path);
  const Dims dims{a.rows(), o.k, a.cols(), 0, 0};
  fs::create_directories(o.out);

  if (sweep.empty()) {
    std::vector<std::pair<int, int>> ml, cl;
    if (!ml_path.empty()) ml = read_pairs(ml_path);
    if (!cl_path.empty()) cl = read_pairs(cl_path);
    ConstraintSystem sys = build_semi_supervised(dims, s, ml, cl);
    nlohmann::json report;
    amiqo::AmiqoResult res = solve_and_emit(a, sys, o, report);
    metrics::ClusterAssignment ca = metrics::assign_clusters(res.factors.w, res.factors.h);
    if (!labels_path.empty())
      report["accuracy"] = metrics::accuracy_hard(ca.hard, read_labels(labels_path));
    DenseMatrix pred(1, a.cols());
    for (int j = 0; j < a.cols(); ++j) pred(0, j) = ca.hard[j];
    write_csv_file((fs::path(o.out) / "labels_pred.csv").string(), pred);
    write_report(o.out, report);
    return 0;
  }

  // supervision sweep: sample pair constraints from the true labels at each
  // level, average accuracy over `runs` seeds
  if (labels_path.empty()) throw std::runtime_error("--supervision-sweep needs --labels");
  const std::vector<int> labels = read_labels(labels_path);
  if (static_cast<int>(labels.size()) != a.cols())
    throw std::runtime_error("label count does not match the data");
  std::vector<int> levels;
  {
    std::stringstream ss(sweep);
    for (std::string tok; std::getline(ss, tok, ',');) levels.push_back(std::stoi(tok));
  }

  auto one_run = [&](int level, uint64_t seed) -> double {
    Rng rng(seed * 1000003ULL + static_cast<uint64_t>(level));
    std::set<std::pair<int, int>> used;
    std::vector<std::pair<int, int>> ml, cl;
    const int n = a.cols();
    while (static_cast<int>(used.size()) < level) {
      int i = rng.uniform_int(0, n - 1), j = rng.uniform_int(0, n - 1);
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      if (!used.insert({i, j}).second) continue;
      (labels[i] == labels[j] ? ml : cl).emplace_back(i, j);
    }
    ConstraintSystem sys = build_semi_supervised(dims, s, ml, cl);
    SharedOpts local = o;
    local.seed = seed;
    try {
      amiqo::AmiqoResult res = amiqo::run(a, sys, solver_options(local, nullptr));
      metrics::ClusterAssignment ca = metrics::assign_clusters(res.factors.w, res.factors.h);
      return metrics::accuracy_hard(ca.hard, labels);
    } catch (const qp::InfeasibleSystemError&) {
      return -1.0;  // contradictory sampled pairs: skip this run
    }
  };

  std::ofstream csv(fs::path(o.out) / "sweep.csv");
  csv << "constraints,seed,accuracy\n";
  nlohmann::json levels_json = nlohmann::json::array();
  for (int level : levels) {
    std::vector<double> acc(runs, -1.0);
    std::vector<std::future<double>> fut;
    const int jobs = std::max(1, o.jobs);
    for (int r0 = 0; r0 < runs; r0 += jobs) {
      fut.clear();
      for (int r = r0; r < std::min(runs, r0 + jobs); ++r)
        fut.push_back(std::async(std::launch::async, one_run, level, o.seed + r));
      for (int r = r0; r < std::min(runs, r0 + jobs); ++r) acc[r] = fut[r - r0].get();
    }
    double sum = 0.0, sum2 = 0.0;
    int valid = 0;
    for (int r = 0; r < runs; ++r) {
      if (acc[r] < 0.0) continue;
      csv << level << "," << (o.seed + r) << "," << format_double(acc[r]) << "\n";
      sum += acc[r];
      sum2 += acc[r] * acc[r];
      ++valid;
    }
    const double mean = valid ? sum / valid : 0.0;
    const double sd = valid > 1 ? std::sqrt(std::max(0.0, sum2 / valid - mean * mean)) : 0.0;
    levels_json.push_back({{"constraints", level}, {"mean", mean}, {"sd", sd}, {"runs", valid}});
  }
  nlohmann::json report;
  report["sweep"] = std::move(levels_json);
  write_report(o.out, report);
  return 0;
}

int cmd_phasemap(const SharedOpts& o, const std::string& instance_path, bool gen,
                 const phasemap::GenParams& gp, int m_phases, int q, double gamma,
                 const std::string& connectivity) {
  phasemap::PhaseMapInstance inst;
  fs::create_directories(o.out);
  if (gen) {
    inst = phasemap::gen_synthetic(o.seed, gp);
    phasemap::write_instance((fs::path(o.out) / "instance.json").string(),
                             (fs::path(o.out) / "signals.csv").string(), inst);
  } else {
    inst = phasemap::read_instance(instance_path);
  }
  if (inst.truth) {
    q = inst.truth->q_copies;
    gamma = inst.truth->gamma;
  }
  const int groups = inst.truth ? inst.truth->k_true : o.k;
  const int k_total = groups * q;
  const DenseMatrix& a = inst.signals;

  ConstraintSystem sys = build_nonnegativity({a.rows(), k_total, a.cols(), 0, 0});
  phasemap::add_column_normalization(sys);
  phasemap::add_shifting(sys, inst.grid, {q, gamma});
  phasemap::GibbsHandles gh = phasemap::add_gibbs(sys, m_phases, q);
  if (connectivity == "flow") {
    phasemap::add_connectivity_flow(sys, inst.edges, gh);
  } else if (connectivity == "collinear") {
    phasemap::add_connectivity_collinear(sys, inst.compositions);
  } else if (connectivity != "none") {
    throw std::runtime_error("unknown connectivity mode: " + connectivity);
  }

  nlohmann::json report;
  report["connectivity"] = connectivity;
  amiqo::AmiqoResult res = solve_and_emit(a, sys, o, report);

  // per-phase concentration maps: composition coordinates + group weight
  DenseMatrix conc = aggregate_groups(res.factors.h, q);
  for (int z = 0; z < groups; ++z) {
    DenseMatrix map(a.cols(), 4);
    for (int j = 0; j < a.cols(); ++j) {
      for (int c = 0; c < 3; ++c) map(j, c) = inst.compositions(j, c);
      map(j, 3) = conc(z, j);
    }
    write_csv_file((fs::path(o.out) / ("phase_" + std::to_string(z) + ".csv")).string(), map);
  }

  // supports from the presence binaries, connectivity audit
  std::vector<std::vector<int>> supports(a.cols());
  for (int j = 0; j < a.cols(); ++j) {
    for (int z = 0; z < groups; ++z) {
      if (res.assignment[sys.flat_index(VariableRef::bin(gh.bin(z, j)))] > 0.5)
        supports[j].push_back(z);
    }
  }
  report["supports_connected"] =
      phasemap::supports_connected(a.cols(), inst.edges, supports, groups);

  if (inst.truth) {
    std::vector<std::vector<int>> true_supports = inst.truth->supports;
    report["accuracy_soft"] =
        metrics::accuracy_soft(metrics::soft_supports(conc), true_supports, groups);
    baselines::NmfResult nmf =
        baselines::nmf_multiplicative(a, groups, std::max(200, o.iters), o.seed);
    report["accuracy_soft_nmf"] =
        metrics::accuracy_soft(metrics::soft_supports(nmf.h), true_supports, groups);
    report["objective_nmf"] = residual_norm(a, nmf.w, nmf.h, 2);
  }
  write_report(o.out, report);
  return 0;
}

int cmd_gen(const SharedOpts& o, const phasemap::GenParams& gp) {
  fs::create_directories(o.out);
  phasemap::PhaseMapInstance inst = phasemap::gen_synthetic(o.seed, gp);
  phasemap::write_instance((fs::path(o.out) / "instance.json").string(),
                           (fs::path(o.out) / "signals.csv").string(), inst);
  std::cout << "wrote " << (fs::path(o.out) / "instance.json").string() << "\n";
  return 0;
}

int cmd_verify(const std::string& sys_path, const std::string& assignment_path,
               const std::string& data_path) {
  ConstraintSystem sys = read_system_file(sys_path);
  std::vector<double> v = read_assignment(assignment_path);
  std::vector<Violation> report = sys.validate(v);
  if (!report.empty()) {
    std::cerr << report.size() << " violations; worst amount "
              << format_double(std::max_element(report.begin(), report.end(),
                                                [](const Violation& x, const Violation& y) {
                                                  return x.amount < y.amount;
                                                })
                                   ->amount)
              << "\n";
    return 2;
  }
  if (!data_path.empty()) {
    DenseMatrix a = read_csv_file(data_path);
    double obj = residual_norm(a, amiqo::extract_factor(sys, v, VarKind::W),
                               amiqo::extract_factor(sys, v, VarKind::H), 2);
    std::cout << "objective " << format_double(obj) << "\n";
  }
  std::cout << "ok\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"combifd: low-rank pattern decomposition under combinatorial constraints"};
  app.require_subcommand(1);

  SharedOpts fo, co, po, go;
  std::string data_path, sys_path, ml_path, cl_path, labels_path, sweep, instance_path;
  std::string assignment_path, verify_sys, verify_data;
  bool baseline = false, gen_flag = false;
  int s_cap = 1, runs = 1, m_phases = 3, q_copies = 1;
  double gamma_opt = 0.0;
  std::string connectivity = "collinear";
  phasemap::GenParams gp;

  CLI::App* fc = app.add_subcommand("factorize", "factorize a matrix under a constraint system");
  add_shared(fc, fo);
  fc->add_option("--data", data_path, "input matrix CSV")->required();
  fc->add_option("--constraints", sys_path, "constraint system JSON (default: nonnegativity)");
  fc->add_flag("--baseline", baseline, "run the multiplicative-update baseline instead");

  CLI::App* cc = app.add_subcommand("cluster", "constrained clustering with pairwise supervision");
  add_shared(cc, co);
  cc->add_option("--data", data_path, "input matrix CSV")->required();
  cc->add_option("--s", s_cap, "support cap per point");
  cc->add_option("--ml", ml_path, "must-link pairs CSV");
  cc->add_option("--cl", cl_path, "cannot-link pairs CSV");
  cc->add_option("--labels", labels_path, "ground-truth labels CSV (for accuracy / sweeps)");
  cc->add_option("--supervision-sweep", sweep, "comma-separated constraint counts");
  cc->add_option("--runs", runs, "seeds per sweep level");

  CLI::App* pc = app.add_subcommand("phasemap", "phase-map model: mixture cap + shifting + connectivity");
  add_shared(pc, po);
  pc->add_option("--instance", instance_path, "instance JSON");
  pc->add_flag("--gen", gen_flag, "generate a synthetic instance first");
  pc->add_option("--M", m_phases, "max phases per point");
  pc->add_option("--q", q_copies, "stretched copies per pattern");
  pc->add_option("--gamma", gamma_opt, "stretch granularity");
  pc->add_option("--connectivity", connectivity, "none | collinear | flow");
  pc->add_option("--gen-n", gp.n, "generator: points");
  pc->add_option("--gen-m", gp.m, "generator: signal length");
  pc->add_option("--gen-k", gp.k_true, "generator: true phases");
  pc->add_option("--gen-peaks", gp.peaks, "generator: peaks per phase");
  pc->add_option("--gen-shift", gp.shift_range, "generator: max relative stretch");
  pc->add_option("--gen-noise", gp.noise, "generator: noise amplitude");

  CLI::App* gc = app.add_subcommand("gen", "generate a synthetic instance");
  add_shared(gc, go);
  gc->add_option("--n", gp.n, "points");
  gc->add_option("--m", gp.m, "signal length");
  gc->add_option("--k-true", gp.k_true, "true phases");
  gc->add_option("--M", gp.m_phases, "max phases per point");
  gc->add_option("--peaks", gp.peaks, "peaks per phase");
  gc->add_option("--shift-range", gp.shift_range, "max relative stretch");
  gc->add_option("--q", gp.q_copies, "stretch levels");
  gc->add_option("--noise", gp.noise, "noise amplitude");

  CLI::App* vc = app.add_subcommand("verify", "re-validate an emitted solution");
  vc->add_option("--constraints", verify_sys, "system JSON")->required();
  vc->add_option("--assignment", assignment_path, "assignment CSV")->required();
  vc->add_option("--data", verify_data, "matrix CSV (reports the objective)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fc->parsed()) return cmd_factorize(fo, data_path, sys_path, baseline);
    if (cc->parsed()) return cmd_cluster(co, data_path, s_cap, ml_path, cl_path, labels_path,
                                         sweep, runs);
    if (pc->parsed()) {
      gp.m_phases = m_phases;
      gp.q_copies = q_copies;
      return cmd_phasemap(po, instance_path, gen_flag, gp, m_phases, q_copies, gamma_opt,
                          connectivity);
    }
    if (gc->parsed()) return cmd_gen(go, gp);
    if (vc->parsed()) return cmd_verify(verify_sys, assignment_path, verify_data);
  } catch (const qp::InfeasibleSystemError& e) {
    std::cerr << "infeasible: " << e.what() << " (certificate with "
              << e.certificate.weights.size() << " terms)\n";
    return 2;
  } catch (const miqp::BudgetExhaustedError& e) {
    std::cerr << "budget exhausted: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
