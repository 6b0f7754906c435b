#include "combifd/phasemap.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>
#include <stdexcept>

#include <json.hpp>

#include "combifd/rng.hpp"

namespace combifd::phasemap {
namespace {

std::vector<std::vector<int>> adjacency(int n, const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adj(n);
  for (auto [u, v] : edges) {
    if (u < 0 || u >= n || v < 0 || v >= n || u == v)
      throw std::invalid_argument("edge endpoints out of range");
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  return adj;
}

bool whole_graph_connected(int n, const std::vector<std::pair<int, int>>& edges) {
  if (n <= 1) return true;
  auto adj = adjacency(n, edges);
  std::vector<char> seen(n, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
    }
  }
  return count == n;
}

/// Scatter weights of a linear stretch by factor s >= 1: source row i lands
/// at position i/s, split between the two enclosing rows.
std::vector<std::vector<std::pair<int, double>>> stretch_map(int m, double s) {
  std::vector<std::vector<std::pair<int, double>>> contrib(m);
  for (int i = 0; i < m; ++i) {
    const double pos = i / s;
    const int lo = static_cast<int>(std::floor(pos));
    const double frac = pos - lo;
    if (lo >= 0 && lo < m && frac < 1.0) contrib[lo].emplace_back(i, 1.0 - frac);
    if (frac > 0.0 && lo + 1 < m) contrib[lo + 1].emplace_back(i, frac);
  }
  return contrib;
}

}  // namespace

void PhaseMapInstance::check() const {
  const int n = compositions.rows();
  if (compositions.cols() != 3) throw std::invalid_argument("compositions must be n x 3");
  if (signals.cols() != n) throw std::invalid_argument("signals/compositions point counts differ");
  if (static_cast<int>(grid.size()) != signals.rows())
    throw std::invalid_argument("grid length must equal the signal row count");
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      if (compositions(i, c) < -1e-9) throw std::invalid_argument("negative composition coordinate");
      s += compositions(i, c);
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("composition row does not sum to 1");
  }
  for (double v : signals.data()) {
    if (v < 0.0) throw std::invalid_argument("signals must be nonnegative");
  }
  if (!whole_graph_connected(n, edges)) throw std::invalid_argument("neighbor graph is disconnected");
}

GibbsHandles add_gibbs(ConstraintSystem& sys, int m_phases, int group_size) {
  const Dims& d = sys.dims();
  if (group_size < 1 || d.k % group_size != 0)
    throw std::invalid_argument("add_gibbs: group size must divide the basis count");
  const int groups = d.k / group_size;
  if (m_phases <= 0) throw std::invalid_argument("add_gibbs: phase cap must be positive");
  if (m_phases > groups) throw std::invalid_argument("add_gibbs: phase cap exceeds group count");

  GibbsHandles handles;
  handles.first_bin = sys.add_binary_vars(groups * d.n);
  handles.groups = groups;
  handles.group_size = group_size;
  for (int j = 0; j < d.n; ++j) {
    LinearRow cap{{}, Sense::LessEq, static_cast<double>(m_phases)};
    for (int z = 0; z < groups; ++z) {
      const VariableRef b = VariableRef::bin(handles.bin(z, j));
      for (int l = 0; l < group_size; ++l) {
        sys.add_row({{{VariableRef::h(z * group_size + l, j), 1.0}, {b, -1.0}},
                     Sense::LessEq, 0.0});
      }
      cap.terms.emplace_back(b, 1.0);
    }
    sys.add_row(std::move(cap));
  }
  return handles;
}

ConstraintSystem build_gibbs(const Dims& dims, int m_phases, int group_size) {
  ConstraintSystem sys = build_nonnegativity(dims);
  add_gibbs(sys, m_phases, group_size);
  return sys;
}

std::vector<double> stretch_pattern(const std::vector<double>& src, double stretch) {
  if (stretch < 1.0) throw std::invalid_argument("stretch factor must be >= 1");
  const int m = static_cast<int>(src.size());
  std::vector<double> out(m, 0.0);
  auto contrib = stretch_map(m, stretch);
  for (int r = 0; r < m; ++r) {
    for (auto [i, w] : contrib[r]) out[r] += w * src[i];
  }
  return out;
}

void add_shifting(ConstraintSystem& sys, const std::vector<double>& grid,
                  const ShiftConfig& cfg) {
  const Dims& d = sys.dims();
  if (cfg.q_copies < 1) throw std::invalid_argument("add_shifting: need at least one copy");
  if (cfg.gamma < 0.0) throw std::invalid_argument("add_shifting: negative shift granularity");
  if (d.k % cfg.q_copies != 0)
    throw std::invalid_argument("add_shifting: copies must divide the basis count");
  if (static_cast<int>(grid.size()) != d.m)
    throw std::invalid_argument("add_shifting: grid length must equal the row count");
  const int free_k = d.k / cfg.q_copies;
  for (int z = 0; z < free_k; ++z) {
    const int base = z * cfg.q_copies;
    for (int l = 1; l < cfg.q_copies; ++l) {
      auto contrib = stretch_map(d.m, 1.0 + l * cfg.gamma);
      for (int r = 0; r < d.m; ++r) {
        LinearRow row{{{VariableRef::w(r, base + l), 1.0}}, Sense::Eq, 0.0};
        for (auto [i, w] : contrib[r]) row.terms.emplace_back(VariableRef::w(i, base), -w);
        sys.add_row(std::move(row));
      }
    }
  }
}

ConstraintSystem build_shifting(const Dims& dims, const std::vector<double>& grid,
                                const ShiftConfig& cfg) {
  ConstraintSystem sys = build_nonnegativity(dims);
  add_shifting(sys, grid, cfg);
  return sys;
}

FlowHandles add_connectivity_flow(ConstraintSystem& sys,
                                  const std::vector<std::pair<int, int>>& edges,
                                  const GibbsHandles& y) {
  const Dims& d = sys.dims();
  const int n = d.n;
  if (!whole_graph_connected(n, edges))
    throw std::invalid_argument("add_connectivity_flow: neighbor graph is disconnected");
  const int ne = static_cast<int>(edges.size());
  const double cap = static_cast<double>(n);

  FlowHandles handles;
  handles.groups = y.groups;
  handles.n = n;
  handles.ne = ne;
  handles.first_root_bin = -1;
  handles.first_aux = -1;

  for (int z = 0; z < y.groups; ++z) {
    const int r0 = sys.add_binary_vars(n);       // root indicators
    const int f0 = sys.add_aux_vars(2 * ne + n);  // arc flows then source arcs
    if (handles.first_root_bin < 0) handles.first_root_bin = r0;
    if (handles.first_aux < 0) handles.first_aux = f0;
    for (int a = 0; a < 2 * ne + n; ++a) sys.set_lower(VariableRef::aux(f0 + a), 0.0);

    LinearRow one_root{{}, Sense::Eq, 1.0};
    for (int i = 0; i < n; ++i) one_root.terms.emplace_back(VariableRef::bin(r0 + i), 1.0);
    sys.add_row(std::move(one_root));

    // conservation at every point: inflow - outflow + source = presence
    std::vector<LinearRow> conserve(n);
    for (int i = 0; i < n; ++i) {
      conserve[i].sense = Sense::Eq;
      conserve[i].rhs = 0.0;
      conserve[i].terms.emplace_back(VariableRef::aux(f0 + 2 * ne + i), 1.0);
      conserve[i].terms.emplace_back(VariableRef::bin(y.bin(z, i)), -1.0);
    }
    for (int e = 0; e < ne; ++e) {
      const auto [u, v] = edges[e];
      const int fuv = f0 + 2 * e, fvu = f0 + 2 * e + 1;
      conserve[v].terms.emplace_back(VariableRef::aux(fuv), 1.0);
      conserve[u].terms.emplace_back(VariableRef::aux(fuv), -1.0);
      conserve[u].terms.emplace_back(VariableRef::aux(fvu), 1.0);
      conserve[v].terms.emplace_back(VariableRef::aux(fvu), -1.0);
      // arcs may carry flow only between present points
      for (int arc : {fuv, fvu}) {
        for (int endpoint : {u, v}) {
          sys.add_row({{{VariableRef::aux(arc), 1.0},
                        {VariableRef::bin(y.bin(z, endpoint)), -cap}},
                       Sense::LessEq, 0.0});
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      sys.add_row({{{VariableRef::aux(f0 + 2 * ne + i), 1.0},
                    {VariableRef::bin(r0 + i), -cap}},
                   Sense::LessEq, 0.0});
      sys.add_row(std::move(conserve[i]));
    }
  }
  return handles;
}

ConstraintSystem build_connectivity_flow(const Dims& dims,
                                         const std::vector<std::pair<int, int>>& edges) {
  ConstraintSystem sys = build_nonnegativity(dims);
  GibbsHandles y = add_gibbs(sys, dims.k, 1);  // presence only: the cap is vacuous
  add_connectivity_flow(sys, edges, y);
  return sys;
}

void add_connectivity_collinear(ConstraintSystem& sys, const DenseMatrix& compositions,
                                double tol) {
  const Dims& d = sys.dims();
  const int n = compositions.rows();
  if (n != d.n) throw std::invalid_argument("add_connectivity_collinear: point count mismatch");
  if (compositions.cols() != 3)
    throw std::invalid_argument("add_connectivity_collinear: compositions must be n x 3");

  // collinearity is affine-invariant: the first two simplex coordinates suffice
  auto px = [&](int i) { return compositions(i, 0); };
  auto py = [&](int i) { return compositions(i, 1); };

  for (int a = 0; a < n; ++a) {
    for (int c = a + 1; c < n; ++c) {
      const double acx = px(c) - px(a), acy = py(c) - py(a);
      const double len2 = acx * acx + acy * acy;
      if (len2 <= 0.0) continue;
      for (int b = 0; b < n; ++b) {
        if (b == a || b == c) continue;
        const double abx = px(b) - px(a), aby = py(b) - py(a);
        const double cross = acx * aby - acy * abx;
        if (std::abs(cross) >= tol) continue;
        const double t = (abx * acx + aby * acy) / len2;
        if (t <= 1e-9 || t >= 1.0 - 1e-9) continue;  // not strictly between
        for (int l = 0; l < d.k; ++l) {
          const double u1 = sys.upper(sys.flat_index(VariableRef::h(l, a)));
          const double u3 = sys.upper(sys.flat_index(VariableRef::h(l, c)));
          const double lo2 = sys.lower(sys.flat_index(VariableRef::h(l, b)));
          if (!std::isfinite(u1) || !std::isfinite(u3) || !std::isfinite(lo2))
            throw std::invalid_argument(
                "add_connectivity_collinear: needs finite H bounds for the big-M rows");
          const double big = std::max({u1 - lo2, u3 - lo2, 0.0});
          const int tbin = sys.add_binary_vars(1);
          // h_b >= h_a - big*(1-t)  and  h_b >= h_c - big*t
          sys.add_row({{{VariableRef::h(l, a), 1.0},
                        {VariableRef::h(l, b), -1.0},
                        {VariableRef::bin(tbin), big}},
                       Sense::LessEq, big});
          sys.add_row({{{VariableRef::h(l, c), 1.0},
                        {VariableRef::h(l, b), -1.0},
                        {VariableRef::bin(tbin), -big}},
                       Sense::LessEq, 0.0});
        }
      }
    }
  }
}

void add_column_normalization(ConstraintSystem& sys) {
  const Dims& d = sys.dims();
  for (int j = 0; j < d.n; ++j) {
    LinearRow row{{}, Sense::Eq, 1.0};
    for (int l = 0; l < d.k; ++l) {
      row.terms.emplace_back(VariableRef::h(l, j), 1.0);
      sys.set_lower(VariableRef::h(l, j), 0.0);
      sys.set_upper(VariableRef::h(l, j), 1.0);
    }
    sys.add_row(std::move(row));
  }
}

bool supports_connected(int n, const std::vector<std::pair<int, int>>& edges,
                        const std::vector<std::vector<int>>& supports, int groups) {
  auto adj = adjacency(n, edges);
  for (int g = 0; g < groups; ++g) {
    std::vector<char> in(n, 0);
    int count = 0, first = -1;
    for (int j = 0; j < n; ++j) {
      if (std::find(supports[j].begin(), supports[j].end(), g) != supports[j].end()) {
        in[j] = 1;
        ++count;
        if (first < 0) first = j;
      }
    }
    if (count <= 1) continue;
    std::vector<char> seen(n, 0);
    std::queue<int> q;
    q.push(first);
    seen[first] = 1;
    int reached = 1;
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[u]) {
        if (in[v] && !seen[v]) {
          seen[v] = 1;
          ++reached;
          q.push(v);
        }
      }
    }
    if (reached != count) return false;
  }
  return true;
}

PhaseMapInstance gen_synthetic(uint64_t seed, const GenParams& p) {
  if (p.n < 1 || p.m < 4 || p.k_true < 1) throw std::invalid_argument("gen_synthetic: bad sizes");
  if (p.m_phases < 1 || p.m_phases > p.k_true)
    throw std::invalid_argument("gen_synthetic: phase cap must be in [1, k_true]");
  if (p.peaks < 1 || p.peaks > 42) throw std::invalid_argument("gen_synthetic: peaks in [1,42]");
  if (p.shift_range < 0.0 || p.noise < 0.0 || p.q_copies < 1)
    throw std::invalid_argument("gen_synthetic: negative shift/noise or no copies");

  Rng rng(seed);
  PhaseMapInstance inst;

  // triangular composition lattice, row-major truncation stays connected
  int side = 1;
  while (side * (side + 1) / 2 < p.n) ++side;
  std::vector<std::pair<int, int>> coord;  // (row, col)
  inst.compositions = DenseMatrix(p.n, 3);
  {
    int idx = 0;
    for (int r = 0; r < side && idx < p.n; ++r) {
      for (int c = 0; c <= r && idx < p.n; ++c, ++idx) {
        coord.emplace_back(r, c);
        const double span = (side > 1) ? side - 1.0 : 1.0;
        const double x = c / span, y = (r - c) / span;
        inst.compositions(idx, 0) = 1.0 - x - y;
        inst.compositions(idx, 1) = x;
        inst.compositions(idx, 2) = y;
      }
    }
  }
  auto at = [&](int r, int c) -> int {  // lattice position -> point index or -1
    if (r < 0 || c < 0 || c > r || r >= side) return -1;
    const int idx = r * (r + 1) / 2 + c;
    return idx < p.n ? idx : -1;
  };
  for (int j = 0; j < p.n; ++j) {
    auto [r, c] = coord[j];
    for (auto [rr, cc] : {std::pair{r, c - 1}, {r - 1, c - 1}, {r - 1, c}}) {
      const int o = at(rr, cc);
      if (o >= 0) inst.edges.emplace_back(o, j);
    }
  }

  inst.grid.resize(p.m);
  for (int i = 0; i < p.m; ++i) inst.grid[i] = i;

  // Gaussian-peak free patterns
  std::vector<std::vector<double>> pattern(p.k_true, std::vector<double>(p.m, 0.0));
  for (int z = 0; z < p.k_true; ++z) {
    const int npeaks = rng.uniform_int(std::max(1, p.peaks / 2), p.peaks);
    for (int pk = 0; pk < npeaks; ++pk) {
      const double center = rng.uniform(0.08 * p.m, 0.92 * p.m);
      const double width = rng.uniform(std::max(1.2, p.m / 400.0), std::max(2.0, p.m / 120.0));
      const double height = rng.uniform(0.3, 1.0);
      for (int i = 0; i < p.m; ++i) {
        const double dq = (i - center) / width;
        pattern[z][i] += height * std::exp(-0.5 * dq * dq);
      }
    }
  }

  const double gamma =
      (p.shift_range > 0.0 && p.q_copies > 1) ? p.shift_range / (p.q_copies - 1) : 0.0;
  const int kq = p.k_true * p.q_copies;
  DenseMatrix w_true(p.m, kq);
  for (int z = 0; z < p.k_true; ++z) {
    for (int l = 0; l < p.q_copies; ++l) {
      const std::vector<double> col = stretch_pattern(pattern[z], 1.0 + l * gamma);
      for (int i = 0; i < p.m; ++i) w_true(i, z * p.q_copies + l) = col[i];
    }
  }

  // connected phase regions under the per-point cap
  auto adj = adjacency(p.n, inst.edges);
  std::vector<std::vector<int>> supports(p.n);
  const int target = std::max(2, (p.n * p.m_phases) / p.k_true);
  for (int z = 0; z < p.k_true; ++z) {
    // seed at a least-loaded point to spread the phases across the map
    int seedpt = 0;
    for (int j = 1; j < p.n; ++j) {
      if (supports[j].size() < supports[seedpt].size() ||
          (supports[j].size() == supports[seedpt].size() && rng.next_double() < 0.3))
        seedpt = j;
    }
    std::vector<char> in_region(p.n, 0);
    std::vector<int> frontier{seedpt};
    in_region[seedpt] = 1;
    supports[seedpt].push_back(z);
    int size = 1;
    while (size < target && !frontier.empty()) {
      const int pick = rng.uniform_int(0, static_cast<int>(frontier.size()) - 1);
      const int u = frontier[pick];
      int grown = -1;
      for (int v : adj[u]) {
        if (!in_region[v] && static_cast<int>(supports[v].size()) < p.m_phases) {
          grown = v;
          break;
        }
      }
      if (grown < 0) {
        frontier.erase(frontier.begin() + pick);
        continue;
      }
      in_region[grown] = 1;
      supports[grown].push_back(z);
      frontier.push_back(grown);
      ++size;
    }
  }
  // cover leftovers from an already-covered neighbor (keeps regions connected)
  for (bool progress = true; progress;) {
    progress = false;
    for (int j = 0; j < p.n; ++j) {
      if (!supports[j].empty()) continue;
      for (int v : adj[j]) {
        if (!supports[v].empty()) {
          supports[j].push_back(supports[v].front());
          progress = true;
          break;
        }
      }
    }
  }
  for (auto& s : supports) std::sort(s.begin(), s.end());

  // concentrations: per-(point, phase) weight at a random stretch level,
  // columns normalized to 1
  DenseMatrix h_true(kq, p.n);
  DenseMatrix conc(p.k_true, p.n);
  for (int j = 0; j < p.n; ++j) {
    double total = 0.0;
    std::vector<std::pair<int, double>> rows;
    for (int z : supports[j]) {
      const int level = (p.q_copies > 1) ? rng.uniform_int(0, p.q_copies - 1) : 0;
      const double wgt = rng.uniform(0.2, 1.0);
      rows.emplace_back(z * p.q_copies + level, wgt);
      conc(z, j) = wgt;
      total += wgt;
    }
    for (auto [r, wgt] : rows) h_true(r, j) = wgt / total;
    for (int z : supports[j]) conc(z, j) /= total;
  }

  inst.signals = matmul(w_true, h_true);
  if (p.noise > 0.0) {
    for (double& v : inst.signals.data()) v += p.noise * rng.next_double();
  }

  PhaseMapTruth truth;
  truth.k_true = p.k_true;
  truth.q_copies = p.q_copies;
  truth.gamma = gamma;
  truth.supports = std::move(supports);
  truth.concentrations = std::move(conc);
  truth.w = std::move(w_true);
  truth.h = std::move(h_true);
  inst.truth = std::move(truth);

  inst.check();
  return inst;
}

namespace {

nlohmann::json matrix_to_json(const DenseMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

DenseMatrix matrix_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows ? static_cast<int>(j.at(0).size()) : 0;
  DenseMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  }
  return m;
}

}  // namespace

void write_instance(const std::string& json_path, const std::string& signals_csv_path,
                    const PhaseMapInstance& inst) {
  inst.check();
  write_csv_file(signals_csv_path, inst.signals);
  nlohmann::json j;
  j["compositions"] = matrix_to_json(inst.compositions);
  nlohmann::json edges = nlohmann::json::array();
  for (auto [u, v] : inst.edges) edges.push_back({u, v});
  j["edges"] = std::move(edges);
  j["grid"] = inst.grid;
  // store the sidecar path relative to the instance file when possible
  std::filesystem::path csv(signals_csv_path), base(json_path);
  j["signals_csv_path"] =
      csv.is_absolute() ? csv.string() : std::filesystem::proximate(csv, base.parent_path()).string();
  if (inst.truth) {
    const PhaseMapTruth& t = *inst.truth;
    nlohmann::json tj;
    tj["k_true"] = t.k_true;
    tj["q_copies"] = t.q_copies;
    tj["gamma"] = t.gamma;
    tj["supports"] = t.supports;
    tj["concentrations"] = matrix_to_json(t.concentrations);
    tj["w"] = matrix_to_json(t.w);
    tj["h"] = matrix_to_json(t.h);
    j["truth"] = std::move(tj);
  }
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot write instance file: " + json_path);
  out << j.dump(1) << "\n";
}

PhaseMapInstance read_instance(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot read instance file: " + json_path);
  nlohmann::json j = nlohmann::json::parse(in);
  PhaseMapInstance inst;
  inst.compositions = matrix_from_json(j.at("compositions"));
  for (const auto& e : j.at("edges")) inst.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  inst.grid = j.at("grid").get<std::vector<double>>();
  std::filesystem::path csv = j.at("signals_csv_path").get<std::string>();
  if (csv.is_relative()) csv = std::filesystem::path(json_path).parent_path() / csv;
  inst.signals = read_csv_file(csv.string());
  if (j.contains("truth")) {
    const auto& tj = j.at("truth");
    PhaseMapTruth t;
    t.k_true = tj.at("k_true").get<int>();
    t.q_copies = tj.at("q_copies").get<int>();
    t.gamma = tj.at("gamma").get<double>();
    t.supports = tj.at("supports").get<std::vector<std::vector<int>>>();
    t.concentrations = matrix_from_json(tj.at("concentrations"));
    t.w = matrix_from_json(tj.at("w"));
    t.h = matrix_from_json(tj.at("h"));
    inst.truth = std::move(t);
  }
  inst.check();
  return inst;
}

}  // namespace combifd::phasemap
