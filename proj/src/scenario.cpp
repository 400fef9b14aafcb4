#include "mqs/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "mqs/error.hpp"
#include "mqs/mimetic.hpp"

namespace mqs {

using nlohmann::json;

// ---------------------------------------------------------------------------
// GridSpec

std::int64_t GridSpec::edge_count(Axis a) const {
  switch (a) {
  case Axis::x: return std::int64_t(nx) * (ny + 1) * (nz + 1);
  case Axis::y: return std::int64_t(nx + 1) * ny * (nz + 1);
  case Axis::z: return std::int64_t(nx + 1) * (ny + 1) * nz;
  }
  return 0;
}

std::int64_t GridSpec::face_count(Axis a) const {
  switch (a) {
  case Axis::x: return std::int64_t(nx + 1) * ny * nz;
  case Axis::y: return std::int64_t(nx) * (ny + 1) * nz;
  case Axis::z: return std::int64_t(nx) * ny * (nz + 1);
  }
  return 0;
}

std::int64_t GridSpec::edge(Axis a, int i, int j, int k) const {
  switch (a) {
  case Axis::x: return i + std::int64_t(nx) * (j + std::int64_t(ny + 1) * k);
  case Axis::y:
    return edge_count(Axis::x) + i +
           std::int64_t(nx + 1) * (j + std::int64_t(ny) * k);
  case Axis::z:
    return edge_count(Axis::x) + edge_count(Axis::y) + i +
           std::int64_t(nx + 1) * (j + std::int64_t(ny + 1) * k);
  }
  return -1;
}

std::int64_t GridSpec::face(Axis a, int i, int j, int k) const {
  switch (a) {
  case Axis::x: return i + std::int64_t(nx + 1) * (j + std::int64_t(ny) * k);
  case Axis::y:
    return face_count(Axis::x) + i +
           std::int64_t(nx) * (j + std::int64_t(ny + 1) * k);
  case Axis::z:
    return face_count(Axis::x) + face_count(Axis::y) + i +
           std::int64_t(nx) * (j + std::int64_t(ny) * k);
  }
  return -1;
}

namespace {

std::array<int, 3> unflatten(std::int64_t idx, int sx, int sy) {
  const int i = int(idx % sx);
  idx /= sx;
  const int j = int(idx % sy);
  const int k = int(idx / sy);
  return {i, j, k};
}

} // namespace

std::array<int, 3> GridSpec::node_ijk(std::int64_t n) const {
  return unflatten(n, nx + 1, ny + 1);
}

std::array<int, 3> GridSpec::cell_ijk(std::int64_t c) const {
  return unflatten(c, nx, ny);
}

std::pair<Axis, std::array<int, 3>> GridSpec::edge_ijk(std::int64_t e) const {
  const auto ex = edge_count(Axis::x);
  const auto ey = edge_count(Axis::y);
  if (e < ex) return {Axis::x, unflatten(e, nx, ny + 1)};
  e -= ex;
  if (e < ey) return {Axis::y, unflatten(e, nx + 1, ny)};
  e -= ey;
  return {Axis::z, unflatten(e, nx + 1, ny + 1)};
}

std::pair<Axis, std::array<int, 3>> GridSpec::face_ijk(std::int64_t f) const {
  const auto fx = face_count(Axis::x);
  const auto fy = face_count(Axis::y);
  if (f < fx) return {Axis::x, unflatten(f, nx + 1, ny)};
  f -= fx;
  if (f < fy) return {Axis::y, unflatten(f, nx, ny + 1)};
  f -= fy;
  return {Axis::z, unflatten(f, nx, ny)};
}

bool GridSpec::node_on_boundary(std::int64_t n) const {
  const auto [i, j, k] = node_ijk(n);
  return i == 0 || j == 0 || k == 0 || i == nx || j == ny || k == nz;
}

bool GridSpec::edge_on_boundary(std::int64_t e) const {
  const auto [axis, ijk] = edge_ijk(e);
  const auto [i, j, k] = ijk;
  const bool bx = i == 0 || i == nx;
  const bool by = j == 0 || j == ny;
  const bool bz = k == 0 || k == nz;
  switch (axis) {
  case Axis::x: return by || bz;
  case Axis::y: return bx || bz;
  case Axis::z: return bx || by;
  }
  return false;
}

void GridSpec::validate() const {
  if (nx < 1 || ny < 1 || nz < 1)
    throw ScenarioError("grid: nx, ny, nz must be >= 1");
  if (!(h > 0.0) || !std::isfinite(h))
    throw ScenarioError("grid: h must be positive");
}

// ---------------------------------------------------------------------------
// RegionMap

RegionMap::RegionMap(const GridSpec& grid, std::vector<std::uint8_t> conducting)
    : conducting_(std::move(conducting)) {
  if (std::int64_t(conducting_.size()) != grid.cell_count())
    throw ScenarioError("regions: label count does not match cell count");
  analyze(grid);
}

RegionMap RegionMap::from_boxes(const GridSpec& grid,
                                const std::vector<CellBox>& conducting,
                                const std::vector<CellBox>& insulating) {
  std::vector<std::uint8_t> labels(grid.cell_count(), 0);
  const std::array<int, 3> n{grid.nx, grid.ny, grid.nz};
  auto paint = [&](const CellBox& box, std::uint8_t value) {
    for (int d = 0; d < 3; ++d) {
      if (box.lo[d] < 0 || box.hi[d] > n[d] || box.lo[d] >= box.hi[d])
        throw ScenarioError("regions: box outside grid or empty");
    }
    for (int k = box.lo[2]; k < box.hi[2]; ++k)
      for (int j = box.lo[1]; j < box.hi[1]; ++j)
        for (int i = box.lo[0]; i < box.hi[0]; ++i)
          labels[grid.cell(i, j, k)] = value;
  };
  for (const auto& b : conducting) paint(b, 1);
  for (const auto& b : insulating) paint(b, 0);
  return RegionMap(grid, std::move(labels));
}

std::int64_t RegionMap::conducting_count() const {
  return std::count(conducting_.begin(), conducting_.end(), std::uint8_t{1});
}

std::int64_t RegionMap::interface_node_count() const {
  return std::count_if(node_component_.begin(), node_component_.end(),
                       [](int c) { return c >= 0; });
}

namespace {

template <class Visit>
void for_face_neighbors(const GridSpec& g, std::int64_t c, Visit&& visit) {
  const auto [i, j, k] = g.cell_ijk(c);
  if (i > 0) visit(g.cell(i - 1, j, k));
  if (i + 1 < g.nx) visit(g.cell(i + 1, j, k));
  if (j > 0) visit(g.cell(i, j - 1, k));
  if (j + 1 < g.ny) visit(g.cell(i, j + 1, k));
  if (k > 0) visit(g.cell(i, j, k - 1));
  if (k + 1 < g.nz) visit(g.cell(i, j, k + 1));
}

bool cell_on_boundary(const GridSpec& g, std::int64_t c) {
  const auto [i, j, k] = g.cell_ijk(c);
  return i == 0 || j == 0 || k == 0 || i == g.nx - 1 || j == g.ny - 1 ||
         k == g.nz - 1;
}

} // namespace

void RegionMap::analyze(const GridSpec& grid) {
  const auto ncell = grid.cell_count();
  std::vector<int> raw(ncell, -1);
  int next = 0;
  std::vector<bool> touches_boundary;
  for (std::int64_t c = 0; c < ncell; ++c) {
    if (conducting_[c] || raw[c] >= 0) continue;
    std::deque<std::int64_t> queue{c};
    raw[c] = next;
    bool boundary = false;
    while (!queue.empty()) {
      const auto cur = queue.front();
      queue.pop_front();
      boundary = boundary || cell_on_boundary(grid, cur);
      for_face_neighbors(grid, cur, [&](std::int64_t nb) {
        if (!conducting_[nb] && raw[nb] < 0) {
          raw[nb] = next;
          queue.push_back(nb);
        }
      });
    }
    touches_boundary.push_back(boundary);
    ++next;
  }
  // Components reaching the outer boundary form the external region (0);
  // enclosed cavities are numbered 1..q in order of first cell.
  std::vector<int> remap(next, 0);
  cavities_ = 0;
  for (int id = 0; id < next; ++id)
    remap[id] = touches_boundary[id] ? 0 : ++cavities_;
  cell_component_.assign(ncell, -1);
  for (std::int64_t c = 0; c < ncell; ++c)
    if (raw[c] >= 0) cell_component_[c] = remap[raw[c]];

  node_component_.assign(grid.node_count(), -1);
  node_components_consistent_ = true;
  for (int k = 0; k <= grid.nz; ++k)
    for (int j = 0; j <= grid.ny; ++j)
      for (int i = 0; i <= grid.nx; ++i) {
        bool has_c = false;
        int comp = -1;
        for (int dk = -1; dk <= 0; ++dk)
          for (int dj = -1; dj <= 0; ++dj)
            for (int di = -1; di <= 0; ++di) {
              const int ci = i + di, cj = j + dj, ck = k + dk;
              if (ci < 0 || cj < 0 || ck < 0 || ci >= grid.nx ||
                  cj >= grid.ny || ck >= grid.nz)
                continue;
              const auto c = grid.cell(ci, cj, ck);
              if (conducting_[c]) {
                has_c = true;
              } else {
                const int cc = cell_component_[c];
                if (comp >= 0 && comp != cc) node_components_consistent_ = false;
                comp = comp < 0 ? cc : std::min(comp, cc);
              }
            }
        if (has_c && comp >= 0) node_component_[grid.node(i, j, k)] = comp;
      }
}

void RegionMap::validate(const GridSpec& grid) const {
  const auto ncell = grid.cell_count();
  if (std::int64_t(conducting_.size()) != ncell)
    throw ScenarioError("regions: label count does not match cell count");
  std::int64_t first = -1;
  for (std::int64_t c = 0; c < ncell; ++c) {
    if (!conducting_[c]) continue;
    if (first < 0) first = c;
    if (cell_on_boundary(grid, c))
      throw ScenarioError("regions: Ω_C touches ∂Ω");
  }
  if (first < 0) throw ScenarioError("regions: conducting set is empty");
  std::vector<bool> seen(ncell, false);
  std::deque<std::int64_t> queue{first};
  seen[first] = true;
  std::int64_t reached = 1;
  while (!queue.empty()) {
    const auto cur = queue.front();
    queue.pop_front();
    for_face_neighbors(grid, cur, [&](std::int64_t nb) {
      if (conducting_[nb] && !seen[nb]) {
        seen[nb] = true;
        ++reached;
        queue.push_back(nb);
      }
    });
  }
  if (reached != conducting_count())
    throw ScenarioError("regions: Ω_C is not face-connected");
  if (!node_components_consistent_)
    throw ScenarioError(
        "regions: insulating components meet at an edge or vertex; "
        "interface components are not separated");
}

// ---------------------------------------------------------------------------
// Reluctivity

double reluctivity(const ReluctivityModel& model, double zeta) {
  return std::visit(
      [zeta](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantReluctivity>) {
          return m.nu;
        } else {
          const double z2 = zeta * zeta;
          return m.nu_min + (m.nu_max - m.nu_min) * z2 / (z2 + m.tau * m.tau);
        }
      },
      model);
}

double field_derivative(const ReluctivityModel& model, double zeta) {
  return std::visit(
      [zeta](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantReluctivity>) {
          return m.nu;
        } else {
          // f' = nu_min + delta (3 s - 2 s^2), s = z^2 / (z^2 + tau^2)
          const double z2 = zeta * zeta;
          const double s = z2 / (z2 + m.tau * m.tau);
          return m.nu_min + (m.nu_max - m.nu_min) * s * (3.0 - 2.0 * s);
        }
      },
      model);
}

std::string describe(const ReluctivityModel& model) {
  std::ostringstream os;
  os.precision(17);
  std::visit(
      [&os](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantReluctivity>)
          os << "Constant{nu=" << m.nu << "}";
        else
          os << "Saturating{nu_min=" << m.nu_min << ", nu_max=" << m.nu_max
             << ", tau=" << m.tau << "}";
      },
      model);
  return os.str();
}

double default_zeta_max(const ReluctivityModel& model) {
  if (const auto* s = std::get_if<SaturatingReluctivity>(&model))
    return 1e3 * s->tau;
  return 1.0;
}

MonotonicityConstants certify_reluctivity(const ReluctivityModel& model,
                                          double zeta_max,
                                          std::int64_t n_samples) {
  if (!(zeta_max > 0.0))
    throw ScenarioError("reluctivity: zeta_max must be positive");
  if (n_samples < 2)
    throw ScenarioError("reluctivity: need at least two samples");

  if (const auto* c = std::get_if<ConstantReluctivity>(&model)) {
    if (!(c->nu > 0.0))
      throw ScenarioError("reluctivity: constant nu must be positive");
    return {c->nu, c->nu, zeta_max};
  }
  const auto& s = std::get<SaturatingReluctivity>(model);
  if (!(s.nu_min > 0.0) || !(s.tau > 0.0) || !std::isfinite(s.nu_max))
    throw ScenarioError("reluctivity: saturating model needs nu_min > 0, tau > 0");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double prev_nu = reluctivity(model, 0.0);
  for (std::int64_t n = 0; n < n_samples; ++n) {
    const double z = zeta_max * double(n) / double(n_samples - 1);
    const double nu = reluctivity(model, z);
    const double fp = field_derivative(model, z);
    if (nu < prev_nu)
      throw ScenarioError("reluctivity: nu decreasing at zeta=" +
                          std::to_string(z) + "; model rejected");
    if (!(fp > 0.0))
      throw ScenarioError("reluctivity: f'(zeta) <= 0 at zeta=" +
                          std::to_string(z) + "; model rejected");
    prev_nu = nu;
    lo = std::min(lo, fp);
    hi = std::max(hi, fp);
  }
  // Closed form: f' = nu_min + delta (3s - 2s^2) on s in [0, s_max), with
  // the maximum 9/8 delta at s = 3/4 (zeta = sqrt(3) tau).
  const double delta = s.nu_max - s.nu_min;
  const double z_peak = std::sqrt(3.0) * s.tau;
  const double analytic_hi = z_peak <= zeta_max
                                 ? s.nu_min + 1.125 * delta
                                 : field_derivative(model, zeta_max);
  return {std::min(lo, s.nu_min), std::max(hi, analytic_hi), zeta_max};
}

bool Reluctivity::is_linear() const {
  return std::holds_alternative<ConstantReluctivity>(conducting) &&
         std::holds_alternative<ConstantReluctivity>(insulating);
}

// ---------------------------------------------------------------------------
// Circuit, input

void Circuit::validate() const {
  if (m < 1) throw ScenarioError("circuit: need at least one winding");
  if (R.rows() != m || R.cols() != m)
    throw ScenarioError("circuit: R must be m x m");
  if (!R.allFinite()) throw ScenarioError("circuit: R has non-finite entries");
  const double scale = R.cwiseAbs().maxCoeff();
  if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ScenarioError("circuit: R not symmetric");
  if (!(lambda_min() > 0.0))
    throw ScenarioError("circuit: R not positive definite");
}

double Circuit::lambda_min() const {
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (R + R.transpose()),
                                         Eigen::EigenvaluesOnly);
  return eig.eigenvalues()(0);
}

std::string to_string(Integrator integrator) {
  return integrator == Integrator::backward_euler ? "backward_euler"
                                                  : "implicit_midpoint";
}

Vec InputSignal::at(double t) const {
  const auto n = times.size();
  if (n == 1 || t <= times.front()) return values.row(0).transpose();
  if (t >= times.back()) return values.row(n - 1).transpose();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const auto hi = std::size_t(it - times.begin());
  const auto lo = hi - 1;
  const double w = (t - times[lo]) / (times[hi] - times[lo]);
  return ((1.0 - w) * values.row(lo) + w * values.row(hi)).transpose();
}

Vec InputSignal::integral(double t) const {
  Vec acc = Vec::Zero(values.cols());
  double a = 0.0;
  // Piecewise linear pieces, constant extrapolation outside the samples.
  std::vector<double> knots{0.0};
  for (double s : times)
    if (s > 0.0 && s < t) knots.push_back(s);
  knots.push_back(t);
  for (std::size_t n = 1; n < knots.size(); ++n) {
    const double b = knots[n];
    acc += 0.5 * (b - a) * (at(a) + at(b));
    a = b;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Scenario

int Scenario::step_count() const {
  return int(std::floor(T / dt + 1e-9));
}

void Scenario::validate() const {
  grid.validate();
  regions.validate(grid);
  if (!(sigma_c > 0.0)) throw ScenarioError("sigma_c must be positive");
  circuit.validate();
  const auto& mc = reluctivity.constants;
  if (!(mc.m_nu > 0.0) || mc.m_nu > mc.L_nu)
    throw ScenarioError("reluctivity: constants violate 0 < m_nu <= L_nu");
  if (winding.columns.rows() != grid.edge_count() ||
      winding.columns.cols() != circuit.m)
    throw ScenarioError("winding: expected edges x m coefficient matrix");
  if (winding.div_free) {
    const auto complex = build_complex(grid, regions, sigma_c);
    const Mat div = winding_divergence(complex, winding.columns);
    const Mat flux = complex.edge_mass.asDiagonal() * winding.columns;
    const double scale = flux.cwiseAbs().maxCoeff();
    if (div.size() > 0 && div.cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1e-300))
      throw ScenarioError("winding: div_free is set but the discrete "
                          "divergence is nonzero");
  }
  if (A0.size() != grid.edge_count())
    throw ScenarioError("initial: A0 length must equal the edge count");
  if (!A0.allFinite()) throw ScenarioError("initial: A0 has non-finite entries");
  if (!(dt > 0.0)) throw ScenarioError("time: dt must be positive");
  if (!(T >= dt * (1.0 - 1e-12))) throw ScenarioError("time: T must be >= dt");
  if (input.times.empty()) throw ScenarioError("input: no samples");
  if (input.values.rows() != std::int64_t(input.times.size()) ||
      input.values.cols() != circuit.m)
    throw ScenarioError("input: values must have one row of m entries per time");
  for (std::size_t n = 1; n < input.times.size(); ++n)
    if (!(input.times[n] > input.times[n - 1]))
      throw ScenarioError("input: times must be strictly increasing");
  if (input.times.front() > 1e-12 * T ||
      input.times.back() < T * (1.0 - 1e-12))
    throw ScenarioError("input: samples must cover [0, T]");
  if (newton.tol <= 0.0 || newton.max_iterations < 1)
    throw ScenarioError("newton: tol > 0 and max_iterations >= 1 required");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
  throw ScenarioError("scenario field '" + field + "': " + msg);
}

const json& require(const json& obj, const std::string& key,
                    const std::string& path) {
  if (!obj.is_object()) fail(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) fail(path.empty() ? key : path + "." + key, "missing");
  return *it;
}

double number(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

int integer(const json& obj, const std::string& key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  return v.get<int>();
}

CellBox parse_box(const json& j, const std::string& path) {
  CellBox b;
  try {
    b.lo = j.at("lo").get<std::array<int, 3>>();
    b.hi = j.at("hi").get<std::array<int, 3>>();
  } catch (const json::exception& e) {
    fail(path, std::string("expected {lo:[i,j,k], hi:[i,j,k]}: ") + e.what());
  }
  return b;
}

ReluctivityModel parse_model(const json& j, const std::string& path) {
  const auto& type = require(j, "type", path);
  if (type == "constant") return ConstantReluctivity{number(j, "nu", path)};
  if (type == "saturating")
    return SaturatingReluctivity{number(j, "nu_min", path),
                                 number(j, "nu_max", path),
                                 number(j, "tau", path)};
  fail(path + ".type", "expected 'constant' or 'saturating'");
}

json model_to_json(const ReluctivityModel& model) {
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantReluctivity>)
          return {{"type", "constant"}, {"nu", m.nu}};
        else
          return {{"type", "saturating"},
                  {"nu_min", m.nu_min},
                  {"nu_max", m.nu_max},
                  {"tau", m.tau}};
      },
      model);
}

Vec parse_vector(const json& j, std::int64_t n, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  if (std::int64_t(j.size()) != n)
    fail(path, "expected " + std::to_string(n) + " entries, got " +
                   std::to_string(j.size()));
  Vec v(n);
  for (std::int64_t i = 0; i < n; ++i) {
    if (!j[i].is_number()) fail(path, "expected numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

std::pair<Vec, bool> parse_winding_column(const json& j, const GridSpec& grid,
                                          const RegionMap& regions,
                                          const std::string& path) {
  if (j.is_array()) return {parse_vector(j, grid.edge_count(), path), false};
  const auto preset = require(j, "preset", path).get<std::string>();
  const double turns = j.value("turns", 1.0);
  if (preset == "loop") return {winding_preset::loop(grid, regions, turns), true};
  if (preset == "bar") return {winding_preset::bar(grid, regions, turns), false};
  if (preset == "none") return {Vec::Zero(grid.edge_count()), true};
  fail(path + ".preset", "expected 'loop', 'bar' or 'none'");
}

} // namespace

Scenario parse_scenario(const json& doc) {
  Scenario s;
  const auto& g = require(doc, "grid", "");
  s.grid.nx = integer(g, "nx", "grid");
  s.grid.ny = integer(g, "ny", "grid");
  s.grid.nz = integer(g, "nz", "grid");
  s.grid.h = number(g, "h", "grid");
  s.grid.validate();

  const auto& r = require(doc, "regions", "");
  std::vector<CellBox> cond, ins;
  for (const auto& b : require(r, "conducting_boxes", "regions"))
    cond.push_back(parse_box(b, "regions.conducting_boxes"));
  if (r.contains("insulating_boxes"))
    for (const auto& b : r["insulating_boxes"])
      ins.push_back(parse_box(b, "regions.insulating_boxes"));
  s.regions = RegionMap::from_boxes(s.grid, cond, ins);
  s.regions.validate(s.grid);

  const auto& rel = require(doc, "reluctivity", "");
  if (rel.contains("type")) {
    s.reluctivity.conducting = parse_model(rel, "reluctivity");
    s.reluctivity.insulating = s.reluctivity.conducting;
  } else {
    s.reluctivity.conducting =
        parse_model(require(rel, "conducting", "reluctivity"),
                    "reluctivity.conducting");
    s.reluctivity.insulating =
        parse_model(require(rel, "insulating", "reluctivity"),
                    "reluctivity.insulating");
  }
  const double zeta_max =
      rel.value("zeta_max", std::max(default_zeta_max(s.reluctivity.conducting),
                                     default_zeta_max(s.reluctivity.insulating)));
  const std::int64_t samples = rel.value("samples", std::int64_t{100001});
  const auto mc = certify_reluctivity(s.reluctivity.conducting, zeta_max, samples);
  const auto mi = certify_reluctivity(s.reluctivity.insulating, zeta_max, samples);
  s.reluctivity.constants = {std::min(mc.m_nu, mi.m_nu),
                             std::max(mc.L_nu, mi.L_nu), zeta_max};

  s.sigma_c = number(doc, "sigma_c", "");

  const auto& c = require(doc, "circuit", "");
  const auto& R = require(c, "R", "circuit");
  if (!R.is_array() || R.empty()) fail("circuit.R", "expected a square matrix");
  s.circuit.m = int(R.size());
  s.circuit.R.resize(s.circuit.m, s.circuit.m);
  for (int i = 0; i < s.circuit.m; ++i) {
    const auto row = parse_vector(R[i], s.circuit.m, "circuit.R");
    s.circuit.R.row(i) = row.transpose();
  }
  s.circuit.validate();

  const auto& w = require(doc, "winding", "");
  const auto edges = s.grid.edge_count();
  s.winding.columns = Mat::Zero(edges, s.circuit.m);
  bool all_div_free = true;
  if (w.contains("preset")) {
    if (s.circuit.m != 1) fail("winding.preset", "a single preset needs m = 1");
    auto [col, df] = parse_winding_column(w, s.grid, s.regions, "winding");
    s.winding.columns.col(0) = col;
    all_div_free = df;
  } else {
    const auto& cols = require(w, "columns", "winding");
    if (!cols.is_array() || std::int64_t(cols.size()) != s.circuit.m)
      fail("winding.columns", "expected m columns");
    for (int k = 0; k < s.circuit.m; ++k) {
      auto [col, df] = parse_winding_column(
          cols[k], s.grid, s.regions, "winding.columns[" + std::to_string(k) + "]");
      s.winding.columns.col(k) = col;
      all_div_free = all_div_free && df;
    }
  }
  s.winding.div_free = w.value("div_free", all_div_free);

  s.A0 = Vec::Zero(edges);
  if (doc.contains("initial")) {
    const auto& init = doc["initial"];
    if (init.contains("A0")) {
      s.A0 = parse_vector(init["A0"], edges, "initial.A0");
    } else {
      const auto preset = init.value("preset", std::string("zero"));
      if (preset == "random") {
        std::mt19937_64 rng(init.value("seed", std::uint64_t{1}));
        std::normal_distribution<double> dist(0.0, init.value("scale", 1.0));
        for (std::int64_t e = 0; e < edges; ++e) s.A0(e) = dist(rng);
      } else if (preset != "zero") {
        fail("initial.preset", "expected 'zero' or 'random'");
      }
    }
  }

  const auto& in = require(doc, "input", "");
  const auto& times = require(in, "times", "input");
  const auto& values = require(in, "values", "input");
  if (!times.is_array() || !values.is_array() || times.size() != values.size())
    fail("input", "times and values must be arrays of equal length");
  s.input.times = times.get<std::vector<double>>();
  s.input.values.resize(std::int64_t(times.size()), s.circuit.m);
  for (std::size_t n = 0; n < values.size(); ++n) {
    if (values[n].is_number()) {
      if (s.circuit.m != 1) fail("input.values", "expected m entries per sample");
      s.input.values(std::int64_t(n), 0) = values[n].get<double>();
    } else {
      s.input.values.row(std::int64_t(n)) =
          parse_vector(values[n], s.circuit.m, "input.values").transpose();
    }
  }

  const auto& t = require(doc, "time", "");
  s.dt = number(t, "dt", "time");
  s.T = number(t, "T", "time");

  const auto integ = doc.value("integrator", std::string("backward_euler"));
  if (integ == "backward_euler") s.integrator = Integrator::backward_euler;
  else if (integ == "implicit_midpoint") s.integrator = Integrator::implicit_midpoint;
  else fail("integrator", "expected 'backward_euler' or 'implicit_midpoint'");

  if (doc.contains("newton")) {
    const auto& n = doc["newton"];
    s.newton.tol = n.value("tol", s.newton.tol);
    s.newton.max_iterations = n.value("max_iterations", s.newton.max_iterations);
    s.newton.max_halvings = n.value("max_halvings", s.newton.max_halvings);
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ScenarioError(path.string() + ": parse error: " + e.what());
  }
  return parse_scenario(doc);
}

json scenario_to_json(const Scenario& s) {
  json doc;
  doc["grid"] = {{"nx", s.grid.nx}, {"ny", s.grid.ny}, {"nz", s.grid.nz}, {"h", s.grid.h}};
  json boxes = json::array();
  for (std::int64_t c = 0; c < s.grid.cell_count(); ++c) {
    if (!s.regions.conducting(c)) continue;
    const auto [i, j, k] = s.grid.cell_ijk(c);
    boxes.push_back({{"lo", {i, j, k}}, {"hi", {i + 1, j + 1, k + 1}}});
  }
  doc["regions"] = {{"conducting_boxes", boxes}};
  doc["reluctivity"] = {{"conducting", model_to_json(s.reluctivity.conducting)},
                        {"insulating", model_to_json(s.reluctivity.insulating)},
                        {"zeta_max", s.reluctivity.constants.zeta_max}};
  doc["sigma_c"] = s.sigma_c;
  json R = json::array();
  for (int i = 0; i < s.circuit.m; ++i) {
    json row = json::array();
    for (int j = 0; j < s.circuit.m; ++j) row.push_back(s.circuit.R(i, j));
    R.push_back(row);
  }
  doc["circuit"] = {{"R", R}};
  json cols = json::array();
  for (int k = 0; k < s.circuit.m; ++k)
    cols.push_back(std::vector<double>(s.winding.columns.col(k).data(),
                                       s.winding.columns.col(k).data() +
                                           s.winding.columns.rows()));
  doc["winding"] = {{"columns", cols}, {"div_free", s.winding.div_free}};
  doc["initial"] = {{"A0", std::vector<double>(s.A0.data(), s.A0.data() + s.A0.size())}};
  json values = json::array();
  for (std::int64_t n = 0; n < s.input.values.rows(); ++n) {
    json row = json::array();
    for (int k = 0; k < s.circuit.m; ++k) row.push_back(s.input.values(n, k));
    values.push_back(row);
  }
  doc["input"] = {{"times", s.input.times}, {"values", values}};
  doc["time"] = {{"dt", s.dt}, {"T", s.T}};
  doc["integrator"] = to_string(s.integrator);
  doc["newton"] = {{"tol", s.newton.tol},
                   {"max_iterations", s.newton.max_iterations},
                   {"max_halvings", s.newton.max_halvings}};
  return doc;
}

void save_scenario(const Scenario& scenario, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << scenario_to_json(scenario).dump(2) << '\n';
}

Scenario with_zero_input(const Scenario& scenario) {
  Scenario s = scenario;
  s.input.times = {0.0, s.T};
  s.input.values = Mat::Zero(2, s.circuit.m);
  return s;
}

double winding_norm(const Scenario& s) {
  const auto complex = build_complex(s.grid, s.regions, s.sigma_c);
  const Mat gram = s.winding.columns.transpose() *
                   complex.edge_mass.asDiagonal() * s.winding.columns;
  Eigen::SelfAdjointEigenSolver<Mat> eR(s.circuit.R);
  const Mat r_inv_half = eR.eigenvectors() *
                         eR.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                         eR.eigenvectors().transpose();
  const Mat scaled = r_inv_half * gram * r_inv_half;
  Eigen::SelfAdjointEigenSolver<Mat> eg(0.5 * (scaled + scaled.transpose()),
                                        Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, eg.eigenvalues().maxCoeff()));
}

double compute_gamma(const Scenario& s) {
  const double n = winding_norm(s);
  return s.sigma_c + n * n;
}

// ---------------------------------------------------------------------------
// Winding presets

namespace winding_preset {

namespace {

std::array<int, 6> conductor_bounds(const GridSpec& grid, const RegionMap& regions) {
  std::array<int, 6> b{grid.nx, grid.ny, grid.nz, -1, -1, -1};
  for (std::int64_t c = 0; c < grid.cell_count(); ++c) {
    if (!regions.conducting(c)) continue;
    const auto ijk = grid.cell_ijk(c);
    for (int d = 0; d < 3; ++d) {
      b[d] = std::min(b[d], ijk[d]);
      b[d + 3] = std::max(b[d + 3], ijk[d] + 1);
    }
  }
  if (b[3] < 0) throw ScenarioError("winding: preset needs a conducting region");
  return b;
}

} // namespace

Vec loop(const GridSpec& grid, const RegionMap& regions, double turns) {
  const auto [i0, j0, k0, i1, j1, k1] = conductor_bounds(grid, regions);
  const double density = turns / (grid.h * grid.h);
  Vec chi = Vec::Zero(grid.edge_count());
  for (int k = k0; k <= k1; ++k) {
    for (int i = i0; i < i1; ++i) {
      chi(grid.edge(Axis::x, i, j0, k)) += density;
      chi(grid.edge(Axis::x, i, j1, k)) -= density;
    }
    for (int j = j0; j < j1; ++j) {
      chi(grid.edge(Axis::y, i1, j, k)) += density;
      chi(grid.edge(Axis::y, i0, j, k)) -= density;
    }
  }
  return chi;
}

Vec bar(const GridSpec& grid, const RegionMap& regions, double turns) {
  const auto [i0, j0, k0, i1, j1, k1] = conductor_bounds(grid, regions);
  const double density = turns / (grid.h * grid.h);
  Vec chi = Vec::Zero(grid.edge_count());
  for (int k = k0; k <= k1; ++k)
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i < i1; ++i) chi(grid.edge(Axis::x, i, j, k)) = density;
  return chi;
}

} // namespace winding_preset

} // namespace mqs
