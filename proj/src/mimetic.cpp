#include "mqs/mimetic.hpp"

#include <algorithm>
#include <cmath>

#include "mqs/error.hpp"

namespace mqs {

namespace {

using Triplet = Eigen::Triplet<int>;

std::int64_t cell_or_none(const GridSpec& g, int i, int j, int k) {
  if (i < 0 || j < 0 || k < 0 || i >= g.nx || j >= g.ny || k >= g.nz) return -1;
  return g.cell(i, j, k);
}

// Cells sharing edge e (up to four).
std::vector<std::int64_t> edge_cells(const GridSpec& g, std::int64_t e) {
  const auto [axis, ijk] = g.edge_ijk(e);
  const auto [i, j, k] = ijk;
  std::vector<std::int64_t> out;
  out.reserve(4);
  for (int a = -1; a <= 0; ++a)
    for (int b = -1; b <= 0; ++b) {
      std::int64_t c = -1;
      switch (axis) {
      case Axis::x: c = cell_or_none(g, i, j + a, k + b); break;
      case Axis::y: c = cell_or_none(g, i + a, j, k + b); break;
      case Axis::z: c = cell_or_none(g, i + a, j + b, k); break;
      }
      if (c >= 0) out.push_back(c);
    }
  return out;
}

} // namespace

double DiscreteComplex::curl_norm_sq(const Vec& A) const {
  const Vec w = curl * A;
  return w.dot(face_mass.cwiseProduct(w));
}

double DiscreteComplex::edge_norm_sq(const Vec& A) const {
  return A.dot(edge_mass.cwiseProduct(A));
}

double DiscreteComplex::sigma_norm_sq(const Vec& A) const {
  return A.dot(sigma_mass.cwiseProduct(A));
}

DiscreteComplex build_complex(const GridSpec& grid, const RegionMap& regions,
                              double sigma_c, std::int64_t max_cells) {
  grid.validate();
  if (grid.cell_count() > max_cells)
    throw ScenarioError("grid: " + std::to_string(grid.cell_count()) +
                        " cells exceed the limit of " + std::to_string(max_cells));
  if (std::int64_t(regions.labels().size()) != grid.cell_count())
    throw ScenarioError("regions: label count does not match cell count");

  DiscreteComplex cx;
  cx.grid = grid;
  cx.nodes = grid.node_count();
  cx.edges = grid.edge_count();
  cx.faces = grid.face_count();
  cx.cells = grid.cell_count();
  cx.sigma_c = sigma_c;
  cx.cell_conducting = regions.labels();

  std::vector<Triplet> gt;
  gt.reserve(2 * cx.edges);
  for (std::int64_t e = 0; e < cx.edges; ++e) {
    const auto [axis, ijk] = grid.edge_ijk(e);
    const auto [i, j, k] = ijk;
    std::int64_t head = 0;
    switch (axis) {
    case Axis::x: head = grid.node(i + 1, j, k); break;
    case Axis::y: head = grid.node(i, j + 1, k); break;
    case Axis::z: head = grid.node(i, j, k + 1); break;
    }
    gt.emplace_back(int(e), int(head), 1);
    gt.emplace_back(int(e), int(grid.node(i, j, k)), -1);
  }
  cx.grad_int.resize(cx.edges, cx.nodes);
  cx.grad_int.setFromTriplets(gt.begin(), gt.end());

  std::vector<Triplet> ct;
  ct.reserve(4 * cx.faces);
  cx.face_cells.resize(cx.faces);
  cx.face_mass.resize(cx.faces);
  for (std::int64_t f = 0; f < cx.faces; ++f) {
    const auto [axis, ijk] = grid.face_ijk(f);
    const auto [i, j, k] = ijk;
    // Counterclockwise circulation seen from the +normal side.
    std::int64_t e[4] = {};
    std::int64_t below = -1;
    switch (axis) {
    case Axis::x:
      e[0] = grid.edge(Axis::y, i, j, k);
      e[1] = grid.edge(Axis::z, i, j + 1, k);
      e[2] = grid.edge(Axis::y, i, j, k + 1);
      e[3] = grid.edge(Axis::z, i, j, k);
      below = cell_or_none(grid, i - 1, j, k);
      break;
    case Axis::y:
      e[0] = grid.edge(Axis::z, i, j, k);
      e[1] = grid.edge(Axis::x, i, j, k + 1);
      e[2] = grid.edge(Axis::z, i + 1, j, k);
      e[3] = grid.edge(Axis::x, i, j, k);
      below = cell_or_none(grid, i, j - 1, k);
      break;
    case Axis::z:
      e[0] = grid.edge(Axis::x, i, j, k);
      e[1] = grid.edge(Axis::y, i + 1, j, k);
      e[2] = grid.edge(Axis::x, i, j + 1, k);
      e[3] = grid.edge(Axis::y, i, j, k);
      below = cell_or_none(grid, i, j, k - 1);
      break;
    }
    ct.emplace_back(int(f), int(e[0]), 1);
    ct.emplace_back(int(f), int(e[1]), 1);
    ct.emplace_back(int(f), int(e[2]), -1);
    ct.emplace_back(int(f), int(e[3]), -1);
    const auto above = cell_or_none(grid, i, j, k);
    auto& fc = cx.face_cells[f];
    fc = {above, below};
    if (fc[0] < 0) std::swap(fc[0], fc[1]);
    const int n = (fc[0] >= 0) + (fc[1] >= 0);
    cx.face_mass(f) = grid.h * n / 2.0;
  }
  cx.curl_int.resize(cx.faces, cx.edges);
  cx.curl_int.setFromTriplets(ct.begin(), ct.end());

  cx.grad = cx.grad_int.cast<double>();
  cx.curl = cx.curl_int.cast<double>();

  const double h3 = grid.h * grid.h * grid.h;
  cx.edge_mass.resize(cx.edges);
  cx.sigma_mass.resize(cx.edges);
  cx.boundary_edge.resize(cx.edges);
  for (std::int64_t e = 0; e < cx.edges; ++e) {
    const auto cells = edge_cells(grid, e);
    int conducting = 0;
    for (auto c : cells) conducting += regions.conducting(c) ? 1 : 0;
    cx.edge_mass(e) = h3 * double(cells.size()) / 4.0;
    cx.sigma_mass(e) = sigma_c * h3 * conducting / 4.0;
    cx.boundary_edge[e] = grid.edge_on_boundary(e);
  }
  cx.boundary_node.resize(cx.nodes);
  for (std::int64_t n = 0; n < cx.nodes; ++n)
    cx.boundary_node[n] = grid.node_on_boundary(n);
  return cx;
}

Mat build_winding_coupling(const DiscreteComplex& complex, const Winding& winding) {
  if (winding.columns.rows() != complex.edges)
    throw ScenarioError("winding: column length does not match the edge count");
  return complex.edge_mass.asDiagonal() * winding.columns;
}

Mat winding_divergence(const DiscreteComplex& complex, const Mat& columns) {
  const Mat full = complex.grad.transpose() * (complex.edge_mass.asDiagonal() * columns);
  std::vector<std::int64_t> keep;
  for (std::int64_t n = 0; n < complex.nodes; ++n)
    if (!complex.boundary_node[n]) keep.push_back(n);
  Mat out(std::int64_t(keep.size()), columns.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) out.row(std::int64_t(r)) = full.row(keep[r]);
  return out;
}

GaugeBasis build_gauge_basis(const DiscreteComplex& complex, const RegionMap& regions,
                             double max_condition) {
  GaugeBasis gb;
  for (std::int64_t e = 0; e < complex.edges; ++e)
    if (!complex.boundary_edge[e]) gb.interior_edges.push_back(e);
  for (std::int64_t n = 0; n < complex.nodes; ++n)
    if (!complex.boundary_node[n]) gb.interior_nodes.push_back(n);

  // Constrained nodal space: one free column per interior node off the
  // interface, one tied column per interface component.
  const auto& comp = regions.interface_components();
  int components = 0;
  for (auto n : gb.interior_nodes) components = std::max(components, comp[n] + 1);
  std::vector<int> comp_column(components, -1);
  std::vector<std::pair<std::int64_t, int>> entries;
  int col = 0;
  for (auto n : gb.interior_nodes) {
    const int c = comp[n];
    if (c < 0) {
      entries.emplace_back(n, col++);
    } else {
      if (comp_column[c] < 0) comp_column[c] = col++;
      entries.emplace_back(n, comp_column[c]);
    }
  }
  gb.constrained_dim = col;
  gb.constrained = Mat::Zero(complex.nodes, col);
  for (auto [n, c] : entries) gb.constrained(n, c) = 1.0;

  const auto ne = std::int64_t(gb.interior_edges.size());
  const Mat GW = complex.grad * gb.constrained;
  Mat B(ne, col);
  Vec sqrt_me(ne);
  for (std::int64_t r = 0; r < ne; ++r) {
    const auto e = gb.interior_edges[r];
    sqrt_me(r) = std::sqrt(complex.edge_mass(e));
    B.row(r) = sqrt_me(r) * GW.row(e);
  }

  Eigen::HouseholderQR<Mat> qr(B);
  if (col > 0) {
    const Vec diag = qr.matrixQR().diagonal().head(std::min<std::int64_t>(ne, col)).cwiseAbs();
    const double lo = diag.minCoeff();
    gb.condition = lo > 0.0 ? diag.maxCoeff() / lo : std::numeric_limits<double>::infinity();
    if (col > ne || !(gb.condition <= max_condition))
      throw RankDeficient("gauge: constrained gradients are numerically rank deficient "
                          "(condition estimate " + std::to_string(gb.condition) + ")",
                          gb.condition);
  }
  gb.d = int(ne - col);
  Mat Q = qr.householderQ() * Mat::Identity(ne, ne);
  gb.Z = Mat::Zero(complex.edges, gb.d);
  for (std::int64_t r = 0; r < ne; ++r)
    gb.Z.row(gb.interior_edges[r]) = Q.row(r).tail(gb.d) / sqrt_me(r);
  return gb;
}

XInner build_x_inner(const DiscreteComplex& complex, const GaugeBasis& gauge,
                     const Mat& X, const Mat& R) {
  Eigen::LLT<Mat> llt(R);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("circuit: R is not positive definite");
  XInner xi;
  const Mat& Z = gauge.Z;
  xi.sigma = Z.transpose() * complex.sigma_mass.asDiagonal() * Z;
  const Mat CZ = complex.curl * Z;
  xi.curl = CZ.transpose() * complex.face_mass.asDiagonal() * CZ;
  xi.ZtX = Z.transpose() * X;
  xi.coupling = xi.ZtX * llt.solve(xi.ZtX.transpose());
  xi.S = xi.sigma + xi.curl + xi.coupling;
  xi.S = 0.5 * (xi.S + xi.S.transpose()).eval();
  if (gauge.d > 0) {
    Eigen::LLT<Mat> s(xi.S);
    if (s.info() != Eigen::Success)
      throw NotPositiveDefinite("X inner product is not positive definite on the "
                                "gauge space; the coupled operator has no bounded inverse");
  }
  return xi;
}

Mat psd_null_space(const Mat& A, double rel_tol) {
  if (A.rows() == 0) return Mat(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (A + A.transpose()));
  const Vec& lam = eig.eigenvalues();
  const double scale = lam.cwiseAbs().maxCoeff();
  std::int64_t r = 0;
  while (r < lam.size() && lam(r) <= rel_tol * scale) ++r;
  if (scale == 0.0) r = lam.size();
  return eig.eigenvectors().leftCols(r);
}

CurlFreeProjector build_projector(const XInner& inner) {
  CurlFreeProjector pr;
  const auto d = inner.S.rows();
  pr.range = psd_null_space(inner.curl);
  pr.rank = int(pr.range.cols());
  if (pr.rank == 0) {
    pr.P = Mat::Zero(d, d);
    return pr;
  }
  const Mat QtS = pr.range.transpose() * inner.S;
  const Mat G = QtS * pr.range;
  Eigen::LLT<Mat> llt(0.5 * (G + G.transpose()));
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("X inner product is not positive definite on the "
                              "curl-free subspace");
  pr.P = pr.range * llt.solve(QtS);
  return pr;
}

CurlFreeProjector build_projector(const DiscreteComplex& complex, const GaugeBasis& gauge,
                                  const Mat& X, const Mat& R) {
  return build_projector(build_x_inner(complex, gauge, X, R));
}

} // namespace mqs
