#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mqs/scenario.hpp"

namespace mqs {

using IntSparse = Eigen::SparseMatrix<int>;
using Sparse = Eigen::SparseMatrix<double>;

/// Lowest-order voxel de Rham complex: nodes -> edges -> faces.
///
/// Edge unknowns are tangential components at edge midpoints, so the L2
/// norm of an edge field is sum_e M_e(e) A_e^2 with M_e = h^3 * (adjacent
/// cells) / 4, and the curl norm is sum_f M_f(f) (Ccurl A)_f^2 with
/// M_f = h * (adjacent cells) / 2.
struct DiscreteComplex {
  GridSpec grid;
  std::int64_t nodes = 0;
  std::int64_t edges = 0;
  std::int64_t faces = 0;
  std::int64_t cells = 0;

  IntSparse grad_int; // edges x nodes
  IntSparse curl_int; // faces x edges
  Sparse grad;
  Sparse curl;

  Vec edge_mass;
  Vec face_mass;
  Vec sigma_mass;
  double sigma_c = 0.0;

  /// Cells adjacent to each face (second entry -1 on the outer boundary).
  std::vector<std::array<std::int64_t, 2>> face_cells;
  std::vector<std::uint8_t> cell_conducting;
  std::vector<std::uint8_t> boundary_edge;
  std::vector<std::uint8_t> boundary_node;

  double curl_norm_sq(const Vec& A) const;
  double edge_norm_sq(const Vec& A) const;
  double sigma_norm_sq(const Vec& A) const;
};

inline constexpr std::int64_t default_max_cells = 32 * 32 * 32;

DiscreteComplex build_complex(const GridSpec& grid, const RegionMap& regions,
                              double sigma_c,
                              std::int64_t max_cells = default_max_cells);

/// Maps winding columns to the coupling matrix X = M_e chi, so that
/// X^T A is the edge-midpoint quadrature of the flux linkage.
Mat build_winding_coupling(const DiscreteComplex& complex,
                           const Winding& winding);

/// grad^T M_e chi restricted to non-boundary nodes, per column.
Mat winding_divergence(const DiscreteComplex& complex, const Mat& columns);

/// M_e-orthonormal basis of the gauged space X_h.
struct GaugeBasis {
  Mat Z; // edges x d
  int d = 0;
  /// Basis of the constrained nodal space: potentials vanishing on the
  /// outer boundary and constant on each interface component.
  Mat constrained; // nodes x c
  int constrained_dim = 0;
  std::vector<std::int64_t> interior_edges;
  std::vector<std::int64_t> interior_nodes;
  double condition = 1.0;
};

GaugeBasis build_gauge_basis(const DiscreteComplex& complex,
                             const RegionMap& regions,
                             double max_condition = 1e12);

/// The X inner product on gauge coordinates and its parts.
struct XInner {
  Mat S;        // sigma + curl + coupling
  Mat sigma;    // Z^T M_sigma Z
  Mat curl;     // Z^T Ccurl^T M_f Ccurl Z
  Mat coupling; // Z^T X R^{-1} X^T Z
  Mat ZtX;      // Z^T X
};

XInner build_x_inner(const DiscreteComplex& complex, const GaugeBasis& gauge,
                     const Mat& X, const Mat& R);

/// S-orthogonal projector onto the curl-free part of X_h.
struct CurlFreeProjector {
  Mat P;     // d x d
  Mat range; // d x r, Euclidean-orthonormal basis of ker(Ccurl Z)
  int rank = 0;
};

CurlFreeProjector build_projector(const DiscreteComplex& complex,
                                  const GaugeBasis& gauge, const Mat& X,
                                  const Mat& R);
CurlFreeProjector build_projector(const XInner& inner);

/// Orthonormal basis of the null space of a symmetric positive
/// semidefinite matrix, relative threshold on the spectrum.
Mat psd_null_space(const Mat& A, double rel_tol = 1e-10);

} // namespace mqs
