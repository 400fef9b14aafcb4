#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace mqs {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Axis : int { x = 0, y = 1, z = 2 };

/// Uniform axis-aligned voxel box with nx*ny*nz cells of edge length h.
///
/// Entity numbering is lexicographic with i fastest. Edges and faces are
/// grouped by orientation (x block, then y, then z).
struct GridSpec {
  int nx = 1;
  int ny = 1;
  int nz = 1;
  double h = 1.0;

  std::int64_t node_count() const {
    return std::int64_t(nx + 1) * (ny + 1) * (nz + 1);
  }
  std::int64_t cell_count() const { return std::int64_t(nx) * ny * nz; }
  std::int64_t edge_count(Axis a) const;
  std::int64_t face_count(Axis a) const;
  std::int64_t edge_count() const {
    return edge_count(Axis::x) + edge_count(Axis::y) + edge_count(Axis::z);
  }
  std::int64_t face_count() const {
    return face_count(Axis::x) + face_count(Axis::y) + face_count(Axis::z);
  }

  std::int64_t node(int i, int j, int k) const {
    return i + std::int64_t(nx + 1) * (j + std::int64_t(ny + 1) * k);
  }
  std::int64_t cell(int i, int j, int k) const {
    return i + std::int64_t(nx) * (j + std::int64_t(ny) * k);
  }
  /// Edge starting at node (i,j,k) pointing along a.
  std::int64_t edge(Axis a, int i, int j, int k) const;
  /// Face with lower corner (i,j,k) and normal a.
  std::int64_t face(Axis a, int i, int j, int k) const;

  std::array<int, 3> node_ijk(std::int64_t n) const;
  std::array<int, 3> cell_ijk(std::int64_t c) const;
  /// Orientation and lower node of an edge.
  std::pair<Axis, std::array<int, 3>> edge_ijk(std::int64_t e) const;
  std::pair<Axis, std::array<int, 3>> face_ijk(std::int64_t f) const;

  bool node_on_boundary(std::int64_t n) const;
  /// True for edges lying in the outer boundary (tangential trace).
  bool edge_on_boundary(std::int64_t e) const;

  void validate() const;
};

/// Half-open cell index box [lo, hi).
struct CellBox {
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
};

/// Conducting/insulating labels and the interface topology they induce.
class RegionMap {
public:
  RegionMap() = default;
  RegionMap(const GridSpec& grid, std::vector<std::uint8_t> conducting);

  static RegionMap from_boxes(const GridSpec& grid,
                              const std::vector<CellBox>& conducting,
                              const std::vector<CellBox>& insulating = {});

  bool conducting(std::int64_t cell) const { return conducting_[cell] != 0; }
  const std::vector<std::uint8_t>& labels() const { return conducting_; }
  std::int64_t conducting_count() const;

  /// Number of enclosed insulating cavities.
  int cavity_count() const { return cavities_; }
  /// Interface component of a node: 0 = external interface, 1..q =
  /// cavity interfaces, -1 = not on the conductor interface.
  int interface_component(std::int64_t node) const {
    return node_component_[node];
  }
  const std::vector<int>& interface_components() const {
    return node_component_;
  }
  std::int64_t interface_node_count() const;

  /// Checks the scenario-level invariants: non-empty, face-connected
  /// conductor that does not touch the outer boundary, and interface
  /// components that agree with the insulating cell components.
  void validate(const GridSpec& grid) const;

private:
  void analyze(const GridSpec& grid);

  std::vector<std::uint8_t> conducting_;
  std::vector<int> cell_component_; // insulating cells; -1 for conducting
  std::vector<int> node_component_;
  int cavities_ = 0;
  bool node_components_consistent_ = true;
};

struct ConstantReluctivity {
  double nu = 1.0;
};

/// nu(z) = nu_min + (nu_max - nu_min) z^2 / (z^2 + tau^2).
struct SaturatingReluctivity {
  double nu_min = 1.0;
  double nu_max = 1.0;
  double tau = 1.0;
};

using ReluctivityModel = std::variant<ConstantReluctivity, SaturatingReluctivity>;

double reluctivity(const ReluctivityModel& model, double zeta);
/// d/dz of z -> nu(z) z.
double field_derivative(const ReluctivityModel& model, double zeta);
std::string describe(const ReluctivityModel& model);

struct MonotonicityConstants {
  double m_nu = 0.0;
  double L_nu = 0.0;
  double zeta_max = 0.0;
};

/// Monotonicity and Lipschitz constants of z -> nu(z) z on [0, zeta_max].
///
/// Samples the derivative on n_samples uniformly spaced points and merges
/// the result with the closed-form extrema of the model family. Rejects
/// models whose reluctivity decreases or whose derivative is not positive.
MonotonicityConstants certify_reluctivity(const ReluctivityModel& model,
                                          double zeta_max,
                                          std::int64_t n_samples);

double default_zeta_max(const ReluctivityModel& model);

/// Per-region reluctivity with certified constants over both regions.
struct Reluctivity {
  ReluctivityModel conducting = ConstantReluctivity{};
  ReluctivityModel insulating = ConstantReluctivity{};
  MonotonicityConstants constants;

  const ReluctivityModel& model(bool is_conducting) const {
    return is_conducting ? conducting : insulating;
  }
  bool is_linear() const;
};

struct Circuit {
  int m = 1;
  Mat R;

  void validate() const;
  double lambda_min() const;
};

/// Winding function sampled as tangential components at edge midpoints,
/// one column per winding.
struct Winding {
  Mat columns; // edges x m
  bool div_free = false;
};

enum class Integrator { backward_euler, implicit_midpoint };

std::string to_string(Integrator integrator);

struct NewtonOptions {
  double tol = 1e-12;
  int max_iterations = 50;
  int max_halvings = 30;
};

/// Piecewise linear voltage samples.
struct InputSignal {
  std::vector<double> times;
  Mat values; // samples x m

  Vec at(double t) const;
  /// Exact integral of the interpolant over [0, t].
  Vec integral(double t) const;
};

struct Scenario {
  GridSpec grid;
  RegionMap regions;
  Reluctivity reluctivity;
  double sigma_c = 1.0;
  Circuit circuit;
  Winding winding;
  Vec A0;
  InputSignal input;
  double dt = 1.0;
  double T = 1.0;
  Integrator integrator = Integrator::backward_euler;
  NewtonOptions newton;

  int step_count() const;
  /// Re-check every invariant of the assembled instance.
  void validate() const;
};

Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::filesystem::path& path);
/// Fully explicit JSON form (raw winding columns and initial vector).
nlohmann::json scenario_to_json(const Scenario& scenario);
void save_scenario(const Scenario& scenario, const std::filesystem::path& path);

/// Copy with the input replaced by v = 0.
Scenario with_zero_input(const Scenario& scenario);

/// sigma_C + lambda_max(R^{-1/2} (chi^T M_e chi) R^{-1/2}).
double compute_gamma(const Scenario& scenario);
/// ||chi R^{-1/2}|| in the L2(Omega; R^{3 x m}) operator norm.
double winding_norm(const Scenario& scenario);

namespace winding_preset {
/// Closed circulation around the perimeter of the conductor's bounding box
/// in every node plane it spans; discretely divergence free.
Vec loop(const GridSpec& grid, const RegionMap& regions, double turns);
/// x-directed density on edges inside the conductor's bounding box.
Vec bar(const GridSpec& grid, const RegionMap& regions, double turns);
} // namespace winding_preset

} // namespace mqs
