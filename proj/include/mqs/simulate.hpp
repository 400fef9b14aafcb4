#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "mqs/energy.hpp"
#include "mqs/mimetic.hpp"
#include "mqs/scenario.hpp"

namespace mqs {

/// Everything assembled once per scenario; immutable afterwards.
struct Assembly {
  Scenario scenario;
  DiscreteComplex complex;
  GaugeBasis gauge;
  Mat X;     // edges x m winding coupling
  Mat R_inv;
  XInner inner;
  Mat CZ;    // Ccurl Z, faces x d
  MagneticEnergy energy;
};

Assembly assemble(const Scenario& scenario);

enum class LinearSolver { automatic, dense, cg };

/// Cell count up to which the automatic choice uses dense Cholesky.
inline constexpr std::int64_t dense_cell_limit = 16 * 16 * 16;

struct StepDiagnostics {
  int newton_iterations = 0;
  /// Final Newton residual relative to the size of the step equation.
  double residual = 0.0;
};

/// Implicit steps in gauge coordinates a (A = Z a). The current is
/// eliminated through the circuit equation, leaving an SPD Newton system.
class Stepper {
public:
  explicit Stepper(const Assembly& assembly, LinearSolver solver = LinearSolver::automatic);

  /// Backward Euler with the voltage sampled at the new time.
  Vec step_backward_euler(const Vec& a, const Vec& v_next, double dt,
                          StepDiagnostics* diag = nullptr) const;
  /// Implicit midpoint with DH evaluated at (a + a_next) / 2.
  Vec step_implicit_midpoint(const Vec& a, const Vec& v_mid, double dt,
                             StepDiagnostics* diag = nullptr) const;
  /// Winding current consistent with the circuit equation over one step.
  Vec current(const Vec& a, const Vec& a_next, const Vec& v, double dt) const;

  /// Z^T DH(Z a).
  Vec reduced_gradient(const Vec& a) const;
  /// Z^T Hess(Z a) Z.
  Mat reduced_hessian(const Vec& a) const;

  bool uses_cg() const { return cg_; }

private:
  Vec newton(const Vec& a, const Vec& v, double dt, double weight,
             StepDiagnostics* diag) const;
  Vec solve(const Mat& J, const Vec& rhs) const;

  const Assembly* asm_;
  Mat M0_; // Z^T (M_sigma + X R^-1 X^T) Z
  bool cg_ = false;
};

/// Samples at t_k = k dt, k = 0..N. Column k of i and v holds the current
/// and voltage of the step ending at t_k (the voltage sample the integrator
/// used); column 0 holds v(0) and a zero current.
struct Trajectory {
  Integrator integrator = Integrator::backward_euler;
  double dt = 0.0;
  double newton_tol = 0.0;
  std::vector<double> t;
  Mat a; // d x (N+1)
  Mat A; // edges x (N+1)
  Mat i; // m x (N+1)
  Mat v; // m x (N+1)
  Vec energy;
  Vec sigma_rate; // ||(A_k - A_{k-1}) / dt||^2 in the M_sigma seminorm
  std::vector<int> newton_iterations;
  Vec residual;
  /// Relative M_e distance between the scenario A0 and its gauge projection.
  double initial_projection_defect = 0.0;

  int steps() const { return int(t.size()) - 1; }
};

/// Gauge coordinates of the M_e-orthogonal projection of an edge vector.
Vec project_to_gauge(const Assembly& assembly, const Vec& A);

Trajectory simulate(const Assembly& assembly,
                    LinearSolver solver = LinearSolver::automatic);
/// Runs from given gauge coordinates instead of the scenario's A0.
Trajectory simulate_from(const Assembly& assembly, const Vec& a0,
                         LinearSolver solver = LinearSolver::automatic);

std::string format_double(double x);

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);

/// Little-endian state dump: "MQSSTATE", u32 version, u64 edges, u64 m,
/// u64 samples, then times, A (sample-major), i (sample-major) as f64.
void write_state_dump(const Trajectory& traj, const std::filesystem::path& path);

struct StateDump {
  std::vector<double> t;
  Mat A; // edges x samples
  Mat i; // m x samples
};

StateDump read_state_dump(const std::filesystem::path& path);

} // namespace mqs
