#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mqs/simulate.hpp"

namespace mqs {

struct Tolerances {
  double abs = 1e-10; // multiplied by the row's problem scale
  double rel = 1e-8;
};

struct AuditRow {
  std::string id;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0; // rhs - lhs
  double abs_tol = 0.0;
  bool pass = true;
};

class AuditReport {
public:
  explicit AuditReport(Tolerances tol = {}) : tol_(tol) {}

  /// Row checked against abs_tol = tol.abs * scale and tol.rel * |rhs|.
  const AuditRow& add(std::string id, double lhs, double rhs, double scale);
  /// Row with an explicit absolute tolerance.
  const AuditRow& add_abs(std::string id, double lhs, double rhs, double abs_tol);
  void merge(const AuditReport& other);

  const std::vector<AuditRow>& rows() const { return rows_; }
  const AuditRow* find(const std::string& id) const;
  int failures() const;
  bool all_pass() const { return failures() == 0; }
  /// Smallest margin among rows whose id starts with prefix.
  double min_margin(const std::string& prefix) const;

  nlohmann::json meta = nlohmann::json::object();

private:
  Tolerances tol_;
  std::vector<AuditRow> rows_;
};

struct ConstantsReport {
  double sigma_c = 0.0;
  double m_nu = 0.0;
  double L_nu = 0.0;
  double zeta_max = 0.0;
  double lambda_min_R = 0.0;
  double winding_norm = 0.0; // ||chi R^{-1/2}||
  double gamma = 0.0;
  double L_C = 0.0;
  double L_1 = 0.0;
  double omega = 0.0;
  /// ||T^{-1}|| on the curl-free subspace and its bound L_C / sigma_C.
  double T_inverse_norm = 0.0;
  double T_inverse_bound = 0.0;
  /// ||P|| in the L2 norm and its bound sqrt(gamma L_C / sigma_C).
  double projector_norm = 0.0;
  double projector_norm_bound = 0.0;
  /// Smallest nonzero eigenvalue of the gauged curl-curl form.
  double spectral_gap = 0.0;
  bool decay_caveat = false;
  int gauge_dim = 0;
  int constrained_dim = 0;
  int projector_rank = 0;
  int cavities = 0;
  std::int64_t interface_nodes = 0;
};

/// Smallest L_C with |a|^2 <= L_C (|a|^2_sigma / sigma_C + |curl a|^2).
double compute_L_C(const XInner& inner, double sigma_c);
/// Smallest L_1 with |(I - P) a| <= L_1 |curl a|.
double compute_L_1(const XInner& inner, const CurlFreeProjector& projector);
/// Euclidean-orthonormal basis of range(I - P).
Mat complement_basis(const XInner& inner, const CurlFreeProjector& projector);
double curl_spectral_gap(const XInner& inner);

ConstantsReport compute_constants(const Assembly& assembly,
                                  const CurlFreeProjector& projector);
nlohmann::json to_json(const ConstantsReport& constants);

/// Structural rows: projector identities, T-inverse and projector norm
/// bounds, and the invariants of omega.
AuditReport audit_constants(const Assembly& assembly, const CurlFreeProjector& projector,
                            const ConstantsReport& constants, Tolerances tol = {});

/// Per-step and cumulative dissipation inequality, plus the two-sided
/// chain-rule defect bound.
AuditReport audit_energy_balance(const Assembly& assembly, const Trajectory& traj,
                                 const ConstantsReport& constants, Tolerances tol = {});

/// Output estimates for a Young parameter eps in (0, 2).
AuditReport audit_output_bounds(const Assembly& assembly, const Trajectory& traj,
                                const ConstantsReport& constants, double eps,
                                Tolerances tol = {});

AuditReport audit_state_bounds(const Assembly& assembly, const Trajectory& traj,
                               const ConstantsReport& constants,
                               const CurlFreeProjector& projector, Tolerances tol = {});

/// Free-dynamics rows; the scenario input must vanish identically.
AuditReport audit_decay(const Assembly& assembly, const Trajectory& traj,
                        const ConstantsReport& constants,
                        const CurlFreeProjector& projector, Tolerances tol = {});

/// Slope of the least-squares fit of log E against t, negated. Empty when
/// fewer than two samples carry energy above the roundoff floor.
std::optional<double> fit_decay_rate(const std::vector<double>& t, const Vec& energy);

/// Slowest-decaying mode of the linearized free dynamics with nonzero curl.
struct DecayMode {
  Vec a;             // gauge coordinates, unit S-norm
  double rate = 0.0; // continuous energy amplitude rate mu
};

DecayMode slowest_decay_mode(const Assembly& assembly);

/// Largest |E_k| and dissipated/supplied energy, used as the audit scale.
double energy_scale(const Assembly& assembly, const Trajectory& traj);

nlohmann::json trajectory_meta(const Assembly& assembly, const Trajectory& traj);
nlohmann::json to_json(const AuditReport& report);

} // namespace mqs
