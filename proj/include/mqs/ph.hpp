#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqs/simulate.hpp"

namespace mqs {

/// Efforts (J, Efield, i_w, v) of the Dirac structure.
struct Efforts {
  Vec J;     // edge covector
  Vec E;     // edge vector
  Vec i_w;   // m
  Vec v;     // m
};

/// Flows (f_A, J_int, v_w, i) of the Dirac structure.
struct Flows {
  Vec f_A;
  Vec J_int;
  Vec v_w;
  Vec i;
};

/// Blockwise dot product of a flow with an effort.
double pairing(const Flows& f, const Efforts& e);

/// Skew block operator (J, E, i_w, v) -> (E, -J + X i_w, -X^T E - v, i_w).
class DiracOperator {
public:
  explicit DiracOperator(Mat X) : X_(std::move(X)) {}

  Flows apply(const Efforts& e) const;
  /// Matrix acting on the stacked effort vector.
  Sparse matrix() const;
  std::int64_t edges() const { return X_.rows(); }
  std::int64_t ports() const { return X_.cols(); }
  /// Human readable block layout of the assembled operator.
  std::string describe() const;

  Efforts zero_efforts() const;
  Efforts random_efforts(std::uint64_t seed) const;

private:
  Mat X_;
};

/// max |D + D^T| / max |D| over all basis pairs.
double skew_defect(const DiracOperator& D);

struct DiracSampleCheck {
  int samples = 0;
  /// Largest |<f, e^> + <f^, e>| relative to the product of norms, members.
  double max_member_pairing = 0.0;
  /// Smallest relative pairing produced by a perturbed non-member.
  double min_nonmember_pairing = 0.0;
};

/// Checks the Dirac property on seeded random samples: pairs of members
/// annihilate the pairing, a perturbed flow is detected as a non-member.
DiracSampleCheck check_dirac_samples(const DiracOperator& D, int samples,
                                     std::uint64_t seed);

/// Ohmic losses in the conductor and the winding resistance.
class ResistiveRelation {
public:
  ResistiveRelation(Vec sigma_mass, Mat R) : Ms_(std::move(sigma_mass)), R_(std::move(R)) {}

  /// (J_int, v_w) = (-M_sigma E, -R i_w).
  std::pair<Vec, Vec> apply(const Vec& E, const Vec& i_w) const;
  /// <J_int, E> + <v_w, i_w> for a port in the relation; throws with the
  /// residual if the port is not in the relation.
  double check(const Vec& E, const Vec& i_w, const Vec& J_int, const Vec& v_w,
               double tol = 1e-12) const;

private:
  Vec Ms_;
  Mat R_;
};

struct ResistiveSampleCheck {
  int samples = 0;
  int violations = 0;
  double max_value = 0.0;     // largest (least negative) dissipation
  double max_oracle_gap = 0.0; // vs elementwise summation
};

ResistiveSampleCheck check_resistive_samples(const ResistiveRelation& rel,
                                             std::int64_t edges, int m,
                                             int samples, std::uint64_t seed);

struct PhStepResidual {
  double inclusion_field = 0.0;   // |Z^T(J_int + J - X i)| relative
  double inclusion_circuit = 0.0; // |R i - X^T Efield... | relative
  double ham_slack = 0.0;         // dt <i, v> - (H_k - H_{k-1})
};

struct PhResidualReport {
  std::vector<PhStepResidual> steps;
  double max_inclusion = 0.0;
  double min_ham_slack = 0.0;
  double energy_scale = 0.0;
};

/// Reconstructs the port variables of every step by backward differences and
/// evaluates both inclusions and the Hamiltonian energy inequality.
PhResidualReport ph_residual(const Assembly& assembly, const Trajectory& traj);

} // namespace mqs
