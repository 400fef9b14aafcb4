#pragma once

#include <array>
#include <vector>

#include "mqs/mimetic.hpp"
#include "mqs/scenario.hpp"

namespace mqs {

/// Energy density potential: theta(rho) = 1/2 int_0^rho nu(sqrt(s)) ds.
double theta(const ReluctivityModel& model, double rho);

/// Discrete magnetic energy E(A) and its derivatives.
///
/// Each face carries the flux density w_f = (Ccurl A)_f / h and contributes
/// theta_c(w_f^2) h^3 / 2 for every adjacent cell c, so that E is convex and
/// DH = grad E exactly.
class MagneticEnergy {
public:
  MagneticEnergy() = default;
  MagneticEnergy(const DiscreteComplex& complex, const Reluctivity& reluctivity);

  double operator()(const Vec& A) const { return energy(A); }
  double energy(const Vec& A) const;
  Vec gradient(const Vec& A) const;
  /// Face weights of the gradient: DH = Ccurl^T diag(weights) Ccurl A.
  Vec secant_weights(const Vec& A) const;
  /// Face weights of the Hessian: Ccurl^T diag(weights) Ccurl.
  Vec tangent_weights(const Vec& A) const;
  Sparse hessian(const Vec& A) const;
  /// Largest |w_f| over all faces.
  double max_flux_density(const Vec& A) const;

  const Sparse& curl() const { return curl_; }
  bool linear() const { return linear_; }

private:
  template <class F> Vec face_sum(const Vec& curlA, F&& f) const;

  Sparse curl_;
  std::vector<std::array<std::int64_t, 2>> face_cells_;
  std::vector<std::uint8_t> conducting_;
  ReluctivityModel conducting_model_;
  ReluctivityModel insulating_model_;
  double h_ = 1.0;
  bool linear_ = true;
};

} // namespace mqs
