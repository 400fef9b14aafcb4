#include "mqs/energy.hpp"

#include <cmath>

#include "mqs/error.hpp"

namespace mqs {

double theta(const ReluctivityModel& model, double rho) {
  if (rho < 0.0) throw Error("theta: negative argument");
  return std::visit(
      [rho](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ConstantReluctivity>) {
          return 0.5 * m.nu * rho;
        } else {
          const double t2 = m.tau * m.tau;
          return 0.5 * m.nu_min * rho +
                 0.5 * (m.nu_max - m.nu_min) * (rho - t2 * std::log1p(rho / t2));
        }
      },
      model);
}

MagneticEnergy::MagneticEnergy(const DiscreteComplex& complex,
                               const Reluctivity& reluctivity)
    : curl_(complex.curl),
      face_cells_(complex.face_cells),
      conducting_(complex.cell_conducting),
      conducting_model_(reluctivity.conducting),
      insulating_model_(reluctivity.insulating),
      h_(complex.grid.h),
      linear_(reluctivity.is_linear()) {}

template <class F>
Vec MagneticEnergy::face_sum(const Vec& curlA, F&& f) const {
  Vec out(curlA.size());
  for (std::int64_t k = 0; k < curlA.size(); ++k) {
    const double w = curlA(k) / h_;
    double acc = 0.0;
    for (auto c : face_cells_[k]) {
      if (c < 0) continue;
      acc += f(conducting_[c] ? conducting_model_ : insulating_model_, w);
    }
    out(k) = acc;
  }
  return out;
}

double MagneticEnergy::energy(const Vec& A) const {
  const Vec ca = curl_ * A;
  const double h3 = h_ * h_ * h_;
  const Vec e = face_sum(ca, [](const ReluctivityModel& m, double w) {
    return theta(m, w * w);
  });
  return 0.5 * h3 * e.sum();
}

Vec MagneticEnergy::secant_weights(const Vec& A) const {
  const Vec ca = curl_ * A;
  return 0.5 * h_ * face_sum(ca, [](const ReluctivityModel& m, double w) {
           return reluctivity(m, std::abs(w));
         });
}

Vec MagneticEnergy::tangent_weights(const Vec& A) const {
  const Vec ca = curl_ * A;
  return 0.5 * h_ * face_sum(ca, [](const ReluctivityModel& m, double w) {
           return field_derivative(m, std::abs(w));
         });
}

Vec MagneticEnergy::gradient(const Vec& A) const {
  const Vec ca = curl_ * A;
  const Vec w = 0.5 * h_ * face_sum(ca, [](const ReluctivityModel& m, double z) {
                  return reluctivity(m, std::abs(z));
                });
  return curl_.transpose() * w.cwiseProduct(ca);
}

Sparse MagneticEnergy::hessian(const Vec& A) const {
  const Vec w = tangent_weights(A);
  return Sparse(curl_.transpose() * w.asDiagonal() * curl_);
}

double MagneticEnergy::max_flux_density(const Vec& A) const {
  if (curl_.rows() == 0) return 0.0;
  return (curl_ * A).cwiseAbs().maxCoeff() / h_;
}

} // namespace mqs
