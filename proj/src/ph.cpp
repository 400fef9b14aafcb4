#include "mqs/ph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "mqs/error.hpp"

namespace mqs {

double pairing(const Flows& f, const Efforts& e) {
  return f.f_A.dot(e.J) + f.J_int.dot(e.E) + f.v_w.dot(e.i_w) + f.i.dot(e.v);
}

Flows DiracOperator::apply(const Efforts& e) const {
  Flows f;
  f.f_A = e.E;
  f.J_int = -e.J + X_ * e.i_w;
  f.v_w = -(X_.transpose() * e.E) - e.v;
  f.i = e.i_w;
  return f;
}

Sparse DiracOperator::matrix() const {
  const auto n = edges();
  const auto m = ports();
  // Effort layout: J [0,n), E [n,2n), i_w [2n,2n+m), v [2n+m,2n+2m).
  std::vector<Eigen::Triplet<double>> t;
  for (std::int64_t e = 0; e < n; ++e) {
    t.emplace_back(e, n + e, 1.0);
    t.emplace_back(n + e, e, -1.0);
    for (std::int64_t k = 0; k < m; ++k) {
      if (X_(e, k) == 0.0) continue;
      t.emplace_back(n + e, 2 * n + k, X_(e, k));
      t.emplace_back(2 * n + k, n + e, -X_(e, k));
    }
  }
  for (std::int64_t k = 0; k < m; ++k) {
    t.emplace_back(2 * n + k, 2 * n + m + k, -1.0);
    t.emplace_back(2 * n + m + k, 2 * n + k, 1.0);
  }
  Sparse D(2 * n + 2 * m, 2 * n + 2 * m);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

std::string DiracOperator::describe() const {
  std::ostringstream os;
  os << "efforts (J, E, i_w, v) -> flows (f_A, J_int, v_w, i)\n"
     << "[ 0    I    0    0 ]   edges " << edges() << "\n"
     << "[ -I   0    X    0 ]   ports " << ports() << "\n"
     << "[ 0   -X^T  0   -I ]\n"
     << "[ 0    0    I    0 ]\n";
  return os.str();
}

Efforts DiracOperator::zero_efforts() const {
  return {Vec::Zero(edges()), Vec::Zero(edges()), Vec::Zero(ports()), Vec::Zero(ports())};
}

Efforts DiracOperator::random_efforts(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  auto draw = [&](std::int64_t k) {
    Vec x(k);
    for (std::int64_t r = 0; r < k; ++r) x(r) = n01(rng);
    return x;
  };
  Efforts e;
  e.J = draw(edges());
  e.E = draw(edges());
  e.i_w = draw(ports());
  e.v = draw(ports());
  return e;
}

double skew_defect(const DiracOperator& D) {
  const Sparse M = D.matrix();
  const Sparse sum = M + Sparse(M.transpose());
  double scale = 0.0, defect = 0.0;
  for (int k = 0; k < M.outerSize(); ++k)
    for (Sparse::InnerIterator it(M, k); it; ++it) scale = std::max(scale, std::abs(it.value()));
  for (int k = 0; k < sum.outerSize(); ++k)
    for (Sparse::InnerIterator it(sum, k); it; ++it) defect = std::max(defect, std::abs(it.value()));
  return scale > 0.0 ? defect / scale : 0.0;
}

namespace {

double norm(const Flows& f) {
  return std::sqrt(f.f_A.squaredNorm() + f.J_int.squaredNorm() + f.v_w.squaredNorm() +
                   f.i.squaredNorm());
}

double norm(const Efforts& e) {
  return std::sqrt(e.J.squaredNorm() + e.E.squaredNorm() + e.i_w.squaredNorm() +
                   e.v.squaredNorm());
}

} // namespace

DiracSampleCheck check_dirac_samples(const DiracOperator& D, int samples,
                                     std::uint64_t seed) {
  DiracSampleCheck out;
  out.samples = samples;
  out.min_nonmember_pairing = std::numeric_limits<double>::infinity();
  std::mt19937_64 seeds(seed);
  for (int s = 0; s < samples; ++s) {
    const Efforts e = D.random_efforts(seeds());
    const Efforts eh = D.random_efforts(seeds());
    const Flows f = D.apply(e);
    const Flows fh = D.apply(eh);
    const double p = pairing(f, eh) + pairing(fh, e);
    const double scale = norm(f) * norm(eh) + norm(fh) * norm(e);
    out.max_member_pairing = std::max(out.max_member_pairing, std::abs(p) / scale);

    // Perturb the flow; the perturbation read as an effort is a witness.
    const Efforts delta = D.random_efforts(seeds());
    Flows bad = f;
    bad.f_A += delta.J;
    bad.J_int += delta.E;
    bad.v_w += delta.i_w;
    bad.i += delta.v;
    const Flows fw = D.apply(delta);
    const double q = pairing(bad, delta) + pairing(fw, e);
    const double qs = norm(bad) * norm(delta) + norm(fw) * norm(e);
    out.min_nonmember_pairing = std::min(out.min_nonmember_pairing, std::abs(q) / qs);
  }
  if (samples == 0) out.min_nonmember_pairing = 0.0;
  return out;
}

std::pair<Vec, Vec> ResistiveRelation::apply(const Vec& E, const Vec& i_w) const {
  return {-Ms_.cwiseProduct(E), -(R_ * i_w)};
}

double ResistiveRelation::check(const Vec& E, const Vec& i_w, const Vec& J_int,
                                const Vec& v_w, double tol) const {
  const auto [Jr, vr] = apply(E, i_w);
  const double res = (J_int - Jr).norm() + (v_w - vr).norm();
  const double scale = Jr.norm() + vr.norm();
  if (res > tol * scale)
    throw Error("port is not in the resistive relation (residual " +
                std::to_string(res) + ")");
  return J_int.dot(E) + v_w.dot(i_w);
}

ResistiveSampleCheck check_resistive_samples(const ResistiveRelation& rel,
                                             std::int64_t edges, int m, int samples,
                                             std::uint64_t seed) {
  ResistiveSampleCheck out;
  out.samples = samples;
  out.max_value = -std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (int s = 0; s < samples; ++s) {
    Vec E(edges), iw(m);
    for (auto& x : E) x = n01(rng);
    for (auto& x : iw) x = n01(rng);
    const auto [Jint, vw] = rel.apply(E, iw);
    const double value = rel.check(E, iw, Jint, vw);
    // Elementwise oracle: -sum_e Ms_e E_e^2 - sum_jk i_j R_jk i_k.
    double oracle = 0.0;
    for (std::int64_t e = 0; e < edges; ++e) oracle += Jint(e) * E(e);
    for (int j = 0; j < m; ++j) oracle += vw(j) * iw(j);
    out.max_oracle_gap =
        std::max(out.max_oracle_gap, std::abs(value - oracle) / std::max(1.0, std::abs(oracle)));
    out.max_value = std::max(out.max_value, value);
    if (value > 0.0) ++out.violations;
  }
  return out;
}

PhResidualReport ph_residual(const Assembly& as, const Trajectory& tr) {
  PhResidualReport rep;
  const int N = tr.steps();
  const auto& Z = as.gauge.Z;
  const auto& R = as.scenario.circuit.R;
  rep.energy_scale = tr.energy.size() ? tr.energy.cwiseAbs().maxCoeff() : 0.0;
  rep.min_ham_slack = N > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  rep.steps.reserve(N);
  for (int k = 1; k <= N; ++k) {
    const Vec dA = tr.A.col(k) - tr.A.col(k - 1);
    const Vec Efield = -dA / tr.dt;
    const Vec point = tr.integrator == Integrator::backward_euler
                          ? Vec(tr.A.col(k))
                          : Vec(0.5 * (tr.A.col(k) + tr.A.col(k - 1)));
    const Vec J = as.energy.gradient(point);
    const Vec J_int = -as.complex.sigma_mass.cwiseProduct(Efield);
    const Vec i = tr.i.col(k);
    const Vec v = tr.v.col(k);

    PhStepResidual st;
    const Vec ZJint = Z.transpose() * J_int;
    const Vec ZJ = Z.transpose() * J;
    const Vec ZXi = Z.transpose() * (as.X * i);
    const double s1 = ZJint.norm() + ZJ.norm() + ZXi.norm();
    const double r1 = (ZJint + ZJ - ZXi).norm();
    st.inclusion_field = s1 > 0.0 ? r1 / s1 : r1;

    const Vec Ri = R * i;
    const Vec XE = as.X.transpose() * Efield;
    const double s2 = Ri.norm() + XE.norm() + v.norm();
    const double r2 = (-Ri + XE + v).norm();
    st.inclusion_circuit = s2 > 0.0 ? r2 / s2 : r2;

    st.ham_slack = tr.dt * i.dot(v) - (tr.energy(k) - tr.energy(k - 1));
    rep.max_inclusion = std::max({rep.max_inclusion, st.inclusion_field, st.inclusion_circuit});
    rep.min_ham_slack = std::min(rep.min_ham_slack, st.ham_slack);
    rep.steps.push_back(st);
  }
  return rep;
}

} // namespace mqs
