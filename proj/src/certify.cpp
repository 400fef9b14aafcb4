#include "mqs/certify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "mqs/error.hpp"

namespace mqs {

using nlohmann::json;

namespace {

std::string indexed(const std::string& base, int k) {
  return base + "[" + std::to_string(k) + "]";
}

std::string eps_tag(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps);
  return buf;
}

Mat inverse_sqrt(const Mat& R) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(R);
  return eig.eigenvectors() * eig.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

double sqrt_pos(double x) { return std::sqrt(std::max(0.0, x)); }

} // namespace

// ---------------------------------------------------------------------------
// AuditReport

const AuditRow& AuditReport::add(std::string id, double lhs, double rhs, double scale) {
  return add_abs(std::move(id), lhs, rhs, tol_.abs * std::abs(scale));
}

const AuditRow& AuditReport::add_abs(std::string id, double lhs, double rhs, double abs_tol) {
  AuditRow row;
  row.id = std::move(id);
  row.lhs = lhs;
  row.rhs = rhs;
  row.margin = rhs - lhs;
  row.abs_tol = abs_tol;
  row.pass = row.margin >= -abs_tol - tol_.rel * std::abs(rhs);
  rows_.push_back(std::move(row));
  return rows_.back();
}

void AuditReport::merge(const AuditReport& other) {
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
  for (const auto& [k, v] : other.meta.items()) meta[k] = v;
}

const AuditRow* AuditReport::find(const std::string& id) const {
  for (const auto& r : rows_)
    if (r.id == id) return &r;
  return nullptr;
}

int AuditReport::failures() const {
  return int(std::count_if(rows_.begin(), rows_.end(), [](const AuditRow& r) { return !r.pass; }));
}

double AuditReport::min_margin(const std::string& prefix) const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& r : rows_)
    if (r.id.rfind(prefix, 0) == 0) m = std::min(m, r.margin);
  return m;
}

// ---------------------------------------------------------------------------
// Constants

double compute_L_C(const XInner& inner, double sigma_c) {
  if (inner.S.rows() == 0) return 0.0;
  const Mat N = inner.sigma / sigma_c + inner.curl;
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (N + N.transpose()), Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues()(0);
  if (!(lo > 0.0))
    throw NotPositiveDefinite("L_C: sigma and curl seminorms do not control the L2 "
                              "norm on the gauge space");
  return 1.0 / lo;
}

Mat complement_basis(const XInner& inner, const CurlFreeProjector& pr) {
  const auto d = inner.S.rows();
  if (pr.rank == 0) return Mat::Identity(d, d);
  // range(I - P) = ker(Q^T S) = orthogonal complement of range(S Q).
  const Mat SQ = inner.S * pr.range;
  Eigen::HouseholderQR<Mat> qr(SQ);
  const Mat Q = qr.householderQ() * Mat::Identity(d, d);
  return Q.rightCols(d - pr.rank);
}

double compute_L_1(const XInner& inner, const CurlFreeProjector& pr) {
  const Mat Qc = complement_basis(inner, pr);
  if (Qc.cols() == 0) return 0.0;
  const Mat K = Qc.transpose() * inner.curl * Qc;
  Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (K + K.transpose()), Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues()(0);
  if (!(lo > 0.0))
    throw NotPositiveDefinite("L_1: curl seminorm degenerate on range(I - P)");
  return 1.0 / std::sqrt(lo);
}

double curl_spectral_gap(const XInner& inner) {
  if (inner.curl.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> eig(inner.curl, Eigen::EigenvaluesOnly);
  const Vec& lam = eig.eigenvalues();
  const double thr = 1e-10 * lam.cwiseAbs().maxCoeff();
  for (Eigen::Index k = 0; k < lam.size(); ++k)
    if (lam(k) > thr) return lam(k);
  return 0.0;
}

ConstantsReport compute_constants(const Assembly& as, const CurlFreeProjector& pr) {
  const auto& sc = as.scenario;
  ConstantsReport c;
  c.sigma_c = sc.sigma_c;
  c.m_nu = sc.reluctivity.constants.m_nu;
  c.L_nu = sc.reluctivity.constants.L_nu;
  c.zeta_max = sc.reluctivity.constants.zeta_max;
  c.lambda_min_R = sc.circuit.lambda_min();
  const Mat Rih = inverse_sqrt(sc.circuit.R);
  const Mat gram = sc.winding.columns.transpose() * as.complex.edge_mass.asDiagonal() *
                   sc.winding.columns;
  const Mat scaled = Rih * gram * Rih;
  Eigen::SelfAdjointEigenSolver<Mat> eg(0.5 * (scaled + scaled.transpose()),
                                        Eigen::EigenvaluesOnly);
  c.winding_norm = sqrt_pos(eg.eigenvalues().maxCoeff());
  c.gamma = c.sigma_c + c.winding_norm * c.winding_norm;
  c.L_C = compute_L_C(as.inner, c.sigma_c);
  c.L_1 = compute_L_1(as.inner, pr);
  c.omega = c.m_nu * c.m_nu / (c.gamma * c.L_nu);
  c.T_inverse_bound = c.L_C / c.sigma_c;
  if (pr.rank > 0) {
    const Mat T = pr.range.transpose() * (as.inner.sigma + as.inner.coupling) * pr.range;
    Eigen::SelfAdjointEigenSolver<Mat> et(0.5 * (T + T.transpose()), Eigen::EigenvaluesOnly);
    c.T_inverse_norm = 1.0 / et.eigenvalues()(0);
    Eigen::SelfAdjointEigenSolver<Mat> ep(pr.P.transpose() * pr.P, Eigen::EigenvaluesOnly);
    c.projector_norm = sqrt_pos(ep.eigenvalues().maxCoeff());
  }
  c.projector_norm_bound = std::sqrt(c.gamma * c.L_C / c.sigma_c);
  c.spectral_gap = curl_spectral_gap(as.inner);
  c.decay_caveat = c.spectral_gap < 1.0;
  c.gauge_dim = as.gauge.d;
  c.constrained_dim = as.gauge.constrained_dim;
  c.projector_rank = pr.rank;
  c.cavities = sc.regions.cavity_count();
  c.interface_nodes = sc.regions.interface_node_count();
  return c;
}

json to_json(const ConstantsReport& c) {
  return {{"sigma_c", c.sigma_c},
          {"m_nu", c.m_nu},
          {"L_nu", c.L_nu},
          {"zeta_max", c.zeta_max},
          {"lambda_min_R", c.lambda_min_R},
          {"winding_norm", c.winding_norm},
          {"gamma", c.gamma},
          {"L_C", c.L_C},
          {"L_1", c.L_1},
          {"omega", c.omega},
          {"T_inverse_norm", c.T_inverse_norm},
          {"T_inverse_bound", c.T_inverse_bound},
          {"projector_norm", c.projector_norm},
          {"projector_norm_bound", c.projector_norm_bound},
          {"curl_spectral_gap", c.spectral_gap},
          {"decay_caveat", c.decay_caveat},
          {"gauge_dim", c.gauge_dim},
          {"constrained_dim", c.constrained_dim},
          {"projector_rank", c.projector_rank},
          {"cavities", c.cavities},
          {"interface_nodes", c.interface_nodes}};
}

AuditReport audit_constants(const Assembly& as, const CurlFreeProjector& pr,
                            const ConstantsReport& c, Tolerances tol) {
  AuditReport rep(tol);
  const Mat& P = pr.P;
  const Mat& S = as.inner.S;
  const double pscale = std::max(1.0, P.cwiseAbs().maxCoeff());
  const double sscale = S.cwiseAbs().maxCoeff() * pscale;
  // Identities are checked at a fixed 1e-12 relative level.
  Tolerances strict{0.0, 0.0};
  AuditReport id(strict);
  id.add_abs("projector.idempotent", (P * P - P).cwiseAbs().maxCoeff(), 0.0, 1e-12 * pscale);
  id.add_abs("projector.self_adjoint", (S * P - P.transpose() * S).cwiseAbs().maxCoeff(), 0.0,
             1e-12 * sscale);
  const double cscale = std::max(as.CZ.cwiseAbs().maxCoeff() * pscale, 1e-300);
  id.add_abs("projector.curl_free", (as.CZ * P).cwiseAbs().maxCoeff(), 0.0, 1e-12 * cscale);
  rep.merge(id);
  rep.add("constants.T_inverse", c.T_inverse_norm, c.T_inverse_bound, c.T_inverse_bound);
  rep.add("constants.projector_norm", c.projector_norm, c.projector_norm_bound,
          c.projector_norm_bound);
  rep.add("constants.gamma_ge_sigma", c.sigma_c, c.gamma, c.gamma);
  rep.add("constants.omega_le_m_over_gamma", c.omega, c.m_nu / c.gamma, c.m_nu / c.gamma);
  rep.add_abs("constants.omega_positive", 0.0, c.omega, 0.0);
  rep.meta["decay_caveat"] = c.decay_caveat;
  return rep;
}

// ---------------------------------------------------------------------------
// Trajectory audits

double energy_scale(const Assembly& as, const Trajectory& tr) {
  double e = tr.energy.size() ? tr.energy.cwiseAbs().maxCoeff() : 0.0;
  double flow = 0.0;
  const auto& R = as.scenario.circuit.R;
  for (int k = 1; k <= tr.steps(); ++k) {
    const Vec i = tr.i.col(k);
    flow += tr.dt * (std::abs(i.dot(tr.v.col(k))) + i.dot(R * i) + tr.sigma_rate(k));
  }
  return std::max(e, flow);
}

AuditReport audit_energy_balance(const Assembly& as, const Trajectory& tr,
                                 const ConstantsReport& c, Tolerances tol) {
  AuditReport rep(tol);
  const auto& R = as.scenario.circuit.R;
  const double scale = energy_scale(as, tr);
  const double step_tol = std::max(tol.abs, 10.0 * tr.newton_tol) * scale;
  double lhs_sum = 0.0, rhs_sum = 0.0;
  for (int k = 1; k <= tr.steps(); ++k) {
    const Vec i = tr.i.col(k);
    const double lhs = tr.energy(k) - tr.energy(k - 1);
    const double rhs = tr.dt * (i.dot(tr.v.col(k)) - tr.sigma_rate(k) - i.dot(R * i));
    rep.add_abs(indexed("passivity.step", k), lhs, rhs, step_tol);
    lhs_sum += lhs;
    rhs_sum += rhs;

    const Vec dA = tr.A.col(k) - tr.A.col(k - 1);
    const Vec point = tr.integrator == Integrator::backward_euler
                          ? Vec(tr.A.col(k))
                          : Vec(0.5 * (tr.A.col(k) + tr.A.col(k - 1)));
    const double chain = std::abs(lhs - as.energy.gradient(point).dot(dA));
    rep.add_abs(indexed("chain_rule.step", k), chain,
                0.5 * c.L_nu * as.complex.curl_norm_sq(dA), step_tol);
  }
  rep.add_abs("passivity.cumulative", lhs_sum, rhs_sum, step_tol * std::max(1, tr.steps()));
  rep.meta["energy_scale"] = scale;
  return rep;
}

AuditReport audit_output_bounds(const Assembly& as, const Trajectory& tr,
                                const ConstantsReport& c, double eps, Tolerances tol) {
  if (!(eps > 0.0 && eps < 2.0)) throw Error("output bounds: eps must lie in (0, 2)");
  AuditReport rep(tol);
  const auto& R = as.scenario.circuit.R;
  const Mat& Rinv = as.R_inv;
  double isum = 0.0, vsum = 0.0, iplain = 0.0, vplain = 0.0;
  for (int k = 1; k <= tr.steps(); ++k) {
    const Vec i = tr.i.col(k);
    const Vec v = tr.v.col(k);
    isum += tr.dt * i.dot(R * i);
    vsum += tr.dt * v.dot(Rinv * v);
    iplain += tr.dt * i.squaredNorm();
    vplain += tr.dt * v.squaredNorm();
  }
  const double E0 = tr.energy(0);
  const double curl0 = sqrt_pos(as.complex.curl_norm_sq(tr.A.col(0)));
  const double lam = c.lambda_min_R;
  const double escale = energy_scale(as, tr);
  const double nscale = std::sqrt(escale);
  const double ee = eps * (2.0 - eps);
  const std::string tag = "[eps=" + eps_tag(eps) + "]";

  rep.add("output.est1" + tag, isum, 2.0 / (2.0 - eps) * E0 + vsum / ee, escale);
  rep.add("output.est2" + tag, std::sqrt(isum),
          std::sqrt(c.L_nu / (2.0 - eps)) * curl0 + std::sqrt(vsum / ee), nscale);
  rep.add("output.lambda_min.est1" + tag, iplain,
          2.0 / ((2.0 - eps) * lam) * E0 + vplain / (ee * lam * lam), escale / lam);
  rep.add("output.lambda_min.est2" + tag, std::sqrt(iplain),
          std::sqrt(c.L_nu / ((2.0 - eps) * lam)) * curl0 + std::sqrt(vplain / ee) / lam,
          nscale / std::sqrt(lam));
  const bool zero_init = tr.a.col(0).squaredNorm() == 0.0;
  if (zero_init) {
    rep.add("output.est3", std::sqrt(isum), std::sqrt(vsum), nscale);
    rep.add("output.est3_lambda_min", std::sqrt(iplain), std::sqrt(vplain) / lam,
            nscale / std::sqrt(lam));
  }
  rep.meta["output_zero_initial_value"] = zero_init;
  return rep;
}

AuditReport audit_state_bounds(const Assembly& as, const Trajectory& tr,
                               const ConstantsReport& c, const CurlFreeProjector& pr,
                               Tolerances tol) {
  AuditReport rep(tol);
  const Mat& Rinv = as.R_inv;
  const Mat Rih = inverse_sqrt(as.scenario.circuit.R);
  const double escale = energy_scale(as, tr);
  const double E0 = tr.energy(0);
  const double curl0 = sqrt_pos(as.complex.curl_norm_sq(tr.A.col(0)));
  const double norm0 = tr.a.col(0).norm();
  double norm_scale = 0.0;
  for (int k = 0; k <= tr.steps(); ++k) norm_scale = std::max(norm_scale, tr.a.col(k).norm());
  const double curl_scale = std::sqrt(escale / c.m_nu);
  const double pfac = std::sqrt(c.gamma * c.L_C / c.sigma_c);
  const double lratio = std::sqrt(c.L_nu / c.m_nu);
  const bool div_free = as.scenario.winding.div_free;
  const bool free_input = tr.v.cwiseAbs().maxCoeff() == 0.0;
  const Vec Pa0 = pr.P * tr.a.col(0);
  const double freeze_tol = 1e-10 * std::max(norm0, norm_scale);

  double vsum = 0.0;
  Vec vint = Vec::Zero(tr.v.rows());
  for (int k = 1; k <= tr.steps(); ++k) {
    const Vec v = tr.v.col(k);
    vsum += tr.dt * v.dot(Rinv * v);
    vint += tr.dt * v;
    const double Ek = tr.energy(k);
    rep.add(indexed("state.energy", k), Ek, E0 + 0.25 * vsum, escale);
    const double curlk = sqrt_pos(as.complex.curl_norm_sq(tr.A.col(k)));
    rep.add(indexed("state.curl", k), curlk,
            lratio * curl0 + std::sqrt(vsum / (2.0 * c.m_nu)), curl_scale);
    const double normk = tr.a.col(k).norm();
    const double common = c.L_1 * lratio * curl0 + c.L_1 * std::sqrt(vsum / (2.0 * c.m_nu));
    rep.add(indexed("state.l2", k), normk,
            common + pfac * (norm0 + c.L_C / c.sigma_c * c.winding_norm * (Rih * vint).norm()),
            norm_scale);
    if (div_free) {
      rep.add(indexed("state.l2_div_free", k), normk, pfac * norm0 + common, norm_scale);
      rep.add_abs(indexed("state.freeze", k), (pr.P * tr.a.col(k) - Pa0).norm(), 0.0, freeze_tol);
    }
    if (free_input)
      rep.add(indexed("state.monotone", k), Ek, tr.energy(k - 1), escale);
  }
  rep.meta["div_free_winding"] = div_free;
  rep.meta["zero_input"] = free_input;
  return rep;
}

std::optional<double> fit_decay_rate(const std::vector<double>& t, const Vec& energy) {
  if (energy.size() == 0 || !(energy(0) > 0.0)) return std::nullopt;
  const double floor = 1e-13 * energy(0);
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (Eigen::Index k = 0; k < energy.size(); ++k) {
    if (!(energy(k) > floor)) continue;
    const double x = t[std::size_t(k)];
    const double y = std::log(energy(k));
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  if (n < 2 || !(den > 0.0)) return std::nullopt;
  return -(n * sxy - sx * sy) / den;
}

AuditReport audit_decay(const Assembly& as, const Trajectory& tr, const ConstantsReport& c,
                        const CurlFreeProjector& pr, Tolerances tol) {
  if (as.scenario.input.values.cwiseAbs().maxCoeff() != 0.0)
    throw Error("decay audit: the scenario input must vanish identically");
  AuditReport rep(tol);
  const double escale = energy_scale(as, tr);
  const double E0 = tr.energy(0);
  const double curl0 = sqrt_pos(as.complex.curl_norm_sq(tr.A.col(0)));
  const double norm0 = tr.a.col(0).norm();
  double norm_scale = 0.0;
  for (int k = 0; k <= tr.steps(); ++k) norm_scale = std::max(norm_scale, tr.a.col(k).norm());
  const double curl_scale = std::sqrt(escale / c.m_nu);
  const double pfac = std::sqrt(c.gamma * c.L_C / c.sigma_c);
  const double lratio = std::sqrt(c.L_nu / c.m_nu);
  const Vec a0 = tr.a.col(0);
  const Vec Pa0 = pr.P * a0;
  const double s0 = std::sqrt(a0.dot(as.inner.S * a0));
  const bool orth = std::sqrt(Pa0.dot(as.inner.S * Pa0)) <= 1e-10 * s0;

  for (int k = 1; k <= tr.steps(); ++k) {
    const double t = tr.t[std::size_t(k)];
    const double decay = std::exp(-c.omega * t);
    rep.add(indexed("decay.energy", k), tr.energy(k), decay * decay * E0, escale);
    const double curlk = sqrt_pos(as.complex.curl_norm_sq(tr.A.col(k)));
    rep.add(indexed("decay.curl", k), curlk, lratio * decay * curl0, curl_scale);
    const double normk = tr.a.col(k).norm();
    const double tail = c.L_1 * lratio * decay * curl0;
    rep.add(indexed("decay.l2", k), normk, pfac * norm0 + tail, norm_scale);
    if (orth) rep.add(indexed("decay.l2_orth", k), normk, tail, norm_scale);
  }
  const auto rate = fit_decay_rate(tr.t, tr.energy);
  if (rate) {
    rep.add("decay.fitted_rate", 2.0 * c.omega, *rate, 2.0 * c.omega);
    rep.meta["decay_fitted_rate"] = *rate;
    rep.meta["decay_rate_over_omega"] = *rate / c.omega;
  } else {
    rep.meta["decay_fitted_rate"] = nullptr;
    rep.meta["decay_rate_over_omega"] = nullptr;
  }
  rep.meta["decay_orthogonal_initial_value"] = orth;
  rep.meta["decay_spectral_gap_caveat"] = c.decay_caveat;
  rep.meta["decay_newton_tol_caveat"] = tr.newton_tol > 1e-12 * E0;
  return rep;
}

DecayMode slowest_decay_mode(const Assembly& as) {
  const auto d = as.gauge.d;
  if (d == 0) throw Error("decay mode: empty gauge space");
  const Vec w = as.energy.tangent_weights(Vec::Zero(as.complex.edges));
  const Mat H = as.CZ.transpose() * w.asDiagonal() * as.CZ;
  const Mat S0 = as.inner.sigma + as.inner.coupling;
  const Mat B = S0 + H;
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(0.5 * (S0 + S0.transpose()),
                                                    0.5 * (B + B.transpose()));
  if (ges.info() != Eigen::Success) throw Error("decay mode: eigensolver failed");
  const Vec& theta = ges.eigenvalues();
  Eigen::Index best = -1;
  for (Eigen::Index k = 0; k < theta.size(); ++k)
    if (theta(k) < 1.0 - 1e-9 && theta(k) > 1e-12) best = k;
  if (best < 0) throw Error("decay mode: no curl-carrying dynamic mode");
  DecayMode mode;
  mode.a = ges.eigenvectors().col(best);
  mode.a /= std::sqrt(mode.a.dot(as.inner.S * mode.a));
  mode.rate = (1.0 - theta(best)) / theta(best);
  return mode;
}

json trajectory_meta(const Assembly& as, const Trajectory& tr) {
  double max_flux = 0.0;
  int max_iter = 0;
  for (int k = 0; k <= tr.steps(); ++k) {
    max_flux = std::max(max_flux, as.energy.max_flux_density(tr.A.col(k)));
    max_iter = std::max(max_iter, tr.newton_iterations[std::size_t(k)]);
  }
  const double zmax = as.scenario.reluctivity.constants.zeta_max;
  return {{"steps", tr.steps()},
          {"dt", tr.dt},
          {"T", tr.t.back()},
          {"integrator", to_string(tr.integrator)},
          {"edges", as.complex.edges},
          {"gauge_dim", as.gauge.d},
          {"windings", tr.i.rows()},
          {"newton_tol", tr.newton_tol},
          {"max_newton_iterations", max_iter},
          {"max_newton_residual", tr.residual.size() ? tr.residual.maxCoeff() : 0.0},
          {"initial_projection_defect", tr.initial_projection_defect},
          {"initial_energy", tr.energy(0)},
          {"final_energy", tr.energy(tr.steps())},
          {"max_flux_density", max_flux},
          {"zeta_max", zmax},
          {"within_certified_range", max_flux <= zmax}};
}

json to_json(const AuditReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows())
    rows.push_back({{"id", r.id},
                    {"lhs", r.lhs},
                    {"rhs", r.rhs},
                    {"margin", r.margin},
                    {"verdict", r.pass ? "pass" : "fail"}});
  return rows;
}

} // namespace mqs
