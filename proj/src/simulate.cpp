#include "mqs/simulate.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <Eigen/IterativeLinearSolvers>

#include "mqs/error.hpp"

namespace mqs {

Assembly assemble(const Scenario& scenario) {
  Assembly as;
  as.scenario = scenario;
  as.complex = build_complex(scenario.grid, scenario.regions, scenario.sigma_c);
  as.gauge = build_gauge_basis(as.complex, scenario.regions);
  as.X = build_winding_coupling(as.complex, scenario.winding);
  const auto& R = scenario.circuit.R;
  Eigen::LLT<Mat> llt(R);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("circuit: R is not positive definite");
  as.R_inv = llt.solve(Mat::Identity(R.rows(), R.cols()));
  as.inner = build_x_inner(as.complex, as.gauge, as.X, R);
  as.CZ = as.complex.curl * as.gauge.Z;
  as.energy = MagneticEnergy(as.complex, scenario.reluctivity);
  return as;
}

Stepper::Stepper(const Assembly& assembly, LinearSolver solver) : asm_(&assembly) {
  M0_ = assembly.inner.sigma + assembly.inner.coupling;
  cg_ = solver == LinearSolver::cg ||
        (solver == LinearSolver::automatic &&
         assembly.complex.cells > dense_cell_limit);
}

Vec Stepper::reduced_gradient(const Vec& a) const {
  const Vec A = asm_->gauge.Z * a;
  const Vec w = asm_->energy.secant_weights(A);
  const Vec ca = asm_->CZ * a;
  return asm_->CZ.transpose() * w.cwiseProduct(ca);
}

Mat Stepper::reduced_hessian(const Vec& a) const {
  const Vec A = asm_->gauge.Z * a;
  const Vec w = asm_->energy.tangent_weights(A);
  return asm_->CZ.transpose() * w.asDiagonal() * asm_->CZ;
}

Vec Stepper::solve(const Mat& J, const Vec& rhs) const {
  if (cg_) {
    Eigen::ConjugateGradient<Mat, Eigen::Lower | Eigen::Upper,
                             Eigen::DiagonalPreconditioner<double>> cg;
    cg.setTolerance(1e-15);
    cg.setMaxIterations(std::max<Eigen::Index>(10 * J.rows(), 100));
    cg.compute(J);
    Vec x = cg.solve(rhs);
    if (cg.info() != Eigen::Success && cg.error() > 1e-10)
      throw SingularLinearSystem("Newton system: conjugate gradients did not converge");
    return x;
  }
  Eigen::LLT<Mat> llt(J);
  if (llt.info() != Eigen::Success)
    throw SingularLinearSystem("Newton system: projected Jacobian is not positive definite");
  return llt.solve(rhs);
}

Vec Stepper::newton(const Vec& a, const Vec& v, double dt, double weight,
                    StepDiagnostics* diag) const {
  const auto& opts = asm_->scenario.newton;
  const Vec b = dt * (asm_->inner.ZtX * (asm_->R_inv * v));
  auto eval_point = [&](const Vec& y) -> Vec {
    return weight == 1.0 ? y : Vec(weight * y + (1.0 - weight) * a);
  };
  // Scale: magnitudes of the undifferenced terms M0 y, M0 a, dt g, b. A
  // frozen curl-free part keeps M0 y large while the increment vanishes.
  const double m0a = (M0_ * a).norm();
  double scale = 0.0;
  auto residual = [&](const Vec& y, Vec& F) {
    const Vec g = dt * reduced_gradient(eval_point(y));
    F = M0_ * (y - a) + g - b;
    scale = (M0_ * y).norm() + m0a + g.norm() + b.norm();
    return F.norm();
  };

  Vec y = a;
  Vec F;
  double norm = residual(y, F);
  int it = 0;
  for (;; ++it) {
    if (norm <= opts.tol * scale) break;
    if (it >= opts.max_iterations)
      throw NewtonDiverged("Newton: no convergence within " +
                               std::to_string(opts.max_iterations) + " iterations",
                           it, scale > 0.0 ? norm / scale : norm);
    const Mat J = M0_ + weight * dt * reduced_hessian(eval_point(y));
    const Vec delta = solve(J, -F);
    double alpha = 1.0;
    bool accepted = false;
    Vec Ft;
    for (int h = 0; h <= opts.max_halvings; ++h, alpha *= 0.5) {
      const Vec yt = y + alpha * delta;
      const double saved = scale;
      const double nt = residual(yt, Ft);
      if (nt < norm) {
        y = yt;
        F = Ft;
        norm = nt;
        accepted = true;
        break;
      }
      scale = saved;
    }
    if (!accepted) {
      // Stagnation at roundoff level counts as converged: either the
      // residual or the Newton update is lost in rounding.
      const double eps = std::numeric_limits<double>::epsilon();
      if (norm <= 1e3 * eps * scale) break;
      if (delta.norm() <= 64.0 * eps * std::max(y.norm(), a.norm())) break;
      throw NewtonDiverged("Newton: line search exhausted", it + 1,
                           scale > 0.0 ? norm / scale : norm);
    }
  }
  if (diag) {
    diag->newton_iterations = it;
    diag->residual = scale > 0.0 ? norm / scale : norm;
  }
  return y;
}

Vec Stepper::step_backward_euler(const Vec& a, const Vec& v_next, double dt,
                                 StepDiagnostics* diag) const {
  return newton(a, v_next, dt, 1.0, diag);
}

Vec Stepper::step_implicit_midpoint(const Vec& a, const Vec& v_mid, double dt,
                                    StepDiagnostics* diag) const {
  return newton(a, v_mid, dt, 0.5, diag);
}

Vec Stepper::current(const Vec& a, const Vec& a_next, const Vec& v, double dt) const {
  const Vec flux_rate = asm_->inner.ZtX.transpose() * ((a_next - a) / dt);
  return asm_->R_inv * (v - flux_rate);
}

Vec project_to_gauge(const Assembly& assembly, const Vec& A) {
  return assembly.gauge.Z.transpose() * assembly.complex.edge_mass.cwiseProduct(A);
}

Trajectory simulate_from(const Assembly& assembly, const Vec& a0, LinearSolver solver) {
  const auto& sc = assembly.scenario;
  const Stepper stepper(assembly, solver);
  const int N = sc.step_count();
  const int m = sc.circuit.m;
  Trajectory tr;
  tr.integrator = sc.integrator;
  tr.dt = sc.dt;
  tr.newton_tol = sc.newton.tol;
  tr.t.resize(N + 1);
  tr.a.resize(assembly.gauge.d, N + 1);
  tr.A.resize(assembly.complex.edges, N + 1);
  tr.i = Mat::Zero(m, N + 1);
  tr.v.resize(m, N + 1);
  tr.energy.resize(N + 1);
  tr.sigma_rate = Vec::Zero(N + 1);
  tr.newton_iterations.assign(N + 1, 0);
  tr.residual = Vec::Zero(N + 1);

  tr.t[0] = 0.0;
  tr.a.col(0) = a0;
  tr.A.col(0) = assembly.gauge.Z * a0;
  tr.v.col(0) = sc.input.at(0.0);
  tr.energy(0) = assembly.energy(tr.A.col(0));

  for (int k = 1; k <= N; ++k) {
    const double t = k * sc.dt;
    tr.t[k] = t;
    const Vec a = tr.a.col(k - 1);
    StepDiagnostics diag;
    Vec v;
    Vec next;
    try {
      if (sc.integrator == Integrator::backward_euler) {
        v = sc.input.at(t);
        next = stepper.step_backward_euler(a, v, sc.dt, &diag);
      } else {
        v = sc.input.at(t - 0.5 * sc.dt);
        next = stepper.step_implicit_midpoint(a, v, sc.dt, &diag);
      }
    } catch (const NewtonDiverged& e) {
      throw NewtonDiverged("step " + std::to_string(k) + ": " + e.what(),
                           e.iterations(), e.residual());
    } catch (const Error& e) {
      throw Error("step " + std::to_string(k) + ": " + e.what());
    }
    tr.a.col(k) = next;
    tr.A.col(k) = assembly.gauge.Z * next;
    tr.v.col(k) = v;
    tr.i.col(k) = stepper.current(a, next, v, sc.dt);
    tr.energy(k) = assembly.energy(tr.A.col(k));
    const Vec rate = (tr.A.col(k) - tr.A.col(k - 1)) / sc.dt;
    tr.sigma_rate(k) = assembly.complex.sigma_norm_sq(rate);
    tr.newton_iterations[k] = diag.newton_iterations;
    tr.residual(k) = diag.residual;
  }
  return tr;
}

Trajectory simulate(const Assembly& assembly, LinearSolver solver) {
  const Vec& A0 = assembly.scenario.A0;
  const Vec a0 = project_to_gauge(assembly, A0);
  Trajectory tr = simulate_from(assembly, a0, solver);
  const double n0 = assembly.complex.edge_norm_sq(A0);
  const double dn = assembly.complex.edge_norm_sq(A0 - tr.A.col(0));
  tr.initial_projection_defect = n0 > 0.0 ? std::sqrt(dn / n0) : 0.0;
  return tr;
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_trajectory_csv(const Trajectory& tr, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto m = tr.i.rows();
  out << "t";
  for (Eigen::Index k = 0; k < m; ++k) out << ",i_" << k + 1;
  for (Eigen::Index k = 0; k < m; ++k) out << ",v_" << k + 1;
  out << ",energy,sigma_seminorm_rate,newton_iters,residual\r\n";
  for (std::size_t n = 0; n < tr.t.size(); ++n) {
    const auto c = Eigen::Index(n);
    out << format_double(tr.t[n]);
    for (Eigen::Index k = 0; k < m; ++k) out << ',' << format_double(tr.i(k, c));
    for (Eigen::Index k = 0; k < m; ++k) out << ',' << format_double(tr.v(k, c));
    out << ',' << format_double(tr.energy(c)) << ',' << format_double(tr.sigma_rate(c))
        << ',' << tr.newton_iterations[n] << ',' << format_double(tr.residual(c)) << "\r\n";
  }
  if (!out) throw Error("write failed: " + path.string());
}

namespace {

constexpr char dump_magic[8] = {'M', 'Q', 'S', 'S', 'T', 'A', 'T', 'E'};
constexpr std::uint32_t dump_version = 1;

template <class U> void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t b = 0; b < sizeof(U); ++b) bytes[b] = static_cast<unsigned char>(value >> (8 * b));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U> U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (!in) throw Error("state dump: truncated file");
  U value = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) value |= U(bytes[b]) << (8 * b);
  return value;
}

void put_f64(std::ostream& out, double x) { put_le(out, std::bit_cast<std::uint64_t>(x)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

} // namespace

void write_state_dump(const Trajectory& tr, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(dump_magic, sizeof dump_magic);
  put_le<std::uint32_t>(out, dump_version);
  put_le<std::uint64_t>(out, std::uint64_t(tr.A.rows()));
  put_le<std::uint64_t>(out, std::uint64_t(tr.i.rows()));
  put_le<std::uint64_t>(out, std::uint64_t(tr.t.size()));
  for (double t : tr.t) put_f64(out, t);
  for (Eigen::Index c = 0; c < tr.A.cols(); ++c)
    for (Eigen::Index r = 0; r < tr.A.rows(); ++r) put_f64(out, tr.A(r, c));
  for (Eigen::Index c = 0; c < tr.i.cols(); ++c)
    for (Eigen::Index r = 0; r < tr.i.rows(); ++r) put_f64(out, tr.i(r, c));
  if (!out) throw Error("write failed: " + path.string());
}

StateDump read_state_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, dump_magic, sizeof magic) != 0)
    throw Error("state dump: bad magic in " + path.string());
  if (get_le<std::uint32_t>(in) != dump_version) throw Error("state dump: unsupported version");
  const auto edges = Eigen::Index(get_le<std::uint64_t>(in));
  const auto m = Eigen::Index(get_le<std::uint64_t>(in));
  const auto samples = Eigen::Index(get_le<std::uint64_t>(in));
  StateDump d;
  d.t.resize(std::size_t(samples));
  for (auto& t : d.t) t = get_f64(in);
  d.A.resize(edges, samples);
  for (Eigen::Index c = 0; c < samples; ++c)
    for (Eigen::Index r = 0; r < edges; ++r) d.A(r, c) = get_f64(in);
  d.i.resize(m, samples);
  for (Eigen::Index c = 0; c < samples; ++c)
    for (Eigen::Index r = 0; r < m; ++r) d.i(r, c) = get_f64(in);
  return d;
}

} // namespace mqs
