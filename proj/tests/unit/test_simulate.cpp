#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mqs/simulate.hpp"
#include "support/builders.hpp"

using namespace mqs;

namespace {

nlohmann::json sine_doc(int n, double h, int steps, double dt) {
  auto doc = testing::cube_doc(n, h);
  nlohmann::json times = nlohmann::json::array(), values = nlohmann::json::array();
  const double T = steps * dt;
  for (int k = 0; k <= 4 * steps; ++k) {
    const double t = T * k / (4.0 * steps);
    times.push_back(t);
    values.push_back(std::sin(2.0 * M_PI * 3.0 * t));
  }
  doc["input"] = {{"times", times}, {"values", values}};
  doc["time"] = {{"dt", dt}, {"T", T}};
  return doc;
}

struct OracleRun {
  double max_diff = 0.0;
  double scale = 0.0;
};

OracleRun compare_with_oracle(const Scenario& s, double weight) {
  const auto as = assemble(s);
  const auto tr = simulate(as, LinearSolver::dense);
  const auto p = testing::oracle_problem(s);
  const auto mesh = oracle::build_mesh(p);
  const Eigen::MatrixXd chi = testing::oracle_winding(s, mesh);
  Eigen::VectorXd A0(mesh.edges.size());
  for (std::int64_t e = 0; e < s.grid.edge_count(); ++e)
    A0(mesh.edge_index.at(testing::edge_key(s.grid, e))) = s.A0(e);
  const auto ref = oracle::integrate(
      p, mesh, chi, s.circuit.R, [&](double t) { return Eigen::VectorXd(s.input.at(t)); }, A0,
      s.dt, s.step_count(), weight);
  OracleRun out;
  REQUIRE(tr.steps() == s.step_count());
  for (int k = 0; k <= tr.steps(); ++k)
    for (std::int64_t e = 0; e < s.grid.edge_count(); ++e) {
      const double r = ref[k](mesh.edge_index.at(testing::edge_key(s.grid, e)));
      out.max_diff = std::max(out.max_diff, std::abs(tr.A(e, k) - r));
      out.scale = std::max(out.scale, std::abs(r));
    }
  return out;
}

/// Random A0 projected onto the gauge space with the oracle's own basis.
Vec gauged_random_A0(const Scenario& s, std::uint64_t seed) {
  const auto mesh = oracle::build_mesh(testing::oracle_problem(s));
  const Eigen::MatrixXd B = oracle::gauge_space(mesh);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::VectorXd raw(mesh.edges.size());
  for (auto& x : raw) x = n01(rng);
  const Eigen::MatrixXd M = mesh.me.asDiagonal();
  const Eigen::VectorXd proj = B * (B.transpose() * M * B).ldlt().solve(B.transpose() * M * raw);
  Vec A0(s.grid.edge_count());
  for (std::int64_t e = 0; e < s.grid.edge_count(); ++e)
    A0(e) = proj(mesh.edge_index.at(testing::edge_key(s.grid, e)));
  return A0;
}

} // namespace

TEST_CASE("zero input and zero state stay zero") {
  const Scenario s = parse_scenario(testing::cube_doc(4, 0.25));
  const auto as = assemble(s);
  const Stepper st(as);
  StepDiagnostics diag;
  const Vec a = st.step_backward_euler(Vec::Zero(as.gauge.d), Vec::Zero(1), 0.01, &diag);
  CHECK(a.cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.current(Vec::Zero(as.gauge.d), a, Vec::Zero(1), 0.01).cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.step_implicit_midpoint(Vec::Zero(as.gauge.d), Vec::Zero(1), 0.01).cwiseAbs().maxCoeff() == 0.0);

  const auto tr = simulate(as);
  CHECK(tr.steps() == 10);
  CHECK(tr.A.cwiseAbs().maxCoeff() == 0.0);
  CHECK(tr.i.cwiseAbs().maxCoeff() == 0.0);
  CHECK(tr.energy.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward Euler matches the dense saddle point oracle") {
  SUBCASE("zero initial value, sinusoidal voltage") {
    const Scenario s = parse_scenario(sine_doc(3, 0.5, 10, 0.02));
    const auto r = compare_with_oracle(s, 1.0);
    CHECK(r.scale > 1e-4);
    CHECK(r.max_diff <= 1e-10);
  }
  SUBCASE("random gauged initial value") {
    Scenario s = parse_scenario(sine_doc(3, 0.5, 10, 0.02));
    s.A0 = gauged_random_A0(s, 17);
    const auto r = compare_with_oracle(s, 1.0);
    CHECK(r.max_diff <= 1e-10 * std::max(1.0, r.scale));
  }
  SUBCASE("4^3 with a cavity-free box and two windings") {
    auto doc = sine_doc(4, 0.25, 10, 0.01);
    doc["winding"] = {{"columns", {{{"preset", "loop"}}, {{"preset", "bar"}}}}};
    doc["circuit"]["R"] = {{2.0, 0.5}, {0.5, 1.0}};
    for (auto& v : doc["input"]["values"]) v = {v.get<double>(), -0.5 * v.get<double>()};
    const auto r = compare_with_oracle(parse_scenario(doc), 1.0);
    CHECK(r.max_diff <= 1e-10);
  }
}

TEST_CASE("implicit midpoint matches the trapezoidal oracle for linear models") {
  auto doc = sine_doc(3, 0.5, 10, 0.02);
  doc["integrator"] = "implicit_midpoint";
  Scenario s = parse_scenario(doc);
  s.A0 = gauged_random_A0(s, 23);
  const auto r = compare_with_oracle(s, 0.5);
  CHECK(r.max_diff <= 1e-10 * std::max(1.0, r.scale));
}

TEST_CASE("conjugate gradients agree with the dense solve") {
  auto doc = sine_doc(4, 0.25, 5, 0.01);
  testing::make_saturating(doc, 30.0);
  const auto as = assemble(parse_scenario(doc));
  const auto dense = simulate(as, LinearSolver::dense);
  const auto cg = simulate(as, LinearSolver::cg);
  CHECK(Stepper(as, LinearSolver::cg).uses_cg());
  CHECK_FALSE(Stepper(as).uses_cg());
  CHECK((dense.A - cg.A).cwiseAbs().maxCoeff() <= 1e-9 * dense.A.cwiseAbs().maxCoeff());
}

TEST_CASE("saturating Newton converges") {
  auto doc = sine_doc(4, 0.25, 10, 0.01);
  testing::make_saturating(doc, 400.0);
  const auto as = assemble(parse_scenario(doc));
  const auto tr = simulate(as);
  int most = 0;
  double flux = 0.0;
  for (int k = 1; k <= tr.steps(); ++k) {
    most = std::max(most, tr.newton_iterations[k]);
    flux = std::max(flux, as.energy.max_flux_density(tr.A.col(k)));
  }
  CHECK(most >= 2);
  CHECK(most <= 50);
  CHECK(tr.residual.maxCoeff() <= 1e-12);
  CHECK(flux > 1.0);
}

TEST_CASE("reduced derivatives") {
  auto doc = testing::cube_doc(4, 0.25);
  testing::make_saturating(doc);
  const auto as = assemble(parse_scenario(doc));
  const Stepper st(as);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01(0.0, 0.05);
  Vec a(as.gauge.d), da(as.gauge.d);
  for (auto& x : a) x = n01(rng);
  for (auto& x : da) x = n01(rng);
  const double eps = 1e-6;
  const Vec fd = (st.reduced_gradient(a + eps * da) - st.reduced_gradient(a - eps * da)) / (2.0 * eps);
  const Vec an = st.reduced_hessian(a) * da;
  CHECK((fd - an).norm() <= 1e-6 * an.norm());
}

TEST_CASE("projection of the initial value") {
  auto doc = testing::cube_doc(4, 0.25);
  doc["initial"] = {{"preset", "random"}, {"seed", 2}};
  const Scenario s = parse_scenario(doc);
  const auto as = assemble(s);
  const auto tr = simulate(as);
  CHECK(tr.initial_projection_defect > 0.1);
  const Vec a = project_to_gauge(as, tr.A.col(0));
  CHECK((as.gauge.Z * a - tr.A.col(0)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("trajectory files") {
  const Scenario s = parse_scenario(sine_doc(3, 0.5, 4, 0.02));
  const auto tr = simulate(assemble(s));
  const auto dir = std::filesystem::temp_directory_path() / "mqs_traj_test";
  std::filesystem::create_directories(dir);

  write_trajectory_csv(tr, dir / "trajectory.csv");
  std::ifstream in(dir / "trajectory.csv", std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string csv = ss.str();
  CHECK(csv.rfind("t,i_1,v_1,energy,sigma_seminorm_rate,newton_iters,residual\r\n", 0) == 0);
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == tr.steps() + 2);
  CHECK(format_double(0.1) == "0.10000000000000001");

  write_state_dump(tr, dir / "state.bin");
  const auto dump = read_state_dump(dir / "state.bin");
  CHECK(dump.t == tr.t);
  CHECK(dump.A == tr.A);
  CHECK(dump.i == tr.i);
  {
    std::ifstream raw(dir / "state.bin", std::ios::binary);
    char magic[8];
    raw.read(magic, 8);
    CHECK(std::string(magic, 8) == "MQSSTATE");
  }
  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "NOTSTATE";
  }
  CHECK_THROWS(read_state_dump(dir / "bad.bin"));
  std::filesystem::remove_all(dir);
}
