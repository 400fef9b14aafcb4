#include <doctest.h>

#include <random>

#include "mqs/error.hpp"
#include "mqs/ph.hpp"
#include "support/builders.hpp"

using namespace mqs;

namespace {

Assembly reference_assembly() { return assemble(parse_scenario(testing::cube_doc(4, 0.25))); }

} // namespace

TEST_CASE("Dirac operator block map") {
  const auto as = reference_assembly();
  const DiracOperator D(as.X);
  const Flows z = D.apply(D.zero_efforts());
  CHECK(z.f_A.cwiseAbs().maxCoeff() == 0.0);
  CHECK(z.J_int.cwiseAbs().maxCoeff() == 0.0);
  CHECK(z.v_w.cwiseAbs().maxCoeff() == 0.0);
  CHECK(z.i.cwiseAbs().maxCoeff() == 0.0);

  Efforts e = D.zero_efforts();
  e.E = Vec::LinSpaced(D.edges(), -1.0, 1.0);
  const Flows f = D.apply(e);
  CHECK(f.f_A == e.E);
  CHECK(f.J_int.cwiseAbs().maxCoeff() == 0.0);
  CHECK((f.v_w + as.X.transpose() * e.E).cwiseAbs().maxCoeff() == 0.0);
  CHECK(f.i.cwiseAbs().maxCoeff() == 0.0);

  // The assembled matrix reproduces apply().
  const Efforts r = D.random_efforts(4);
  Vec stacked(2 * D.edges() + 2 * D.ports());
  stacked << r.J, r.E, r.i_w, r.v;
  const Vec out = D.matrix() * stacked;
  const Flows fr = D.apply(r);
  Vec expect(out.size());
  expect << fr.f_A, fr.J_int, fr.v_w, fr.i;
  CHECK((out - expect).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(D.describe().find("ports 1") != std::string::npos);
}

TEST_CASE("Dirac pairing") {
  const auto as = reference_assembly();
  const DiracOperator D(as.X);
  CHECK(skew_defect(D) <= 1e-12);
  const auto chk = check_dirac_samples(D, 200, 99);
  CHECK(chk.samples == 200);
  CHECK(chk.max_member_pairing <= 1e-12);
  CHECK(chk.min_nonmember_pairing > 1e-3);
}

TEST_CASE("resistive relation") {
  Vec ms(3);
  ms << 1.0, 0.0, 2.0;
  Mat R = Mat::Zero(2, 2);
  R(0, 0) = 2.0;
  R(1, 1) = 3.0;
  const ResistiveRelation rel(ms, R);

  const auto [J0, v0] = rel.apply(Vec::Zero(3), Vec::Zero(2));
  CHECK(rel.check(Vec::Zero(3), Vec::Zero(2), J0, v0) == 0.0);

  const Vec e1 = Vec::Unit(2, 0);
  const auto [J1, v1] = rel.apply(Vec::Zero(3), e1);
  CHECK(rel.check(Vec::Zero(3), e1, J1, v1) == doctest::Approx(-2.0));

  Vec E(3);
  E << 1.0, 1.0, 1.0;
  const auto [J2, v2] = rel.apply(E, e1);
  CHECK_THROWS_WITH_AS(rel.check(E, e1, J2 * 0.5, v2), doctest::Contains("residual"), Error);

  const auto as = reference_assembly();
  const ResistiveRelation full(as.complex.sigma_mass, as.scenario.circuit.R);
  const auto s = check_resistive_samples(full, as.complex.edges, 1, 1000, 5);
  CHECK(s.violations == 0);
  CHECK(s.max_value < 0.0);
  CHECK(s.max_oracle_gap <= 1e-12);
}

TEST_CASE("port-Hamiltonian residuals of trajectories") {
  SUBCASE("zero trajectory") {
    const auto as = reference_assembly();
    const auto tr = simulate(as);
    const auto rep = ph_residual(as, tr);
    CHECK(rep.max_inclusion == 0.0);
    CHECK(rep.min_ham_slack == 0.0);
  }
  SUBCASE("linear and saturating trajectories") {
    for (int seed : {1, 4}) {
      auto s = testing::seeded_scenario(seed);
      s.T = 0.5;
      const auto as = assemble(s);
      const auto tr = simulate(as);
      const auto rep = ph_residual(as, tr);
      CHECK(rep.steps.size() == std::size_t(tr.steps()));
      CHECK(rep.max_inclusion <= 10.0 * s.newton.tol);
      CHECK(rep.min_ham_slack >= -10.0 * s.newton.tol * rep.energy_scale);
    }
  }
}
