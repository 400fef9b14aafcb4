#include <doctest.h>

#include <random>

#include "mqs/error.hpp"
#include "mqs/mimetic.hpp"
#include "support/builders.hpp"

using namespace mqs;

namespace {

RegionMap corner_region(const GridSpec& g) {
  std::vector<std::uint8_t> labels(g.cell_count(), 0);
  labels[0] = 1;
  return RegionMap(g, labels);
}

Mat random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Mat M(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) M(r, c) = n01(rng);
  return M;
}

} // namespace

TEST_CASE("single cell complex") {
  const GridSpec g{1, 1, 1, 1.0};
  const auto cx = build_complex(g, corner_region(g), 1.0);
  CHECK(cx.nodes == 8);
  CHECK(cx.edges == 12);
  CHECK(cx.faces == 6);
  CHECK(cx.cells == 1);
  const IntSparse CG = cx.curl_int * cx.grad_int;
  CHECK(CG.norm() == 0);
  // Every face circulation uses four distinct edges with +-1.
  for (int k = 0; k < cx.curl_int.outerSize(); ++k)
    for (IntSparse::InnerIterator it(cx.curl_int, k); it; ++it) CHECK(std::abs(it.value()) == 1);
}

TEST_CASE("curl of grad vanishes exactly") {
  for (int n = 1; n <= 8; ++n) {
    const GridSpec g{n, n, n, 1.0 / n};
    const auto cx = build_complex(g, corner_region(g), 1.0);
    const IntSparse CG = cx.curl_int * cx.grad_int;
    int defect = 0;
    for (int k = 0; k < CG.outerSize(); ++k)
      for (IntSparse::InnerIterator it(CG, k); it; ++it) defect = std::max(defect, std::abs(it.value()));
    CHECK(defect == 0);
  }
  const GridSpec g{2, 3, 4, 0.3};
  const auto cx = build_complex(g, corner_region(g), 1.0);
  CHECK((cx.curl * cx.grad).norm() == 0.0);
}

TEST_CASE("incidences and masses match the brute-force oracle") {
  const Scenario s = parse_scenario(testing::cube_doc(4, 0.25));
  const auto cx = build_complex(s.grid, s.regions, 2.0);
  auto p = testing::oracle_problem(s);
  p.sigma = 2.0;
  const auto mesh = oracle::build_mesh(p);
  REQUIRE(std::int64_t(mesh.edges.size()) == cx.edges);
  REQUIRE(std::int64_t(mesh.faces.size()) == cx.faces);

  std::vector<int> emap(cx.edges), fmap(cx.faces);
  for (std::int64_t e = 0; e < cx.edges; ++e) emap[e] = mesh.edge_index.at(testing::edge_key(s.grid, e));
  for (std::int64_t f = 0; f < cx.faces; ++f) {
    const auto [axis, ijk] = s.grid.face_ijk(f);
    oracle::Key k{2 * ijk[0] + 1, 2 * ijk[1] + 1, 2 * ijk[2] + 1};
    k[int(axis)] -= 1;
    fmap[f] = mesh.face_index.at(k);
  }

  const Mat C = Mat(cx.curl);
  double curl_defect = 0.0, me_defect = 0.0, ms_defect = 0.0;
  for (std::int64_t f = 0; f < cx.faces; ++f)
    for (std::int64_t e = 0; e < cx.edges; ++e)
      curl_defect = std::max(curl_defect, std::abs(C(f, e) - mesh.curl(fmap[f], emap[e])));
  for (std::int64_t e = 0; e < cx.edges; ++e) {
    me_defect = std::max(me_defect, std::abs(cx.edge_mass(e) - mesh.me(emap[e])));
    ms_defect = std::max(ms_defect, std::abs(cx.sigma_mass(e) - mesh.ms(emap[e])));
  }
  CHECK(curl_defect == 0.0);
  CHECK(me_defect <= 1e-16);
  CHECK(ms_defect <= 1e-16);

  // M_sigma is supported exactly on edges of conducting cells.
  for (std::int64_t e = 0; e < cx.edges; ++e) {
    const auto [axis, ijk] = s.grid.edge_ijk(e);
    bool touches = false;
    const int a = int(axis), u = (a + 1) % 3, w = (a + 2) % 3;
    for (int du : {-1, 0})
      for (int dw : {-1, 0}) {
        auto c = ijk;
        c[u] += du;
        c[w] += dw;
        if (c[u] < 0 || c[w] < 0 || c[u] >= 4 || c[w] >= 4 || c[a] >= 4) continue;
        touches |= s.regions.conducting(s.grid.cell(c[0], c[1], c[2]));
      }
    CHECK((cx.sigma_mass(e) > 0.0) == touches);
  }
}

TEST_CASE("winding coupling") {
  const Scenario s = parse_scenario(testing::cube_doc(4, 0.25));
  const auto cx = build_complex(s.grid, s.regions, 1.0);
  Winding w{Mat::Zero(cx.edges, 1), true};
  CHECK(build_winding_coupling(cx, w).cwiseAbs().maxCoeff() == 0.0);

  const std::int64_t e = s.grid.edge(Axis::y, 2, 1, 2);
  w.columns(e, 0) = 1.0;
  const Mat X = build_winding_coupling(cx, w);
  Vec A = Vec::LinSpaced(cx.edges, -1.0, 2.0);
  CHECK((X.transpose() * A)(0) == doctest::Approx(cx.edge_mass(e) * A(e)).epsilon(1e-15));
}

TEST_CASE("gauge basis") {
  SUBCASE("single cell has no interior edges") {
    const GridSpec g{1, 1, 1, 1.0};
    const auto gb = build_gauge_basis(build_complex(g, corner_region(g), 1.0), corner_region(g));
    CHECK(gb.d == 0);
    CHECK(gb.constrained_dim == 0);
  }

  SUBCASE("q = 0 dimension formula and orthonormality") {
    const Scenario s = parse_scenario(testing::cube_doc(4, 0.25));
    const auto cx = build_complex(s.grid, s.regions, s.sigma_c);
    const auto gb = build_gauge_basis(cx, s.regions);
    std::int64_t interface_interior = 0;
    for (auto n : gb.interior_nodes) interface_interior += s.regions.interface_component(n) >= 0;
    const auto expected_constrained = std::int64_t(gb.interior_nodes.size()) - interface_interior + 1;
    CHECK(gb.constrained_dim == expected_constrained);
    CHECK(gb.d == std::int64_t(gb.interior_edges.size()) - expected_constrained);

    const Mat gram = gb.Z.transpose() * cx.edge_mass.asDiagonal() * gb.Z;
    CHECK((gram - Mat::Identity(gb.d, gb.d)).cwiseAbs().maxCoeff() <= 1e-12);
    const Mat cross = gb.Z.transpose() * cx.edge_mass.asDiagonal() * (cx.grad * gb.constrained);
    CHECK(cross.cwiseAbs().maxCoeff() <= 1e-12);
    for (std::int64_t e = 0; e < cx.edges; ++e)
      if (cx.boundary_edge[e]) CHECK(gb.Z.row(e).cwiseAbs().maxCoeff() == 0.0);

    // Rank oracle on the dense oracle complex.
    const auto mesh = oracle::build_mesh(testing::oracle_problem(s));
    CHECK(mesh.W.cols() == gb.constrained_dim);
    CHECK(oracle::gauge_space(mesh).cols() == gb.d);
  }

  SUBCASE("cavity adds one tied component") {
    auto doc = testing::cube_doc(5, 0.2);
    doc["regions"]["insulating_boxes"] = {{{"lo", {2, 2, 2}}, {"hi", {3, 3, 3}}}};
    const Scenario s = parse_scenario(doc);
    const auto cx = build_complex(s.grid, s.regions, s.sigma_c);
    const auto gb = build_gauge_basis(cx, s.regions);
    const std::int64_t interior = std::int64_t(gb.interior_nodes.size());
    CHECK(gb.constrained_dim == interior - s.regions.interface_node_count() + 2);
    const auto mesh = oracle::build_mesh(testing::oracle_problem(s));
    CHECK(mesh.W.cols() == gb.constrained_dim);
    CHECK(oracle::gauge_space(mesh).cols() == gb.d);
  }

  SUBCASE("condition threshold") {
    const Scenario s = parse_scenario(testing::cube_doc(4, 0.25));
    const auto cx = build_complex(s.grid, s.regions, s.sigma_c);
    try {
      build_gauge_basis(cx, s.regions, 1.0);
      FAIL("expected RankDeficient");
    } catch (const RankDeficient& e) {
      CHECK(e.condition() > 1.0);
      CHECK(std::string(e.what()).find("condition") != std::string::npos);
    }
  }
}

TEST_CASE("cell limit") {
  const GridSpec g{4, 4, 4, 1.0};
  CHECK_THROWS_AS(build_complex(g, corner_region(g), 1.0, 27), Error);
}

TEST_CASE("X inner product needs a conductor or winding") {
  const Scenario s = parse_scenario(testing::cube_doc(4, 0.25));
  const auto cx = build_complex(s.grid, s.regions, s.sigma_c);
  const auto gb = build_gauge_basis(cx, s.regions);
  auto bare = cx;
  bare.sigma_mass.setZero();
  const Mat X0 = Mat::Zero(cx.edges, 1);
  CHECK_THROWS_AS(build_x_inner(bare, gb, X0, Mat::Identity(1, 1)), NotPositiveDefinite);
  const auto inner = build_x_inner(cx, gb, X0, Mat::Identity(1, 1));
  CHECK((inner.S - inner.S.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("curl-free projector") {
  const Scenario s = parse_scenario(testing::cube_doc(4, 0.25));
  const auto cx = build_complex(s.grid, s.regions, s.sigma_c);
  const auto gb = build_gauge_basis(cx, s.regions);
  const Mat X = build_winding_coupling(cx, s.winding);
  const auto inner = build_x_inner(cx, gb, X, s.circuit.R);
  const auto pr = build_projector(inner);
  const Mat& P = pr.P;
  const Mat& S = inner.S;
  const Mat CZ = cx.curl * gb.Z;

  CHECK((P * P - P).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((S * P - P.transpose() * S).cwiseAbs().maxCoeff() <= 1e-12 * S.cwiseAbs().maxCoeff());
  CHECK((CZ * P).cwiseAbs().maxCoeff() <= 1e-12 * CZ.cwiseAbs().maxCoeff());

  const Vec a = random_matrix(gb.d, 1, 11);
  const Vec pa = P * a;
  CHECK(std::abs(pa.dot(S * (a - pa))) <= 1e-12 * a.dot(S * a));
  CHECK((CZ * (pr.range * random_matrix(pr.rank, 1, 12))).cwiseAbs().maxCoeff() <= 1e-12);

  // Rank against an SVD null-space oracle of the oracle complex.
  const auto mesh = oracle::build_mesh(testing::oracle_problem(s));
  const Eigen::MatrixXd B = oracle::gauge_space(mesh);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(mesh.curl * B);
  const auto& sv = svd.singularValues();
  int rank = 0;
  for (int r = 0; r < sv.size(); ++r) rank += sv(r) > 1e-10 * sv(0);
  CHECK(pr.rank == B.cols() - rank);

  Eigen::FullPivLU<Mat> lu(P);
  CHECK(lu.rank() == pr.rank);
}

TEST_CASE("psd null space") {
  Mat A = Mat::Zero(3, 3);
  A(0, 0) = 2.0;
  A(1, 1) = 1e-14;
  A(2, 2) = 1.0;
  const Mat N = psd_null_space(A);
  REQUIRE(N.cols() == 1);
  CHECK(std::abs(std::abs(N(1, 0)) - 1.0) <= 1e-12);
}
