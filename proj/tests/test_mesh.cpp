#include "fe2rom/mesh.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace fe2rom;

TEST_CASE("tri3 quadrature integrates degree-2 monomials exactly") {
  const auto& q = QuadratureRule::tri3();
  double wsum = 0.0;
  for (double w : q.weights) wsum += w;
  REQUIRE(wsum == Catch::Approx(0.5).epsilon(1e-14));

  // analytic integrals over the reference triangle
  auto integrate = [&](auto f) {
    double s = 0.0;
    for (int g = 0; g < q.size(); ++g) s += q.weights[g] * f(q.points[g][0], q.points[g][1]);
    return s;
  };
  REQUIRE(integrate([](double x, double) { return x; }) == Catch::Approx(1.0 / 6.0).margin(1e-15));
  REQUIRE(integrate([](double, double y) { return y; }) == Catch::Approx(1.0 / 6.0).margin(1e-15));
  REQUIRE(integrate([](double x, double) { return x * x; }) ==
          Catch::Approx(1.0 / 12.0).margin(1e-15));
  REQUIRE(integrate([](double x, double y) { return x * y; }) ==
          Catch::Approx(1.0 / 24.0).margin(1e-15));
  REQUIRE(integrate([](double, double y) { return y * y; }) ==
          Catch::Approx(1.0 / 12.0).margin(1e-15));
}

TEST_CASE("shape functions: partition of unity and nodal interpolation") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    double xi = rng.uniform(), eta = rng.uniform() * (1.0 - xi);
    auto n = tri6_shape(xi, eta);
    REQUIRE(std::abs(n.sum() - 1.0) < 1e-12);
    auto d = tri6_shape_grad(xi, eta);
    REQUIRE(std::abs(d.col(0).sum()) < 1e-12);
    REQUIRE(std::abs(d.col(1).sum()) < 1e-12);
  }

  const std::array<std::array<double, 2>, 6> ref = {
      {{0, 0}, {1, 0}, {0, 1}, {0.5, 0}, {0.5, 0.5}, {0, 0.5}}};
  for (int a = 0; a < 6; ++a) {
    auto n = tri6_shape(ref[a][0], ref[a][1]);
    for (int b = 0; b < 6; ++b) REQUIRE(n[b] == Catch::Approx(a == b ? 1.0 : 0.0).margin(1e-14));
  }
}

namespace {

Vec nodal_field(const Mesh& mesh, const ElementTri6& el,
                double ax, double bx, double cx, double ay, double by, double cy) {
  Vec u(12);
  for (int a = 0; a < 6; ++a) {
    const Node& nd = mesh.nodes[el.nodes[a]];
    u[2 * a] = ax + bx * nd.x + cx * nd.y;
    u[2 * a + 1] = ay + by * nd.x + cy * nd.y;
  }
  return u;
}

}  // namespace

TEST_CASE("patch test: affine fields give exact constant strain on every element") {
  auto mesh = build_rve_mesh(RveGeometry::default_cell(8));  // includes snapped elements
  const auto& q = QuadratureRule::tri3();

  for (const auto& el : mesh.elements) {
    // rigid translation
    Vec ut = nodal_field(mesh, el, 3.0, 0, 0, -2.0, 0, 0);
    // u = (x, 0)
    Vec ux = nodal_field(mesh, el, 0, 1, 0, 0, 0, 0);
    // general affine
    Vec ua = nodal_field(mesh, el, 0.3, 1.25, -0.75, -0.1, 0.5, 2.0);
    for (int g = 0; g < q.size(); ++g) {
      auto se = shape_eval(mesh, el, q.points[g][0], q.points[g][1]);
      REQUIRE((se.B * ut).norm() < 1e-10);
      Voigt3 e1 = se.B * ux;
      REQUIRE((e1 - Voigt3(1, 0, 0)).norm() < 1e-10);
      Voigt3 e2 = se.B * ua;
      REQUIRE((e2 - Voigt3(1.25, 2.0, -0.75 + 0.5)).norm() < 1e-10);
    }
  }
}

TEST_CASE("beam mesh counts and sets") {
  auto m = build_beam_mesh(4.0, 1.0, 4, 1);
  REQUIRE(m.n_elements() == 8);
  REQUIRE(m.n_nodes() == 27);
  REQUIRE(m.area == Catch::Approx(4.0).epsilon(1e-12));
  // 2*(ny*2+1) prescribed DOFs on the clamped edge
  REQUIRE(m.node_set("left").size() == 3);

  auto m1 = build_beam_mesh(1.0, 1.0, 1, 1);
  REQUIRE(m1.n_elements() == 2);
  REQUIRE(m1.n_nodes() == 9);

  auto m2 = build_beam_mesh(4.0, 1.0, 8, 2);
  REQUIRE(m2.node_set("left").size() == 2ul * 2 + 1);
  REQUIRE(m2.area == Catch::Approx(4.0).epsilon(1e-12));

  REQUIRE_THROWS_AS(build_beam_mesh(4.0, 1.0, 0, 1), Error);
}

TEST_CASE("rve mesh: plain unit square") {
  RveGeometry geo;
  geo.subdivisions = 2;  // h = 0.5
  auto m = build_rve_mesh(geo);
  REQUIRE(m.area == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(m.n_elements() == 8);
  for (const auto& el : m.elements) REQUIRE(el.material_id == 0);
}

TEST_CASE("rve mesh: default cell area matches analytic pore deficit") {
  auto geo = RveGeometry::default_cell(16);
  auto m = build_rve_mesh(geo);
  const double expected = 1.0 - std::numbers::pi * 0.15 * 0.15;
  REQUIRE(std::abs(m.area - expected) / expected < 0.02);

  // both phases present, no element centroid inside the pore
  bool has_matrix = false, has_inclusion = false;
  for (const auto& el : m.elements) {
    has_matrix |= el.material_id == 0;
    has_inclusion |= el.material_id == 1;
    double cx = 0, cy = 0;
    for (int a = 0; a < 3; ++a) {
      cx += m.nodes[el.nodes[a]].x / 3.0;
      cy += m.nodes[el.nodes[a]].y / 3.0;
    }
    REQUIRE_FALSE(geo.pore->contains(cx, cy));
  }
  REQUIRE(has_matrix);
  REQUIRE(has_inclusion);

  // element areas sum to |Omega|
  REQUIRE(compute_area(m) == Catch::Approx(m.area).epsilon(1e-10));
}

TEST_CASE("rve mesh: refinement strictly increases integration point count") {
  int last = 0;
  for (int n : {8, 16, 24}) {
    auto m = build_rve_mesh(RveGeometry::default_cell(n));
    REQUIRE(m.n_integration_points() > last);
    last = m.n_integration_points();
  }
}

TEST_CASE("rve mesh: boundary nodes stay on the lattice (periodic matching)") {
  auto m = build_rve_mesh(RveGeometry::default_cell(12));
  auto ys = [&](const std::string& set) {
    std::vector<double> v;
    for (int id : m.node_set(set)) v.push_back(m.nodes[id].y);
    std::sort(v.begin(), v.end());
    return v;
  };
  auto yl = ys("left"), yr = ys("right");
  REQUIRE(yl.size() == yr.size());
  for (std::size_t i = 0; i < yl.size(); ++i) REQUIRE(yl[i] == Catch::Approx(yr[i]).margin(1e-12));
}

TEST_CASE("rve geometry validation") {
  RveGeometry overlap;
  overlap.subdivisions = 8;
  overlap.inclusions = {{0.4, 0.5, 0.2}, {0.6, 0.5, 0.2}};
  REQUIRE_THROWS_AS(build_rve_mesh(overlap), Error);

  RveGeometry outside;
  outside.subdivisions = 8;
  outside.inclusions = {{0.95, 0.5, 0.2}};
  try {
    build_rve_mesh(outside);
    FAIL("expected geometry error");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::geometry);
  }
}

TEST_CASE("mesh serialization round-trips bit-exactly") {
  auto m = build_rve_mesh(RveGeometry::default_cell(8));
  std::ostringstream first;
  write_mesh(m, first);
  std::istringstream in(first.str());
  Mesh back = read_mesh(in);
  std::ostringstream second;
  write_mesh(back, second);
  REQUIRE(first.str() == second.str());
  REQUIRE(back.n_nodes() == m.n_nodes());
  REQUIRE(back.n_elements() == m.n_elements());
  REQUIRE(back.area == Catch::Approx(m.area).epsilon(1e-14));

  std::istringstream bogus("not-a-mesh 7");
  REQUIRE_THROWS_AS(read_mesh(bogus), Error);
}

TEST_CASE("dof map expand/reduce round trip") {
  DofMap dm;
  dm.dofs.resize(6);
  dm.dofs[0] = {DofKind::free, 0, 0.0};
  dm.dofs[1] = {DofKind::fixed, -1, 2.5};
  dm.dofs[2] = {DofKind::free, 1, 0.0};
  dm.dofs[3] = {DofKind::tied, 0, 0.25};
  dm.dofs[4] = {DofKind::fixed, -1, -1.0};
  dm.dofs[5] = {DofKind::free, 2, 0.0};
  dm.n_free = 3;

  Vec uf(3);
  uf << 1.0, 2.0, 3.0;
  Vec full = dm.expand(uf);
  REQUIRE(full[0] == 1.0);
  REQUIRE(full[1] == 2.5);
  REQUIRE(full[3] == 1.25);

  Vec f = Vec::LinSpaced(6, 1.0, 6.0);
  Vec r = dm.reduce(f);
  REQUIRE(r[0] == Catch::Approx(1.0 + 4.0));  // tied folds into master
  REQUIRE(r[1] == Catch::Approx(3.0));
  REQUIRE(r[2] == Catch::Approx(6.0));
}
