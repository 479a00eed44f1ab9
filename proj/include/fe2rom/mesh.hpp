#pragma once

#include "fe2rom/common.hpp"

#include <array>
#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace fe2rom {

struct Node {
  int id = 0;
  double x = 0.0, y = 0.0;
};

/// Quadratic triangle. Corner nodes 0-2 counterclockwise, mid-edge nodes
/// 3 (between 0-1), 4 (between 1-2), 5 (between 2-0).
struct ElementTri6 {
  std::array<int, 6> nodes{};
  int material_id = 0;
};

struct QuadratureRule {
  std::vector<std::array<double, 2>> points;  // (xi, eta) on the reference triangle
  std::vector<double> weights;

  int size() const { return static_cast<int>(points.size()); }

  /// 3-point rule, exact up to degree 2, weights sum to the reference area 1/2.
  static const QuadratureRule& tri3() {
    static const QuadratureRule rule{
        {{1.0 / 6.0, 1.0 / 6.0}, {2.0 / 3.0, 1.0 / 6.0}, {1.0 / 6.0, 2.0 / 3.0}},
        {1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0}};
    return rule;
  }
};

struct Mesh {
  std::vector<Node> nodes;
  std::vector<ElementTri6> elements;
  std::map<std::string, std::vector<int>> node_sets;
  double area = 0.0;  // sum of element areas

  int n_nodes() const { return static_cast<int>(nodes.size()); }
  int n_elements() const { return static_cast<int>(elements.size()); }
  int n_dofs() const { return 2 * n_nodes(); }
  int n_integration_points() const { return n_elements() * QuadratureRule::tri3().size(); }

  const std::vector<int>& node_set(const std::string& name) const {
    auto it = node_sets.find(name);
    require(it != node_sets.end(), ErrorCode::mesh, "unknown node set: " + name);
    return it->second;
  }
};

inline Eigen::Matrix<double, 6, 1> tri6_shape(double xi, double eta) {
  const double l1 = 1.0 - xi - eta, l2 = xi, l3 = eta;
  Eigen::Matrix<double, 6, 1> n;
  n << l1 * (2.0 * l1 - 1.0), l2 * (2.0 * l2 - 1.0), l3 * (2.0 * l3 - 1.0),
      4.0 * l1 * l2, 4.0 * l2 * l3, 4.0 * l3 * l1;
  return n;
}

inline Eigen::Matrix<double, 6, 2> tri6_shape_grad(double xi, double eta) {
  const double l1 = 1.0 - xi - eta, l2 = xi, l3 = eta;
  Eigen::Matrix<double, 6, 2> d;
  d << -(4.0 * l1 - 1.0), -(4.0 * l1 - 1.0),
      4.0 * l2 - 1.0, 0.0,
      0.0, 4.0 * l3 - 1.0,
      4.0 * (l1 - l2), -4.0 * l2,
      4.0 * l3, 4.0 * l2,
      -4.0 * l3, 4.0 * (l1 - l3);
  return d;
}

struct ShapeEval {
  Eigen::Matrix<double, 6, 1> N;
  Eigen::Matrix<double, 3, 12> B;  // maps nodal (ux,uy) to (e11, e22, g12)
  double detJ = 0.0;
};

inline ShapeEval shape_eval(const Mesh& mesh, const ElementTri6& el, double xi, double eta) {
  ShapeEval out;
  out.N = tri6_shape(xi, eta);
  const auto dN = tri6_shape_grad(xi, eta);

  Eigen::Matrix<double, 2, 2> J = Eigen::Matrix<double, 2, 2>::Zero();
  for (int a = 0; a < 6; ++a) {
    const Node& nd = mesh.nodes[el.nodes[a]];
    J(0, 0) += dN(a, 0) * nd.x;
    J(0, 1) += dN(a, 0) * nd.y;
    J(1, 0) += dN(a, 1) * nd.x;
    J(1, 1) += dN(a, 1) * nd.y;
  }
  out.detJ = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
  require(out.detJ > 0.0, ErrorCode::mesh, "inverted element (detJ <= 0)");

  Eigen::Matrix<double, 2, 2> Jinv;
  Jinv << J(1, 1), -J(0, 1), -J(1, 0), J(0, 0);
  Jinv /= out.detJ;

  out.B.setZero();
  for (int a = 0; a < 6; ++a) {
    const double dNdx = Jinv(0, 0) * dN(a, 0) + Jinv(0, 1) * dN(a, 1);
    const double dNdy = Jinv(1, 0) * dN(a, 0) + Jinv(1, 1) * dN(a, 1);
    out.B(0, 2 * a) = dNdx;
    out.B(1, 2 * a + 1) = dNdy;
    out.B(2, 2 * a) = dNdy;
    out.B(2, 2 * a + 1) = dNdx;
  }
  return out;
}

inline double element_area(const Mesh& mesh, const ElementTri6& el) {
  const auto& q = QuadratureRule::tri3();
  double a = 0.0;
  for (int g = 0; g < q.size(); ++g)
    a += q.weights[g] * shape_eval(mesh, el, q.points[g][0], q.points[g][1]).detJ;
  return a;
}

inline double compute_area(const Mesh& mesh) {
  double a = 0.0;
  for (const auto& el : mesh.elements) a += element_area(mesh, el);
  return a;
}

/// Rectangular L x H strip of structured Tri6 pairs with node sets
/// "left" (clamp) and "tip" (loaded edge at x = L).
inline Mesh build_beam_mesh(double L, double H, int nx, int ny) {
  require(L > 0.0 && H > 0.0, ErrorCode::config, "beam dimensions must be positive");
  require(nx >= 1 && ny >= 1, ErrorCode::config, "beam subdivisions must be >= 1");

  Mesh mesh;
  const int gx = 2 * nx + 1, gy = 2 * ny + 1;
  auto gid = [gx](int i, int j) { return j * gx + i; };
  mesh.nodes.reserve(gx * gy);
  for (int j = 0; j < gy; ++j)
    for (int i = 0; i < gx; ++i)
      mesh.nodes.push_back({gid(i, j), L * i / (gx - 1.0), H * j / (gy - 1.0)});

  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int i0 = 2 * i, j0 = 2 * j;
      // lower-right triangle (A,B,C), upper-left triangle (A,C,D); diagonal A-C
      ElementTri6 t1;
      t1.nodes = {gid(i0, j0), gid(i0 + 2, j0), gid(i0 + 2, j0 + 2),
                  gid(i0 + 1, j0), gid(i0 + 2, j0 + 1), gid(i0 + 1, j0 + 1)};
      ElementTri6 t2;
      t2.nodes = {gid(i0, j0), gid(i0 + 2, j0 + 2), gid(i0, j0 + 2),
                  gid(i0 + 1, j0 + 1), gid(i0 + 1, j0 + 2), gid(i0, j0 + 1)};
      mesh.elements.push_back(t1);
      mesh.elements.push_back(t2);
    }
  }

  std::vector<int> left, tip;
  for (int j = 0; j < gy; ++j) {
    left.push_back(gid(0, j));
    tip.push_back(gid(gx - 1, j));
  }
  mesh.node_sets["left"] = left;
  mesh.node_sets["tip"] = tip;
  mesh.area = compute_area(mesh);
  return mesh;
}

struct Circle {
  double x = 0.0, y = 0.0, r = 0.0;

  double dist(double px, double py) const { return std::hypot(px - x, py - y); }
  bool contains(double px, double py) const { return dist(px, py) < r; }
};

/// Unit-cell RVE description. Coordinates are normalized to cell edge = 1.
struct RveGeometry {
  std::vector<Circle> inclusions;
  std::optional<Circle> pore;
  int subdivisions = 12;  // background grid cells per edge

  /// Two stiff inclusions and one pore, approximating the reference layout.
  static RveGeometry default_cell(int subdivisions = 12) {
    RveGeometry g;
    g.inclusions = {{0.3, 0.3, 0.2}, {0.7, 0.65, 0.2}};
    g.pore = Circle{0.65, 0.25, 0.15};
    g.subdivisions = subdivisions;
    return g;
  }
};

namespace detail {

inline void validate_rve_geometry(const RveGeometry& geo) {
  std::vector<Circle> all = geo.inclusions;
  if (geo.pore) all.push_back(*geo.pore);
  const double wall_margin = 0.5 / geo.subdivisions;
  for (const auto& c : all) {
    require(c.r > 0.0, ErrorCode::geometry, "circle radius must be positive");
    const bool inside = c.x - c.r > wall_margin && c.x + c.r < 1.0 - wall_margin &&
                        c.y - c.r > wall_margin && c.y + c.r < 1.0 - wall_margin;
    require(inside, ErrorCode::geometry, "inclusion/pore not inside unit cell");
  }
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b)
      require(all[a].dist(all[b].x, all[b].y) > all[a].r + all[b].r, ErrorCode::geometry,
              "overlapping inclusions/pore");
}

}  // namespace detail

/// Conforming Tri6 mesh of the unit cell: structured background grid, nodes
/// within a band of each circle snapped onto it, mid-edge nodes of interface
/// edges projected radially. Elements whose centroid falls inside the pore are
/// removed. Boundary nodes are never moved, so periodic pairs stay matched.
inline Mesh build_rve_mesh(const RveGeometry& geo) {
  require(geo.subdivisions >= 2, ErrorCode::config, "rve subdivisions must be >= 2");
  detail::validate_rve_geometry(geo);

  const int n = geo.subdivisions;
  const int g = 2 * n + 1;  // fine grid (corners + mid-edges)
  auto gid = [g](int i, int j) { return j * g + i; };

  std::vector<double> px(g * g), py(g * g);
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) {
      px[gid(i, j)] = i / (g - 1.0);
      py[gid(i, j)] = j / (g - 1.0);
    }

  std::vector<Circle> circles = geo.inclusions;
  if (geo.pore) circles.push_back(*geo.pore);

  // Snap corner-grid nodes onto the nearest circle within the band.
  const double band = 0.3 / n;
  std::vector<signed char> on_circle(g * g, -1);
  for (int j = 0; j < g; j += 2) {
    for (int i = 0; i < g; i += 2) {
      if (i == 0 || j == 0 || i == g - 1 || j == g - 1) continue;  // keep boundary intact
      const int id = gid(i, j);
      int best = -1, claims = 0;
      double best_gap = band;
      for (std::size_t c = 0; c < circles.size(); ++c) {
        const double gap = std::abs(circles[c].dist(px[id], py[id]) - circles[c].r);
        if (gap < band) ++claims;
        if (gap < best_gap) {
          best_gap = gap;
          best = static_cast<int>(c);
        }
      }
      if (claims > 1) continue;  // unresolvable gap between circles: leave on the grid
      if (best >= 0) {
        const Circle& c = circles[best];
        const double d = c.dist(px[id], py[id]);
        if (d > 1e-12) {
          px[id] = c.x + (px[id] - c.x) * c.r / d;
          py[id] = c.y + (py[id] - c.y) * c.r / d;
        }
        on_circle[id] = static_cast<signed char>(best);
      }
    }
  }

  // Mid-edge nodes at (possibly snapped) endpoint midpoints; project those
  // connecting two nodes on the same circle.
  auto place_mid = [&](int mid, int a, int b) {
    px[mid] = 0.5 * (px[a] + px[b]);
    py[mid] = 0.5 * (py[a] + py[b]);
    if (on_circle[a] >= 0 && on_circle[a] == on_circle[b]) {
      const Circle& c = circles[on_circle[a]];
      const double d = c.dist(px[mid], py[mid]);
      if (d > 1e-12) {
        px[mid] = c.x + (px[mid] - c.x) * c.r / d;
        py[mid] = c.y + (py[mid] - c.y) * c.r / d;
      }
    }
  };
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) {
      const bool mi = (i % 2 == 1), mj = (j % 2 == 1);
      if (mi && !mj) place_mid(gid(i, j), gid(i - 1, j), gid(i + 1, j));
      if (!mi && mj) place_mid(gid(i, j), gid(i, j - 1), gid(i, j + 1));
      if (mi && mj) place_mid(gid(i, j), gid(i - 1, j - 1), gid(i + 1, j + 1));
    }

  // Build elements; classify by corner centroid, drop pore elements.
  auto material_of = [&](double cx, double cy) -> int {
    if (geo.pore && geo.pore->contains(cx, cy)) return -1;  // pore
    for (std::size_t c = 0; c < geo.inclusions.size(); ++c)
      if (geo.inclusions[c].contains(cx, cy)) return 1;
    return 0;
  };

  std::vector<std::array<int, 6>> raw_elements;
  std::vector<int> raw_materials;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const int i0 = 2 * i, j0 = 2 * j;
      const std::array<std::array<int, 6>, 2> tris = {{
          {gid(i0, j0), gid(i0 + 2, j0), gid(i0 + 2, j0 + 2),
           gid(i0 + 1, j0), gid(i0 + 2, j0 + 1), gid(i0 + 1, j0 + 1)},
          {gid(i0, j0), gid(i0 + 2, j0 + 2), gid(i0, j0 + 2),
           gid(i0 + 1, j0 + 1), gid(i0 + 1, j0 + 2), gid(i0, j0 + 1)},
      }};
      for (const auto& t : tris) {
        const double cx = (px[t[0]] + px[t[1]] + px[t[2]]) / 3.0;
        const double cy = (py[t[0]] + py[t[1]] + py[t[2]]) / 3.0;
        const int mat = material_of(cx, cy);
        if (mat < 0) continue;
        raw_elements.push_back(t);
        raw_materials.push_back(mat);
      }
    }
  }
  require(!raw_elements.empty(), ErrorCode::mesh, "meshing produced no elements");

  // Compact node numbering.
  std::vector<int> remap(g * g, -1);
  Mesh mesh;
  for (std::size_t e = 0; e < raw_elements.size(); ++e) {
    ElementTri6 el;
    el.material_id = raw_materials[e];
    for (int a = 0; a < 6; ++a) {
      const int old = raw_elements[e][a];
      if (remap[old] < 0) {
        remap[old] = mesh.n_nodes();
        mesh.nodes.push_back({remap[old], px[old], py[old]});
      }
      el.nodes[a] = remap[old];
    }
    mesh.elements.push_back(el);
  }

  const double tol = 1e-12;
  std::vector<int> left, right, bottom, top;
  for (const auto& nd : mesh.nodes) {
    if (std::abs(nd.x) < tol) left.push_back(nd.id);
    if (std::abs(nd.x - 1.0) < tol) right.push_back(nd.id);
    if (std::abs(nd.y) < tol) bottom.push_back(nd.id);
    if (std::abs(nd.y - 1.0) < tol) top.push_back(nd.id);
  }
  mesh.node_sets["left"] = left;
  mesh.node_sets["right"] = right;
  mesh.node_sets["bottom"] = bottom;
  mesh.node_sets["top"] = top;

  // Quadrature-point Jacobian check doubles as the snapping sanity check.
  mesh.area = compute_area(mesh);
  return mesh;
}

// ---------------------------------------------------------------------------
// DOF management

enum class DofKind { free, fixed, tied };

struct Dof {
  DofKind kind = DofKind::free;
  int free_index = -1;   // free: position among unknowns; tied: master's position
  double value = 0.0;    // fixed: prescribed value; tied: offset from master
};

/// Per-node (ux, uy) numbering with a free / fixed / tied partition.
/// Tied DOFs (periodic slaves) follow a free master plus an affine offset.
struct DofMap {
  std::vector<Dof> dofs;
  int n_free = 0;

  int n_total() const { return static_cast<int>(dofs.size()); }

  static int dof_of(int node, int comp) { return 2 * node + comp; }

  /// Full-field vector from the free unknowns.
  Vec expand(const Vec& u_free) const {
    Vec u(n_total());
    for (int i = 0; i < n_total(); ++i) {
      const Dof& d = dofs[i];
      switch (d.kind) {
        case DofKind::free: u[i] = u_free[d.free_index]; break;
        case DofKind::fixed: u[i] = d.value; break;
        case DofKind::tied: u[i] = u_free[d.free_index] + d.value; break;
      }
    }
    return u;
  }

  /// Homogeneous expansion: fixed -> 0, tied -> master (no offsets).
  Vec expand_homogeneous(const Vec& u_free) const {
    Vec u = Vec::Zero(n_total());
    for (int i = 0; i < n_total(); ++i) {
      const Dof& d = dofs[i];
      if (d.kind != DofKind::fixed) u[i] = u_free[d.free_index];
    }
    return u;
  }

  /// Constraint-consistent reduction: fold tied rows into masters, drop fixed.
  Vec reduce(const Vec& f_full) const {
    Vec r = Vec::Zero(n_free);
    for (int i = 0; i < n_total(); ++i) {
      const Dof& d = dofs[i];
      if (d.kind != DofKind::fixed) r[d.free_index] += f_full[i];
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// Plain-text mesh serialization (bit-exact round-trip)

inline void write_mesh(const Mesh& mesh, std::ostream& os) {
  os << "fe2rom-mesh 1\n";
  os << "nodes " << mesh.n_nodes() << "\n";
  char buf[128];
  for (const auto& nd : mesh.nodes) {
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g\n", nd.id, nd.x, nd.y);
    os << buf;
  }
  os << "elements " << mesh.n_elements() << "\n";
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto& el = mesh.elements[e];
    os << e << ' ' << el.material_id;
    for (int a = 0; a < 6; ++a) os << ' ' << el.nodes[a];
    os << "\n";
  }
  for (const auto& [name, ids] : mesh.node_sets) {
    os << "set " << name << ' ' << ids.size() << "\n";
    for (std::size_t i = 0; i < ids.size(); ++i) os << ids[i] << (i + 1 < ids.size() ? ' ' : '\n');
    if (ids.empty()) os << "\n";
  }
}

inline void write_mesh_file(const Mesh& mesh, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrorCode::io, "cannot open for write: " + path);
  write_mesh(mesh, os);
}

inline Mesh read_mesh(std::istream& is) {
  Mesh mesh;
  std::string magic;
  int version = 0;
  is >> magic >> version;
  require(magic == "fe2rom-mesh" && version == 1, ErrorCode::io, "not a fe2rom mesh file");

  std::string key;
  int count = 0;
  is >> key >> count;
  require(key == "nodes" && count >= 0, ErrorCode::io, "malformed mesh file (nodes)");
  mesh.nodes.resize(count);
  for (int i = 0; i < count; ++i) {
    is >> mesh.nodes[i].id >> mesh.nodes[i].x >> mesh.nodes[i].y;
    require(mesh.nodes[i].id == i, ErrorCode::io, "node ids must be dense");
  }
  is >> key >> count;
  require(key == "elements" && count >= 0, ErrorCode::io, "malformed mesh file (elements)");
  mesh.elements.resize(count);
  for (int e = 0; e < count; ++e) {
    int id = 0;
    is >> id >> mesh.elements[e].material_id;
    for (int a = 0; a < 6; ++a) {
      is >> mesh.elements[e].nodes[a];
      require(mesh.elements[e].nodes[a] >= 0 && mesh.elements[e].nodes[a] < mesh.n_nodes(),
              ErrorCode::io, "element references missing node");
    }
  }
  while (is >> key) {
    require(key == "set", ErrorCode::io, "malformed mesh file (sets)");
    std::string name;
    std::size_t sz = 0;
    is >> name >> sz;
    auto& ids = mesh.node_sets[name];
    ids.resize(sz);
    for (auto& v : ids) {
      is >> v;
      require(v >= 0 && v < mesh.n_nodes(), ErrorCode::io, "set references missing node");
    }
  }
  mesh.area = compute_area(mesh);
  return mesh;
}

inline Mesh read_mesh_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorCode::io, "cannot open mesh file: " + path);
  return read_mesh(is);
}

}  // namespace fe2rom
