#pragma once

#include "fe2rom/materials.hpp"
#include "fe2rom/mesh.hpp"

#include <Eigen/SparseCholesky>

#include <functional>
#include <limits>

namespace fe2rom {

/// Macroscopic strain in engineering Voigt (E11, E22, 2*E12).
struct MacroStrain {
  Voigt3 voigt = Voigt3::Zero();

  MacroStrain() = default;
  explicit MacroStrain(const Voigt3& v) : voigt(v) {}
  MacroStrain(double e11, double e22, double g12) : voigt(e11, e22, g12) {}

  /// Tensor Frobenius norm (engineering shear scaled back to tensor shear).
  double frobenius() const { return embedded().norm(); }

  /// Isometric 3-vector embedding (e11, e22, sqrt(2) e12) used for clustering.
  Eigen::Vector3d embedded() const {
    return {voigt[0], voigt[1], std::numbers::sqrt2 * 0.5 * voigt[2]};
  }
  static MacroStrain from_embedded(const Eigen::Vector3d& x) {
    return {x[0], x[1], std::numbers::sqrt2 * x[2]};
  }

  MacroStrain operator*(double a) const { return MacroStrain(Voigt3(voigt * a)); }
};

enum class BcKind { linear, periodic };

struct HomogenizedResponse {
  Voigt3 sigma = Voigt3::Zero();
  Mat3 tangent = Mat3::Zero();
};

/// Affine displacement field u = E . x at every node.
inline Vec affine_field(const Mesh& mesh, const MacroStrain& E) {
  Vec u(mesh.n_dofs());
  const double e11 = E.voigt[0], e22 = E.voigt[1], e12 = 0.5 * E.voigt[2];
  for (const auto& nd : mesh.nodes) {
    u[2 * nd.id] = e11 * nd.x + e12 * nd.y;
    u[2 * nd.id + 1] = e12 * nd.x + e22 * nd.y;
  }
  return u;
}

namespace detail {

inline void fix_dof(DofMap& dm, int dof, double value) {
  dm.dofs[dof].kind = DofKind::fixed;
  dm.dofs[dof].value = value;
}

inline std::vector<std::pair<int, int>> match_boundary(const Mesh& mesh, const std::string& slave,
                                                       const std::string& master, bool by_y) {
  auto key = [&](int id) { return by_y ? mesh.nodes[id].y : mesh.nodes[id].x; };
  auto sorted = [&](const std::string& set) {
    std::vector<int> ids = mesh.node_set(set);
    std::sort(ids.begin(), ids.end(), [&](int a, int b) { return key(a) < key(b); });
    return ids;
  };
  auto s = sorted(slave), m = sorted(master);
  require(s.size() == m.size(), ErrorCode::bc, "periodic boundary sets differ in size");
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < s.size(); ++i) {
    require(std::abs(key(s[i]) - key(m[i])) < 1e-9, ErrorCode::bc,
            "unmatched periodic boundary nodes");
    pairs.emplace_back(s[i], m[i]);
  }
  return pairs;
}

}  // namespace detail

/// Assign the free/fixed/tied partition for a macro strain E.
/// linear: u = E.x on the whole boundary. periodic: boundary fluctuations tied
/// slave-to-master with affine offsets, the four corner nodes pinned to E.x.
inline DofMap apply_macro_strain(const Mesh& mesh, const MacroStrain& E, BcKind kind) {
  DofMap dm;
  dm.dofs.assign(mesh.n_dofs(), Dof{});
  const Vec affine = affine_field(mesh, E);

  if (kind == BcKind::linear) {
    for (const char* set : {"left", "right", "bottom", "top"})
      for (int nd : mesh.node_set(set))
        for (int c = 0; c < 2; ++c) detail::fix_dof(dm, DofMap::dof_of(nd, c), affine[2 * nd + c]);
  } else {
    std::vector<char> is_corner(mesh.n_nodes(), 0);
    auto in_set = [&](const std::string& s, int id) {
      const auto& v = mesh.node_set(s);
      return std::find(v.begin(), v.end(), id) != v.end();
    };
    for (int id : mesh.node_set("left"))
      if (in_set("bottom", id) || in_set("top", id)) is_corner[id] = 1;
    for (int id : mesh.node_set("right"))
      if (in_set("bottom", id) || in_set("top", id)) is_corner[id] = 1;
    for (int n = 0; n < mesh.n_nodes(); ++n)
      if (is_corner[n])
        for (int c = 0; c < 2; ++c) detail::fix_dof(dm, DofMap::dof_of(n, c), affine[2 * n + c]);

    auto tie_pairs = [&](const std::vector<std::pair<int, int>>& pairs) {
      for (auto [s, m] : pairs) {
        if (is_corner[s] || is_corner[m]) continue;
        for (int c = 0; c < 2; ++c) {
          Dof& d = dm.dofs[DofMap::dof_of(s, c)];
          d.kind = DofKind::tied;
          d.free_index = DofMap::dof_of(m, c);  // master dof id; renumbered below
          d.value = affine[DofMap::dof_of(s, c)] - affine[DofMap::dof_of(m, c)];
        }
      }
    };
    tie_pairs(detail::match_boundary(mesh, "right", "left", /*by_y=*/true));
    tie_pairs(detail::match_boundary(mesh, "top", "bottom", /*by_y=*/false));
  }

  dm.n_free = 0;
  for (auto& d : dm.dofs)
    if (d.kind == DofKind::free) d.free_index = dm.n_free++;
  for (auto& d : dm.dofs)
    if (d.kind == DofKind::tied) {
      const Dof& master = dm.dofs[d.free_index];
      require(master.kind == DofKind::free, ErrorCode::bc, "periodic master is not free");
      d.free_index = master.free_index;
    }
  return dm;
}

/// Refresh the prescribed values of an existing DofMap for a new macro strain.
inline void set_macro_strain(DofMap& dm, const Mesh& mesh, const MacroStrain& E) {
  const Vec affine = affine_field(mesh, E);
  for (int i = 0; i < dm.n_total(); ++i) {
    Dof& d = dm.dofs[i];
    if (d.kind == DofKind::fixed) d.value = affine[i];
  }
  // tied offsets: E.(x_slave - x_master); recover the master through the free index
  std::vector<int> free_to_dof(dm.n_free, -1);
  for (int i = 0; i < dm.n_total(); ++i)
    if (dm.dofs[i].kind == DofKind::free) free_to_dof[dm.dofs[i].free_index] = i;
  for (int i = 0; i < dm.n_total(); ++i) {
    Dof& d = dm.dofs[i];
    if (d.kind == DofKind::tied) d.value = affine[i] - affine[free_to_dof[d.free_index]];
  }
}

struct IpData {
  int element = 0;
  Eigen::Matrix<double, 3, 12> B;
  double weight = 0.0;  // quadrature weight * detJ
};

/// Immutable RVE problem: mesh, materials by id, cached integration-point data.
struct RveProblem {
  Mesh mesh;
  std::vector<Material> materials;
  std::vector<IpData> ips;
  double volume = 0.0;

  int n_ips() const { return static_cast<int>(ips.size()); }
};

inline RveProblem build_rve_problem(Mesh mesh, std::vector<Material> materials) {
  RveProblem p;
  p.mesh = std::move(mesh);
  p.materials = std::move(materials);
  for (const auto& m : p.materials) validate(m);
  const auto& q = QuadratureRule::tri3();
  p.ips.reserve(p.mesh.n_elements() * q.size());
  for (int e = 0; e < p.mesh.n_elements(); ++e) {
    const auto& el = p.mesh.elements[e];
    require(el.material_id >= 0 && el.material_id < static_cast<int>(p.materials.size()),
            ErrorCode::config, "element material id out of range");
    for (int g = 0; g < q.size(); ++g) {
      auto se = shape_eval(p.mesh, el, q.points[g][0], q.points[g][1]);
      p.ips.push_back({e, se.B, q.weights[g] * se.detJ});
    }
  }
  p.volume = p.mesh.area;
  return p;
}

inline void gather_element(const Mesh& mesh, const ElementTri6& el, const Vec& u_full,
                           Eigen::Matrix<double, 12, 1>& u_el) {
  for (int a = 0; a < 6; ++a) {
    u_el[2 * a] = u_full[2 * el.nodes[a]];
    u_el[2 * a + 1] = u_full[2 * el.nodes[a] + 1];
  }
}

struct MicroOptions {
  double tol = 1e-8;
  int max_iter = 30;
  double dt = 1.0;
  bool assemble_stiffness = true;
};

struct MicroResult {
  bool converged = false;
  int iterations = 0;
  std::vector<double> residual_history;
  Vec u_full;                          // total displacement field
  std::vector<MaterialState> states;   // trial states at the converged point
  std::vector<Voigt3> sigma;           // per-ip stress
  std::vector<Mat3> tangent;           // per-ip algorithmic tangent
  SpMat stiffness;                     // reduced stiffness at the converged state
};

namespace detail {

struct AssembledSystem {
  Vec f_full;
  std::vector<Triplet> triplets;
};

inline void assemble_micro(const RveProblem& p, const DofMap& dm, const Vec& u_full,
                           const std::vector<MaterialState>& states0, double dt,
                           bool with_stiffness, MicroResult& scratch, AssembledSystem& sys) {
  const int nq = QuadratureRule::tri3().size();
  sys.f_full.setZero(p.mesh.n_dofs());
  sys.triplets.clear();

  Eigen::Matrix<double, 12, 1> u_el;
  Eigen::Matrix<double, 12, 12> k_el;
  Eigen::Matrix<double, 12, 1> f_el;

  for (int e = 0; e < p.mesh.n_elements(); ++e) {
    const auto& el = p.mesh.elements[e];
    gather_element(p.mesh, el, u_full, u_el);
    k_el.setZero();
    f_el.setZero();
    for (int g = 0; g < nq; ++g) {
      const int ip = e * nq + g;
      const IpData& ipd = p.ips[ip];
      const Voigt3 eps = ipd.B * u_el;
      auto res = update_material(p.materials[el.material_id], states0[ip], eps, dt);
      scratch.states[ip] = res.state;
      scratch.sigma[ip] = res.sigma;
      scratch.tangent[ip] = res.tangent;
      f_el.noalias() += ipd.B.transpose() * res.sigma * ipd.weight;
      if (with_stiffness)
        k_el.noalias() += ipd.B.transpose() * res.tangent * ipd.B * ipd.weight;
    }
    for (int a = 0; a < 12; ++a) {
      const int ga = DofMap::dof_of(el.nodes[a / 2], a % 2);
      sys.f_full[ga] += f_el[a];
      if (!with_stiffness) continue;
      const Dof& da = dm.dofs[ga];
      if (da.kind == DofKind::fixed) continue;
      for (int b = 0; b < 12; ++b) {
        const int gb = DofMap::dof_of(el.nodes[b / 2], b % 2);
        const Dof& db = dm.dofs[gb];
        if (db.kind == DofKind::fixed) continue;
        sys.triplets.emplace_back(da.free_index, db.free_index, k_el(a, b));
      }
    }
  }
}

inline double reaction_norm(const DofMap& dm, const Vec& f_full) {
  double s = 0.0;
  for (int i = 0; i < dm.n_total(); ++i)
    if (dm.dofs[i].kind == DofKind::fixed) s += f_full[i] * f_full[i];
  return std::sqrt(s);
}

}  // namespace detail

/// Free-DOF start vector consistent with the affine field E.x everywhere.
inline Vec affine_free_start(const Mesh& mesh, const DofMap& dm, const MacroStrain& E) {
  const Vec aff = affine_field(mesh, E);
  Vec u = Vec::Zero(dm.n_free);
  for (int i = 0; i < dm.n_total(); ++i)
    if (dm.dofs[i].kind == DofKind::free) u[dm.dofs[i].free_index] = aff[i];
  return u;
}

/// Newton solve of the strain-driven micro problem with a backtracking line
/// search. States are evaluated from the committed `states0` each iteration;
/// the caller commits `result.states` only after acceptance.
inline MicroResult micro_newton(const RveProblem& p, const DofMap& dm,
                                const std::vector<MaterialState>& states0, const Vec& u_free_init,
                                const MicroOptions& opts = {}) {
  MicroResult r;
  r.states.resize(p.n_ips());
  r.sigma.resize(p.n_ips());
  r.tangent.resize(p.n_ips());

  Vec u_free = u_free_init.size() == dm.n_free ? u_free_init : Vec::Zero(dm.n_free);
  detail::AssembledSystem sys;
  Eigen::SimplicialLDLT<SpMat> ldlt;
  bool analyzed = false;
  SpMat K(dm.n_free, dm.n_free);

  double ref = 0.0;
  for (int it = 0; it <= opts.max_iter; ++it) {
    r.u_full = dm.expand(u_free);
    detail::assemble_micro(p, dm, r.u_full, states0, opts.dt, opts.assemble_stiffness, r, sys);
    const Vec res = dm.reduce(sys.f_full);
    const double rn = res.norm();
    r.residual_history.push_back(rn);
    if (it == 0) ref = std::max({rn, detail::reaction_norm(dm, sys.f_full), 1e-30});
    if (rn <= opts.tol * ref) {
      r.converged = true;
      r.iterations = it;
      if (opts.assemble_stiffness) {
        K.setFromTriplets(sys.triplets.begin(), sys.triplets.end());
        r.stiffness = K;
      }
      return r;
    }
    if (it == opts.max_iter) break;

    K.setFromTriplets(sys.triplets.begin(), sys.triplets.end());
    if (!analyzed) {
      ldlt.analyzePattern(K);
      analyzed = true;
    }
    ldlt.factorize(K);
    require(ldlt.info() == Eigen::Success, ErrorCode::solver, "micro stiffness factorization failed");
    const Vec du = ldlt.solve(Vec(-res));

    // backtracking on the residual norm; full steps are free of extra work
    double alpha = 1.0;
    double best_alpha = 1.0, best_rn = std::numeric_limits<double>::infinity();
    for (int ls = 0; ls < 8; ++ls) {
      detail::assemble_micro(p, dm, dm.expand(Vec(u_free + alpha * du)), states0, opts.dt, false,
                             r, sys);
      const double trial = dm.reduce(sys.f_full).norm();
      if (trial < best_rn) {
        best_rn = trial;
        best_alpha = alpha;
      }
      if (trial <= (1.0 - 1e-4 * alpha) * rn) break;
      alpha *= 0.5;
    }
    u_free += best_alpha * du;
  }
  r.converged = false;
  r.iterations = opts.max_iter;
  return r;
}

/// Volume-averaged stress and the exact consistent macro tangent obtained from
/// three sensitivity solves with the converged stiffness.
inline HomogenizedResponse homogenize(const RveProblem& p, const DofMap& dm,
                                      const MicroResult& micro) {
  require(micro.converged, ErrorCode::solver, "homogenize requires a converged micro state");
  HomogenizedResponse out;
  for (int ip = 0; ip < p.n_ips(); ++ip)
    out.sigma += p.ips[ip].weight * micro.sigma[ip];
  out.sigma /= p.volume;

  // rhs_j = reduce( sum_ip w B^T C e_j ): internal-force sensitivity to E
  Mat rhs_full = Mat::Zero(p.mesh.n_dofs(), 3);
  Mat3 c_avg = Mat3::Zero();
  for (int ip = 0; ip < p.n_ips(); ++ip) {
    const IpData& ipd = p.ips[ip];
    const auto& el = p.mesh.elements[ipd.element];
    const Eigen::Matrix<double, 12, 3> bc = ipd.B.transpose() * micro.tangent[ip] * ipd.weight;
    for (int a = 0; a < 12; ++a) {
      const int ga = DofMap::dof_of(el.nodes[a / 2], a % 2);
      rhs_full.row(ga) += bc.row(a);
    }
    c_avg += ipd.weight * micro.tangent[ip];
  }

  Eigen::SimplicialLDLT<SpMat> ldlt(micro.stiffness);
  require(ldlt.info() == Eigen::Success, ErrorCode::solver,
          "homogenize: singular converged stiffness");

  Mat3 c_hom = c_avg;
  Eigen::Matrix<double, 12, 1> h_el;
  for (int j = 0; j < 3; ++j) {
    Vec rhs = Vec::Zero(dm.n_free);
    for (int i = 0; i < dm.n_total(); ++i)
      if (dm.dofs[i].kind != DofKind::fixed) rhs[dm.dofs[i].free_index] += rhs_full(i, j);
    const Vec h = ldlt.solve(Vec(-rhs));
    const Vec h_full = dm.expand_homogeneous(h);
    for (int ip = 0; ip < p.n_ips(); ++ip) {
      const IpData& ipd = p.ips[ip];
      gather_element(p.mesh, p.mesh.elements[ipd.element], h_full, h_el);
      c_hom.col(j) += ipd.weight * (micro.tangent[ip] * (ipd.B * h_el));
    }
  }
  out.tangent = c_hom / p.volume;
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories and snapshot recording

struct SnapshotMeta {
  int trajectory = 0;
  int increment = 0;
  double load_factor = 0.0;
};

/// Columns of converged fluctuation fields (x_u) or of per-point weighted
/// reduced-force integrands (x_f), depending on who records into it.
struct SnapshotRecorder {
  std::vector<Vec> columns;
  std::vector<SnapshotMeta> meta;

  int n_columns() const { return static_cast<int>(columns.size()); }

  void record(Vec column, const SnapshotMeta& m) {
    columns.push_back(std::move(column));
    meta.push_back(m);
  }

  Mat matrix() const {
    if (columns.empty()) return Mat();
    Mat x(columns.front().size(), columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) x.col(c) = columns[c];
    return x;
  }
};

struct PathStep {
  MacroStrain E;
  double dt = 1.0;
};

inline std::vector<PathStep> make_monotonic_path(const MacroStrain& end, int n_steps,
                                                 double total_time = 1.0) {
  require(n_steps >= 1, ErrorCode::config, "path needs at least one step");
  std::vector<PathStep> path;
  path.reserve(n_steps);
  for (int k = 1; k <= n_steps; ++k)
    path.push_back({end * (static_cast<double>(k) / n_steps), total_time / n_steps});
  return path;
}

struct TrajectoryOptions {
  MicroOptions micro;
  int max_bisections = 4;
  int trajectory_id = 0;
};

/// Run a strain path on one RVE, committing states per converged increment and
/// recording the fluctuation field into `recorder` (if given). Load steps are
/// bisected on nonconvergence.
inline std::vector<MaterialState> run_trajectory(const RveProblem& p, BcKind bc,
                                                 const std::vector<PathStep>& path,
                                                 std::vector<MaterialState> states,
                                                 SnapshotRecorder* recorder,
                                                 const TrajectoryOptions& opts = {}) {
  require(states.size() == static_cast<std::size_t>(p.n_ips()), ErrorCode::config,
          "state count mismatch");
  DofMap dm = apply_macro_strain(p.mesh, MacroStrain(), bc);
  Vec u_free = Vec::Zero(dm.n_free);
  MacroStrain E_prev, E_committed;

  for (std::size_t k = 0; k < path.size(); ++k) {
    double done = 0.0;  // fraction of this increment already committed
    double frac = 1.0;
    int bisections = 0;
    while (done < 1.0 - 1e-12) {
      const double target = std::min(1.0, done + frac);
      MacroStrain E(Voigt3(E_prev.voigt + (path[k].E.voigt - E_prev.voigt) * target));
      set_macro_strain(dm, p.mesh, E);
      MicroOptions mo = opts.micro;
      mo.dt = path[k].dt * (target - done);
      // warm start: previous solution shifted by the affine increment
      const Vec u_start =
          u_free + affine_free_start(p.mesh, dm, MacroStrain(Voigt3(E.voigt - E_committed.voigt)));
      auto res = micro_newton(p, dm, states, u_start, mo);
      if (!res.converged) {
        require(++bisections <= opts.max_bisections, ErrorCode::solver,
                "micro trajectory failed after max bisections (residual " +
                    std::to_string(res.residual_history.back()) + ")");
        frac *= 0.5;
        continue;
      }
      states = res.states;
      for (int i = 0; i < dm.n_total(); ++i)
        if (dm.dofs[i].kind == DofKind::free) u_free[dm.dofs[i].free_index] = res.u_full[i];
      E_committed = E;
      done = target;
      if (done >= 1.0 - 1e-12 && recorder) {
        const Vec w = res.u_full - affine_field(p.mesh, E);
        recorder->record(w, {opts.trajectory_id, static_cast<int>(k),
                             static_cast<double>(k + 1) / static_cast<double>(path.size())});
      }
    }
    E_prev = path[k].E;
  }
  return states;
}

// ---------------------------------------------------------------------------
// Mixed control: prescribe some macro-strain components, drive the remaining
// ones so the conjugate macro stresses hit their targets.

struct MixedControlStep {
  Voigt3 E_prescribed = Voigt3::Zero();   // used where control[j] is true
  Voigt3 sigma_target = Voigt3::Zero();   // used where control[j] is false
  std::array<bool, 3> control = {true, true, true};
  double dt = 1.0;
};

struct MixedControlState {
  DofMap dm;
  Vec u_free;
  std::vector<MaterialState> states;
  MacroStrain E;
  HomogenizedResponse hom;

  static MixedControlState init(const RveProblem& p, BcKind bc) {
    MixedControlState s;
    s.dm = apply_macro_strain(p.mesh, MacroStrain(), bc);
    s.u_free = Vec::Zero(s.dm.n_free);
    s.states.assign(p.n_ips(), MaterialState{});
    return s;
  }
};

/// One mixed-control increment: outer Newton on the unknown strain components
/// using the homogenized consistent tangent. Commits states on success.
inline void mixed_control_step(const RveProblem& p, MixedControlState& mc,
                               const MixedControlStep& step, double tol = 1e-10,
                               int max_iter = 25) {
  std::vector<int> unknown;
  for (int j = 0; j < 3; ++j)
    if (!step.control[j]) unknown.push_back(j);

  Voigt3 E = mc.E.voigt;
  for (int j = 0; j < 3; ++j)
    if (step.control[j]) E[j] = step.E_prescribed[j];

  MicroResult micro;
  const double scale = std::max(1e-12, step.sigma_target.norm()) + 1e-3;
  Vec u_work = mc.u_free;
  Voigt3 E_work = mc.E.voigt;
  for (int it = 0; it <= max_iter; ++it) {
    set_macro_strain(mc.dm, p.mesh, MacroStrain(E));
    MicroOptions mo;
    mo.dt = step.dt;
    const Vec u_start = u_work + affine_free_start(p.mesh, mc.dm, MacroStrain(Voigt3(E - E_work)));
    micro = micro_newton(p, mc.dm, mc.states, u_start, mo);
    for (int i = 0; i < mc.dm.n_total(); ++i)
      if (mc.dm.dofs[i].kind == DofKind::free) u_work[mc.dm.dofs[i].free_index] = micro.u_full[i];
    E_work = E;
    require(micro.converged, ErrorCode::solver, "mixed control: micro solve failed");
    mc.hom = homogenize(p, mc.dm, micro);
    if (unknown.empty()) break;

    Vec res(unknown.size());
    for (std::size_t a = 0; a < unknown.size(); ++a)
      res[a] = mc.hom.sigma[unknown[a]] - step.sigma_target[unknown[a]];
    if (res.norm() <= tol * scale) break;
    require(it < max_iter, ErrorCode::solver, "mixed control did not converge");

    Mat J(unknown.size(), unknown.size());
    for (std::size_t a = 0; a < unknown.size(); ++a)
      for (std::size_t b = 0; b < unknown.size(); ++b)
        J(a, b) = mc.hom.tangent(unknown[a], unknown[b]);
    const Vec dE = J.fullPivLu().solve(-res);
    for (std::size_t a = 0; a < unknown.size(); ++a) E[unknown[a]] += dE[a];
  }

  mc.states = micro.states;
  mc.E = MacroStrain(E);
  for (int i = 0; i < mc.dm.n_total(); ++i)
    if (mc.dm.dofs[i].kind == DofKind::free) mc.u_free[mc.dm.dofs[i].free_index] = micro.u_full[i];
}

}  // namespace fe2rom
