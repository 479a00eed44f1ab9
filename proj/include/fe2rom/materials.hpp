#pragma once

#include "fe2rom/common.hpp"

#include <array>
#include <variant>

namespace fe2rom {

// Plane-strain constitutive models. Internally everything runs on packed
// 4-component tensors (11, 22, 33, 12) with the 12-slot holding the *tensor*
// shear component; the out-of-plane direction is kept so the J2 radius is
// correct under plane strain. The element-facing interface condenses to
// engineering Voigt (e11, e22, g12) / (s11, s22, s12).

using Voigt4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

inline double trace4(const Voigt4& v) { return v[0] + v[1] + v[2]; }

inline Voigt4 dev4(const Voigt4& v) {
  const double p = trace4(v) / 3.0;
  return {v[0] - p, v[1] - p, v[2] - p, v[3]};
}

inline double contract4(const Voigt4& a, const Voigt4& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * a[3] * b[3];
}

inline double norm4(const Voigt4& v) { return std::sqrt(contract4(v, v)); }

/// von Mises equivalent stress sqrt(3 J2).
inline double vonmises4(const Voigt4& sig) { return std::sqrt(1.5) * norm4(dev4(sig)); }

inline Voigt4 strain4_from_voigt(const Voigt3& e) { return {e[0], e[1], 0.0, 0.5 * e[2]}; }

struct ElasticParams {
  double E = 1.0;
  double nu = 0.3;

  double lambda() const { return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)); }
  double mu() const { return 0.5 * E / (1.0 + nu); }
};

struct J2LinearParams {
  ElasticParams elastic;
  double sigma_y0 = 0.01;
  double hardening = 0.016;
};

/// Mises plasticity with hardening curve sy(e) = sy0 * (1 + E e / sy0)^N.
struct PowerLawParams {
  double E = 1.0;
  double nu = 0.3;
  double sigma_y0 = 0.01;
  double N = 0.1;

  ElasticParams elastic() const { return {E, nu}; }
  double yield_stress(double eq) const {
    return sigma_y0 * std::pow(1.0 + E * eq / sigma_y0, N);
  }
  double yield_slope(double eq) const {
    return E * N * std::pow(1.0 + E * eq / sigma_y0, N - 1.0);
  }
};

/// Strain-hardening creep: deq/dt = (q/A)^(n/(m+1)) * ((m+1) eq)^(m/(m+1)).
struct CreepParams {
  double E = 1.0;
  double nu = 0.14;
  double A = 22.09;
  double n = 1.06;
  double m = -0.56;

  ElasticParams elastic() const { return {E, nu}; }
};

using Material = std::variant<ElasticParams, J2LinearParams, PowerLawParams, CreepParams>;

inline void validate(const ElasticParams& p) {
  require(p.E > 0.0 && p.nu >= 0.0 && p.nu < 0.5, ErrorCode::config, "invalid elastic parameters");
}
inline void validate(const J2LinearParams& p) {
  validate(p.elastic);
  require(p.sigma_y0 > 0.0 && p.hardening >= 0.0, ErrorCode::config, "invalid J2 parameters");
}
inline void validate(const PowerLawParams& p) {
  validate(p.elastic());
  require(p.sigma_y0 > 0.0 && p.N > 0.0 && p.N < 1.0, ErrorCode::config,
          "invalid power-law parameters");
}
inline void validate(const CreepParams& p) {
  validate(p.elastic());
  require(p.A > 0.0 && p.n > 0.0 && p.m > -1.0, ErrorCode::config, "invalid creep parameters");
}
inline void validate(const Material& m) {
  std::visit([](const auto& p) { validate(p); }, m);
}

/// Per-integration-point history. eps_p holds plastic (or creep) strain in
/// packed tensor components; eq is the equivalent plastic/creep strain.
struct MaterialState {
  Voigt4 eps_p = Voigt4::Zero();
  double eq = 0.0;
  double sigma33 = 0.0;
};

struct MaterialResult4 {
  Voigt4 sigma = Voigt4::Zero();
  Mat4 tangent = Mat4::Zero();
  MaterialState state;
};

struct MaterialResult {
  Voigt3 sigma = Voigt3::Zero();
  Mat3 tangent = Mat3::Zero();
  MaterialState state;
};

namespace detail {

inline Mat4 elastic_tangent4(double lambda, double mu) {
  Mat4 d = Mat4::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) d(i, j) = lambda;
  for (int i = 0; i < 4; ++i) d(i, i) += 2.0 * mu;
  return d;
}

inline Voigt4 elastic_stress4(double lambda, double mu, const Voigt4& eps_e) {
  const double lt = lambda * trace4(eps_e);
  return {lt + 2.0 * mu * eps_e[0], lt + 2.0 * mu * eps_e[1], lt + 2.0 * mu * eps_e[2],
          2.0 * mu * eps_e[3]};
}

/// Algorithmic tangent of a radial-return update sigma = sig_tr - 3 mu dlam s_tr/q_tr,
/// parameterized by the scalar sensitivity d(dlam)/d(q_tr) of the return solve.
inline Mat4 radial_return_tangent4(double lambda, double mu, const Voigt4& n_unit, double q_tr,
                                   double dlam, double dlam_dqtr) {
  Mat4 d = elastic_tangent4(lambda, mu);
  static const Mat4 pdev = [] {
    Mat4 p = Mat4::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) p(i, j) = (i == j ? 2.0 : -1.0) / 3.0;
    p(3, 3) = 1.0;
    return p;
  }();
  const double c1 = 6.0 * mu * mu * dlam / q_tr;
  const double c2 = 6.0 * mu * mu * (dlam_dqtr - dlam / q_tr);
  const Voigt4 n_dbl = {n_unit[0], n_unit[1], n_unit[2], 2.0 * n_unit[3]};
  d -= c1 * pdev;
  d -= c2 * (n_unit * n_dbl.transpose());
  return d;
}

struct TrialState {
  Voigt4 sig_tr;
  Voigt4 s_tr;
  double q_tr = 0.0;
};

inline TrialState trial_state(double lambda, double mu, const MaterialState& s0,
                              const Voigt4& eps) {
  TrialState t;
  t.sig_tr = elastic_stress4(lambda, mu, Voigt4(eps - s0.eps_p));
  t.s_tr = dev4(t.sig_tr);
  t.q_tr = std::sqrt(1.5) * norm4(t.s_tr);
  return t;
}

/// Finish a radial return: plastic/creep multiplier dlam along the trial
/// deviator direction.
inline MaterialResult4 finish_return(double lambda, double mu, const MaterialState& s0,
                                     const TrialState& t, double dlam, double dlam_dqtr) {
  MaterialResult4 out;
  const Voigt4 dir = t.s_tr / t.q_tr;  // sqrt(2/3) * unit deviator
  out.sigma = t.sig_tr - 3.0 * mu * dlam * dir;
  out.state = s0;
  out.state.eps_p += 1.5 * dlam * dir;
  out.state.eq = s0.eq + dlam;
  out.state.sigma33 = out.sigma[2];
  const Voigt4 n_unit = t.s_tr / norm4(t.s_tr);
  out.tangent = radial_return_tangent4(lambda, mu, n_unit, t.q_tr, dlam, dlam_dqtr);
  return out;
}

inline MaterialResult4 elastic_result(double lambda, double mu, const MaterialState& s0,
                                      const TrialState& t) {
  MaterialResult4 out;
  out.sigma = t.sig_tr;
  out.tangent = elastic_tangent4(lambda, mu);
  out.state = s0;
  out.state.sigma33 = t.sig_tr[2];
  return out;
}

}  // namespace detail

inline MaterialResult4 update4(const ElasticParams& p, const MaterialState& s0, const Voigt4& eps,
                               double /*dt*/) {
  auto t = detail::trial_state(p.lambda(), p.mu(), s0, eps);
  return detail::elastic_result(p.lambda(), p.mu(), s0, t);
}

inline MaterialResult4 update4(const J2LinearParams& p, const MaterialState& s0, const Voigt4& eps,
                               double /*dt*/) {
  const double lambda = p.elastic.lambda(), mu = p.elastic.mu();
  auto t = detail::trial_state(lambda, mu, s0, eps);
  const double f = t.q_tr - (p.sigma_y0 + p.hardening * s0.eq);
  if (f <= 0.0) return detail::elastic_result(lambda, mu, s0, t);
  const double denom = 3.0 * mu + p.hardening;
  const double dlam = f / denom;  // closed form for linear hardening
  return detail::finish_return(lambda, mu, s0, t, dlam, 1.0 / denom);
}

inline MaterialResult4 update4(const PowerLawParams& p, const MaterialState& s0, const Voigt4& eps,
                               double /*dt*/) {
  const double lambda = p.elastic().lambda(), mu = p.elastic().mu();
  auto t = detail::trial_state(lambda, mu, s0, eps);
  const double f_tr = t.q_tr - p.yield_stress(s0.eq);
  if (f_tr <= 0.0) return detail::elastic_result(lambda, mu, s0, t);

  // g(dlam) = q_tr - 3 mu dlam - sy(eq0 + dlam), strictly decreasing.
  auto g = [&](double x) { return t.q_tr - 3.0 * mu * x - p.yield_stress(s0.eq + x); };
  double lo = 0.0, hi = f_tr / (3.0 * mu);
  double x = hi * 0.5;
  const double tol = 1e-12 * std::max(p.sigma_y0, t.q_tr);
  bool converged = false;
  for (int it = 0; it < 50; ++it) {
    const double gx = g(x);
    if (std::abs(gx) <= tol) {
      converged = true;
      break;
    }
    if (gx > 0.0)
      lo = x;
    else
      hi = x;
    const double slope = 3.0 * mu + p.yield_slope(s0.eq + x);
    double next = x + gx / slope;  // Newton on decreasing g
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  if (!converged) fail(ErrorCode::material, "power-law return map did not converge");
  return detail::finish_return(lambda, mu, s0, t, x, 1.0 / (3.0 * mu + p.yield_slope(s0.eq + x)));
}

inline MaterialResult4 update4(const CreepParams& p, const MaterialState& s0, const Voigt4& eps,
                               double dt) {
  require(dt > 0.0, ErrorCode::material, "creep update needs dt > 0");
  const double lambda = p.elastic().lambda(), mu = p.elastic().mu();
  auto t = detail::trial_state(lambda, mu, s0, eps);
  if (t.q_tr <= 1e-14 * p.E) return detail::elastic_result(lambda, mu, s0, t);

  const double p1 = p.n / (p.m + 1.0);
  const double p2 = p.m / (p.m + 1.0);
  const double eq_floor = 1e-12;  // strain-hardening regularization at virgin state
  auto hard = [&](double e) { return std::pow((p.m + 1.0) * std::max(e, eq_floor), p2); };
  auto hard_slope = [&](double e) {
    if (e <= eq_floor) return 0.0;
    return p2 * (p.m + 1.0) * std::pow((p.m + 1.0) * e, p2 - 1.0);
  };
  auto rate_q = [&](double q) { return std::pow(q / p.A, p1); };
  auto rate_q_slope = [&](double q) { return p1 / p.A * std::pow(q / p.A, p1 - 1.0); };

  // R(dlam) = dlam - dt * (q/A)^p1 * ((m+1)(eq0+dlam))^p2 with q = q_tr - 3 mu dlam.
  auto R = [&](double x) { return x - dt * rate_q(t.q_tr - 3.0 * mu * x) * hard(s0.eq + x); };
  double lo = 0.0, hi = t.q_tr / (3.0 * mu);
  if (R(hi) < 0.0) fail(ErrorCode::material, "creep return bracket failure");
  double x = 0.5 * hi;
  const double tol = 1e-14 * std::max(1.0, hi);
  bool converged = false;
  double Rp = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double q = t.q_tr - 3.0 * mu * x;
    const double e = s0.eq + x;
    const double Rx = x - dt * rate_q(q) * hard(e);
    Rp = 1.0 + 3.0 * mu * dt * rate_q_slope(q) * hard(e) - dt * rate_q(q) * hard_slope(e);
    if (std::abs(Rx) <= tol) {
      converged = true;
      break;
    }
    if (Rx < 0.0)
      lo = x;
    else
      hi = x;
    double next = (Rp > 0.0) ? x - Rx / Rp : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  if (!converged) fail(ErrorCode::material, "creep return map did not converge");
  if (x <= 0.0) return detail::elastic_result(lambda, mu, s0, t);

  const double q = t.q_tr - 3.0 * mu * x;
  const double dlam_dqtr = dt * rate_q_slope(q) * hard(s0.eq + x) / Rp;
  return detail::finish_return(lambda, mu, s0, t, x, dlam_dqtr);
}

inline MaterialResult4 update4(const Material& mat, const MaterialState& s0, const Voigt4& eps,
                               double dt) {
  return std::visit([&](const auto& p) { return update4(p, s0, eps, dt); }, mat);
}

/// Condense the packed 4x4 tangent to plane-strain engineering Voigt.
inline Mat3 condense_tangent(const Mat4& d) {
  Mat3 c;
  const std::array<int, 3> rows = {0, 1, 3};
  for (int i = 0; i < 3; ++i) {
    c(i, 0) = d(rows[i], 0);
    c(i, 1) = d(rows[i], 1);
    c(i, 2) = 0.5 * d(rows[i], 3);
  }
  return c;
}

/// Plane-strain update: e33 = 0, engineering shear in and out.
inline MaterialResult update_material(const Material& mat, const MaterialState& s0,
                                      const Voigt3& eps, double dt) {
  const MaterialResult4 r4 = update4(mat, s0, strain4_from_voigt(eps), dt);
  MaterialResult out;
  out.sigma = {r4.sigma[0], r4.sigma[1], r4.sigma[3]};
  out.tangent = condense_tangent(r4.tangent);
  out.state = r4.state;
  return out;
}

/// Plane-strain Hooke matrix.
inline Mat3 elastic_tangent(const ElasticParams& p) {
  return condense_tangent(detail::elastic_tangent4(p.lambda(), p.mu()));
}

inline std::pair<Voigt3, Mat3> elastic_stress(const ElasticParams& p, const Voigt3& eps) {
  const Mat3 c = elastic_tangent(p);
  return {c * eps, c};
}

inline ElasticParams elastic_part(const Material& mat) {
  struct Visitor {
    ElasticParams operator()(const ElasticParams& p) const { return p; }
    ElasticParams operator()(const J2LinearParams& p) const { return p.elastic; }
    ElasticParams operator()(const PowerLawParams& p) const { return p.elastic(); }
    ElasticParams operator()(const CreepParams& p) const { return p.elastic(); }
  };
  return std::visit(Visitor{}, mat);
}

}  // namespace fe2rom
