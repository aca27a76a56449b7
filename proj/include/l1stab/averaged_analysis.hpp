#pragma once

#include <map>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "front_tracking.hpp"
#include "json.hpp"

namespace l1stab {

enum class ShockClass { Lax, SlowUnder, FastUnder, Rarefaction, Degenerate };

inline const char* class_name(ShockClass c) {
  switch (c) {
    case ShockClass::Lax: return "Lax";
    case ShockClass::SlowUnder: return "SlowUnder";
    case ShockClass::FastUnder: return "FastUnder";
    case ShockClass::Rarefaction: return "Rarefaction";
    default: return "Degenerate";
  }
}

inline bool undercompressive(ShockClass c) { return c == ShockClass::SlowUnder || c == ShockClass::FastUnder; }

// three-way comparison of (lambda_-, lambda_bar, lambda_+)
inline ShockClass classify_shock(double lm, double lb, double lp) {
  double tol = kClassTol * std::max({1.0, std::abs(lm), std::abs(lb), std::abs(lp)});
  if (std::abs(lm - lb) <= tol || std::abs(lp - lb) <= tol) return ShockClass::Degenerate;
  bool left_above = lm > lb, right_above = lp > lb;
  if (left_above && !right_above) return ShockClass::Lax;
  if (left_above && right_above) return ShockClass::SlowUnder;
  if (!left_above && !right_above) return ShockClass::FastUnder;
  return ShockClass::Rarefaction;
}

// sign tables: same_sign refers to the two one-sided components, rho_jump = rho * (speed jump)
inline ShockClass sign_table_class(bool same_sign, double rho_jump) {
  if (rho_jump == 0) return ShockClass::Degenerate;
  if (same_sign) return rho_jump < 0 ? ShockClass::SlowUnder : ShockClass::FastUnder;
  return rho_jump > 0 ? ShockClass::Lax : ShockClass::Rarefaction;
}

// x -> -x exchanges slow and fast
inline ShockClass mirror_class(ShockClass c) {
  if (c == ShockClass::SlowUnder) return ShockClass::FastUnder;
  if (c == ShockClass::FastUnder) return ShockClass::SlowUnder;
  return c;
}

// ---------------------------------------------------------------- characteristic data

template <int N>
struct CharacteristicData {
  Vec<N> alpha_m{}, alpha_p{};
  Vec<N> beta_m{}, beta_p{};
  Vec<N> gamma_m{}, gamma_p{};
  double reconstruction = 0;
};

namespace detail {
template <int N>
double basis_det(const EigenData<N>& e) {
  if constexpr (N == 1) {
    return e.r[0][0];
  } else {
    return e.r[0][0] * e.r[1][1] - e.r[1][0] * e.r[0][1];
  }
}
}  // namespace detail

template <int N>
CharacteristicData<N> characteristic_components(const EigenData<N>& em, const EigenData<N>& ep, const Vec<N>& psi_m,
                                                const Vec<N>& psi_p) {
  if (std::abs(detail::basis_det(em)) < 1e-12 || std::abs(detail::basis_det(ep)) < 1e-12)
    throw ModelError("characteristic_components: ill-conditioned eigenbasis");
  CharacteristicData<N> cd;
  Vec<N> rm{}, rp{};
  for (int j = 0; j < N; ++j) {
    cd.alpha_m[j] = dot<N>(em.l[j], psi_m);
    cd.alpha_p[j] = dot<N>(ep.l[j], psi_p);
    rm = rm + cd.alpha_m[j] * em.r[j];
    rp = rp + cd.alpha_p[j] * ep.r[j];
  }
  cd.reconstruction = std::max(norm<N>(rm - psi_m), norm<N>(rp - psi_p));
  return cd;
}

template <int N>
void characteristic_flux(CharacteristicData<N>& cd, const EigenData<N>& em, const EigenData<N>& ep, double lam_bar) {
  for (int j = 0; j < N; ++j) {
    cd.beta_m[j] = (lam_bar - em.lam[j]) * std::abs(cd.alpha_m[j]);
    cd.beta_p[j] = (ep.lam[j] - lam_bar) * std::abs(cd.alpha_p[j]);
    cd.gamma_m[j] = (lam_bar - em.lam[j]) * cd.alpha_m[j];
    cd.gamma_p[j] = (lam_bar - ep.lam[j]) * cd.alpha_p[j];
  }
}

// sign table of the characteristic flux across an i-shock; counts violations
template <int N>
int flux_sign_violations(const CharacteristicData<N>& cd, int i, ShockClass cls) {
  double scale = 0;
  for (int j = 0; j < N; ++j) scale = std::max({scale, std::abs(cd.beta_m[j]), std::abs(cd.beta_p[j])});
  double tol = kClassTol * std::max(1.0, scale);
  int bad = 0;
  auto le = [&](double a) { bad += a > tol; };
  for (int j = 0; j < N; ++j) {
    double bm = cd.beta_m[j], bp = cd.beta_p[j];
    if (j < i) {
      le(bp);
      le(-bm);
    } else if (j > i) {
      le(-bp);
      le(bm);
    } else {
      switch (cls) {
        case ShockClass::Lax: le(bp); le(bm); break;
        case ShockClass::Rarefaction: le(-bp); le(-bm); break;
        case ShockClass::SlowUnder: le(-bp); le(bm); break;
        case ShockClass::FastUnder: le(bp); le(-bm); break;
        default: break;
      }
    }
  }
  return bad;
}

struct JumpReport {
  double jump_direct = 0, jump_symmetric = 0;
  bool special_applies = false;
  double special = 0;  // |gamma_i^+ - gamma_i^-| when every transversal component vanishes
};

template <int N>
JumpReport verify_jump_relation(const EigenData<N>& em, const EigenData<N>& ep, const CharacteristicData<N>& cd,
                                int i) {
  JumpReport rep;
  double scale = 1;
  for (int j = 0; j < N; ++j) scale = std::max({scale, std::abs(cd.gamma_m[j]), std::abs(cd.gamma_p[j])});
  for (int j = 0; j < N; ++j) {
    double pred = cd.gamma_m[j];
    for (int k = 0; k < N; ++k) pred += dot<N>(ep.l[j], em.r[k] - ep.r[k]) * cd.gamma_m[k];
    rep.jump_direct = std::max(rep.jump_direct, std::abs(cd.gamma_p[j] - pred) / scale);
    Vec<N> om{};
    for (int k = 0; k < N; ++k) {
      if (k == j) continue;
      om = om + cd.gamma_m[k] * (em.r[k] - ep.r[k]) + (cd.gamma_m[k] - cd.gamma_p[k]) * ep.r[k];
    }
    double predb = cd.gamma_m[j] + dot<N>(em.r[j] + ep.r[j], om) / (1 + dot<N>(ep.r[j], em.r[j]));
    rep.jump_symmetric = std::max(rep.jump_symmetric, std::abs(cd.gamma_p[j] - predb) / scale);
  }
  double trans = 0, ai = std::max(std::abs(cd.alpha_m[i]), std::abs(cd.alpha_p[i]));
  for (int k = 0; k < N; ++k)
    if (k != i) trans = std::max({trans, std::abs(cd.alpha_m[k]), std::abs(cd.alpha_p[k])});
  if (trans <= 1e-14 * std::max(1.0, ai)) {
    rep.special_applies = true;
    rep.special = std::abs(cd.gamma_p[i] - cd.gamma_m[i]) / scale;
  }
  return rep;
}

// ---------------------------------------------------------------- shock records

template <int N>
struct AveragedShockRecord {
  int id = -1, edge = -1;
  int owner = 1;  // bit 1: run, bit 2: run'
  int front = -1, front_p = -1;
  int family = 0;
  WaveKind kind = WaveKind::Shock;
  bool admissible = false;  // entropy verdict of the owning front(s)
  double t0 = 0, t1 = 0, x0 = 0, speed = 0;
  Vec<N> u_m{}, u_p{}, up_m{}, up_p{};
  Averaged<N> am, ap;
  double strength = 0;  // |mu_i(+) - mu_i(-)| of the owner
  double jump = 0;      // |w+ - w-| of the owner states
  ShockClass cls = ShockClass::Degenerate;
  double rho = 0;  // alpha_i(w-, w') * (mu_i(w+) - mu_i(w-)), w the owner, w' the other run
  CharacteristicData<N> cd;
  std::array<bool, N> dominant{};
  bool strong_eig = false, strong_mat = false;
  JumpReport jump_rel;
  int sign_violations = 0;

  double lam_m(int j) const { return am.eig.lam[j]; }
  double lam_p(int j) const { return ap.eig.lam[j]; }
};

// dominance in the "-" form, the transversal sum running over k != i
template <int N>
std::array<bool, N> dominance_test(const AveragedShockRecord<N>& r, double kappa1) {
  int i = r.family;
  double dr = norm<N>(r.ap.eig.r[i] - r.am.eig.r[i]);
  double da = matnorm<N>(r.ap.A - r.am.A);
  double trans = 0;
  for (int k = 0; k < N; ++k)
    if (k != i) trans += std::abs(r.cd.beta_m[k]);
  double rhs = dr * std::abs(r.cd.beta_m[i]) + da * trans;
  std::array<bool, N> out{};
  for (int j = 0; j < N; ++j) out[j] = kappa1 * std::abs(r.cd.beta_m[j]) >= rhs;
  return out;
}

struct StrongDominance {
  bool eig = false, mat = false;
};

template <int N>
StrongDominance strong_dominance_test(const AveragedShockRecord<N>& r, double kappa2) {
  int i = r.family;
  double ai = std::min(std::abs(r.cd.alpha_m[i]), std::abs(r.cd.alpha_p[i]));
  StrongDominance s;
  if (!(ai > 0)) return s;
  double dl = std::abs(r.lam_p(i) - r.lam_m(i));
  double trans = 0;
  for (int k = 0; k < N; ++k)
    if (k != i) trans += std::abs(r.cd.alpha_m[k]);
  double dr = norm<N>(r.ap.eig.r[i] - r.am.eig.r[i]);
  double lhs = kappa2 * dl * ai;
  s.eig = lhs >= dr * std::abs(r.lam_m(i) - r.speed) * std::abs(r.cd.alpha_m[i]) + r.jump * trans;
  s.mat = lhs >= matnorm<N>(r.ap.A - r.am.A) * trans;
  return s;
}

// sign corollaries of dominance; returns the number of violated implications
template <int N>
int dominance_sign_violations(const AveragedShockRecord<N>& r) {
  int bad = 0;
  for (int j = 0; j < N; ++j) {
    if (!r.dominant[j]) continue;
    double sm = sgn(r.cd.alpha_m[j]), sp = sgn(r.cd.alpha_p[j]);
    if (sm == 0 || sp == 0) continue;
    if (j != r.family) {
      bad += sm != sp;
    } else if (r.cls == ShockClass::Lax || r.cls == ShockClass::Rarefaction) {
      bad += sm == sp;
    } else if (undercompressive(r.cls)) {
      bad += sm != sp;
    }
  }
  return bad;
}

struct RobustVerdict {
  bool applicable = false;
  ShockClass predicted = ShockClass::Degenerate;
  bool agrees = false;
};

template <int N>
RobustVerdict robust_classification(const AveragedShockRecord<N>& r) {
  RobustVerdict v;
  int i = r.family;
  v.applicable = r.strong_eig;
  bool same = sgn(r.cd.alpha_m[i]) * sgn(r.cd.alpha_p[i]) > 0;
  v.predicted = sign_table_class(same, r.rho * (r.lam_p(i) - r.lam_m(i)));
  v.agrees = v.predicted == r.cls;
  return v;
}

// ---------------------------------------------------------------- closed-form tables

struct ScalarRhoReport {
  ShockClass predicted = ShockClass::Degenerate, direct = ShockClass::Degenerate;
  double rho = 0, jump = 0;
  double chord_first = 0, chord_second = 0;
  bool agrees = false;
};

inline ScalarRhoReport classify_scalar_rho(double um, double up, double upr, const ScalarFlux& m) {
  if (um == up) throw DomainError("classify_scalar_rho: u- and u+ must differ");
  double lb = m.chord(um, up), lm = m.chord(um, upr), lp = m.chord(up, upr);
  ScalarRhoReport r;
  r.rho = (um - upr) * (up - um);
  r.jump = lp - lm;
  r.predicted = sign_table_class((um - upr) * (up - upr) > 0, r.rho * r.jump);
  r.direct = classify_shock(lm, lb, lp);
  r.agrees = r.predicted == r.direct;
  r.chord_first = std::abs((lb - lm) * (um - upr) - (lb - lp) * (up - upr));
  r.chord_second = std::abs((lp - lm) * (um - upr) - (lb - lp) * (up - um));
  return r;
}

struct PSystemRhoReport {
  ShockClass predicted = ShockClass::Degenerate, direct = ShockClass::Degenerate;
  double rho = 0, jump = 0, kappa = 0, kappa2 = 0;
  double kappa_first = 0, kappa_second = 0;
  bool agrees = false;
};

// family index 1 is the +c family; index 0 is handled by the mirror x -> -x
inline PSystemRhoReport classify_psystem_rho(double vm, double vp, double vpr, int family, const PSystem& m) {
  m.check_v(vm);
  m.check_v(vp);
  m.check_v(vpr);
  if (vm == vp) throw DomainError("classify_psystem_rho: v- and v+ must differ");
  auto c = [&](double a, double b) { return m.cbar(a, b); };
  PSystemRhoReport r;
  double cmp = c(vm, vp), cmq = c(vm, vpr), cpq = c(vp, vpr);
  r.kappa = (cmp + cpq) / (cmp + cmq);
  r.kappa2 = (cpq + cmp) / (cpq + cmq);  // kappa(v', v+, v-)
  r.kappa_first = std::abs((cmp - cmq) * (vpr - vm) - r.kappa * (cmp - cpq) * (vpr - vp));
  r.kappa_second = std::abs((cpq - cmq) * (vm - vpr) - r.kappa2 * (cmp - cpq) * (vp - vm));
  if (family == 1) {
    r.rho = (vm - vpr) * (vp - vm);
    r.jump = cpq - cmq;
    r.predicted = sign_table_class((vm - vpr) * (vp - vpr) > 0, r.rho * r.jump);
    r.direct = classify_shock(cmq, cmp, cpq);
  } else {
    // mirrored problem: states exchanged, speeds negated
    double rho = (vp - vpr) * (vm - vp);
    double jump = cmq - cpq;
    r.rho = (vm - vpr) * (vp - vm);
    r.jump = -(cpq - cmq);
    r.predicted = mirror_class(sign_table_class((vm - vpr) * (vp - vpr) > 0, rho * jump));
    r.direct = classify_shock(-cmq, -cmp, -cpq);
  }
  r.agrees = r.predicted == r.direct;
  return r;
}

// ---------------------------------------------------------------- system identity

struct SystemIdentityReport {
  double rh = 0;            // |f(u+)-f(u-) - lam_bar (u+-u-)|
  double form1 = 0, form2 = 0, transversal = 0;
  double projection_m = 0, projection_p = 0;
  double omega = 0, remainder = 0;  // remainder = max |l_i^pm . Omega~|
  double ratio = 0;                 // remainder / omega (0 when both vanish)
};

template <class M>
SystemIdentityReport verify_system_identity(const M& model, const Vec<M::N>& um, const Vec<M::N>& up,
                                            const Vec<M::N>& upr, int i) {
  constexpr int N = M::N;
  auto du = up - um;
  auto df = model.flux(up) - model.flux(um);
  double lb = dot<N>(df, du) / dot<N>(du, du);
  SystemIdentityReport rep;
  rep.rh = norm<N>(df - lb * du);
  auto em = model.averaged(um, upr).eig, ep = model.averaged(up, upr).eig;
  auto dm = um - upr, dp = up - upr;
  Vec<N> am{}, ap{};
  for (int j = 0; j < N; ++j) {
    am[j] = dot<N>(em.l[j], dm);
    ap[j] = dot<N>(ep.l[j], dp);
  }
  double lm = em.lam[i], lp = ep.lam[i];
  auto tilde = lp * dp - lm * dm - lb * du;
  auto f1 = (lp - lm) * dp - (lb - lm) * du;
  auto f2 = (lp - lm) * dm + (lp - lb) * du;
  Vec<N> tr{};
  for (int j = 0; j < N; ++j) {
    if (j == i) continue;
    tr = tr - ((ep.lam[j] - lp) * ap[j]) * ep.r[j] + ((em.lam[j] - lm) * am[j]) * em.r[j];
  }
  double scale = std::max(1.0, norm<N>(tilde));
  rep.form1 = norm<N>(f1 - tilde) / scale;
  rep.form2 = norm<N>(f2 - tilde) / scale;
  rep.transversal = norm<N>(tr - tilde) / scale;
  double epsm = dot<N>(em.l[i], du), epsp = dot<N>(ep.l[i], du);
  double lm_t = dot<N>(em.l[i], tilde), lp_t = dot<N>(ep.l[i], tilde);
  rep.projection_m = std::abs((lp - lb) * epsm + (lp - lm) * am[i] - lm_t);
  rep.projection_p = std::abs((lb - lm) * epsp - (lp - lm) * ap[i] + lp_t);
  double sum_am = 0, sum_g = 0;
  for (int j = 0; j < N; ++j) {
    if (j == i) continue;
    sum_am += std::abs(am[j]);
    sum_g += std::abs((lb - ep.lam[j]) * ap[j] - (lb - em.lam[j]) * am[j]);
  }
  rep.omega = sum_g + std::abs(epsm) * sum_am;
  rep.remainder = std::max(std::abs(lm_t), std::abs(lp_t));
  rep.ratio = rep.omega > 0 ? rep.remainder / rep.omega : 0.0;
  return rep;
}

// ---------------------------------------------------------------- monotonicity along wave curves

struct MonotonicityReport {
  bool gnl = true;
  bool monotone = true;
  double slack = kInf;  // min over consecutive samples of the oriented increment
  int samples = 0;
  int entropy_checked = 0, entropy_violations = 0;
  std::vector<double> speeds;
};

namespace detail {
inline void finish_scan(MonotonicityReport& r) {
  const auto& s = r.speeds;
  double dir = sgn(s.back() - s.front());
  for (std::size_t k = 0; k + 1 < s.size(); ++k) r.slack = std::min(r.slack, dir * (s[k + 1] - s[k]));
  r.monotone = dir != 0 && r.slack > 0;
}
}  // namespace detail

inline MonotonicityReport monotonicity_scan(const ScalarFlux& m, double um, double upr, double lo, double hi,
                                            int samples = 100) {
  MonotonicityReport r;
  r.samples = std::max(samples, 2);
  double s0 = 0;
  for (int k = 0; k <= 64; ++k) {
    double s = sgn(m.d2f(lo + (hi - lo) * k / 64.0));
    if (s == 0 || (s0 != 0 && s != s0)) r.gnl = false;
    s0 = s;
  }
  for (int k = 0; k < r.samples; ++k) {
    double u = lo + (hi - lo) * k / (r.samples - 1.0);
    r.speeds.push_back(m.chord(u, upr));
    if (u != um && oleinik_check(m, um, u).admissible) {
      ++r.entropy_checked;
      r.entropy_violations += !(m.chord(um, upr) > m.chord(u, upr));
    }
  }
  detail::finish_scan(r);
  return r;
}

inline MonotonicityReport monotonicity_scan(const PSystem& m, double vm, int family, double vpr, double lo,
                                            double hi, int samples = 100) {
  MonotonicityReport r;
  r.gnl = m.gnl();
  r.samples = std::max(samples, 2);
  double sign = family == 1 ? 1.0 : -1.0;
  for (int k = 0; k < r.samples; ++k) {
    double v = lo + (hi - lo) * k / (r.samples - 1.0);
    r.speeds.push_back(sign * m.cbar(v, vpr));
    if (v != vm && wendroff_check(m, vm, v, family).admissible) {
      ++r.entropy_checked;
      r.entropy_violations += !(sign * m.cbar(vm, vpr) > sign * m.cbar(v, vpr));
    }
  }
  detail::finish_scan(r);
  return r;
}

// ---------------------------------------------------------------- arrangement

template <int N>
struct ArrEdge {
  int id = -1;
  int owner = 1;
  int front = -1, front_p = -1;
  int family = 0;
  WaveKind kind = WaveKind::Shock;
  double t0 = 0, t1 = 0;
  double xr = 0, tr = 0, speed = 0;  // line of the carrying front
  int v0 = -1, v1 = -1;
  Vec<N> u_m{}, u_p{}, up_m{}, up_p{};
  int record = -1;
  double pos(double t) const { return xr + speed * (t - tr); }
};

struct ArrVertex {
  double t = 0, x = 0;
  int left = -1, right = -1;      // adjacent edges not through the vertex
  std::vector<int> in, out;       // edges, left to right
  std::vector<int> below, above;  // phases closed / opened here
};

// part of a cell between two consecutive vertices on its boundary
template <int N>
struct Phase {
  int id = -1;
  double t_lo = 0, t_hi = 0;
  int left = -1, right = -1;  // edges, -1 at infinity
  int above = -1;             // -2: reaches the final time
  int face = -1;
  Vec<N> u{}, up{};
  Averaged<N> av;
};

template <int N>
struct AveragedField {
  const TrackedRun<N>* run = nullptr;
  const TrackedRun<N>* run_prime = nullptr;
  std::string model;
  double t_end = 0, h = 0;
  double kappa1 = 0.1, kappa2 = 0.1;
  std::vector<ArrEdge<N>> edges;
  std::vector<ArrVertex> vertices;
  std::vector<Phase<N>> phases;
  std::vector<AveragedShockRecord<N>> records;
  BandReport bands;
  int faces = 0;

  double edge_pos(int e, double t) const { return edges[e].pos(t); }
  double left_pos(const Phase<N>& p, double t) const { return p.left < 0 ? -kInf : edges[p.left].pos(t); }
  double right_pos(const Phase<N>& p, double t) const { return p.right < 0 ? kInf : edges[p.right].pos(t); }
};

inline bool front_admissible(const ScalarFlux& m, const TrackedRun<1>& run, const Front<1>& f) {
  if (f.kind == WaveKind::RarefactionFront) return false;
  return oleinik_check(m, f.left[0], f.right[0], &run.grid).margin >= -1e-10;
}
inline bool front_admissible(const PSystem& m, const TrackedRun<2>&, const Front<2>& f) {
  if (f.kind == WaveKind::RarefactionFront) return false;
  return wendroff_check(m, f.left[1], f.right[1], f.family).margin >= -1e-10;
}

template <class M>
void fill_record(const M& model, AveragedShockRecord<M::N>& r, double kappa1, double kappa2) {
  constexpr int N = M::N;
  r.am = model.averaged(r.u_m, r.up_m);
  r.ap = model.averaged(r.u_p, r.up_p);
  int i = r.family;
  r.cls = classify_shock(r.lam_m(i), r.speed, r.lam_p(i));
  r.cd = characteristic_components<N>(r.am.eig, r.ap.eig, r.up_m - r.u_m, r.up_p - r.u_p);
  characteristic_flux<N>(r.cd, r.am.eig, r.ap.eig, r.speed);
  bool own_is_run = r.owner & 1;
  const auto& wm = own_is_run ? r.u_m : r.up_m;
  const auto& wp = own_is_run ? r.u_p : r.up_p;
  r.strength = std::abs(model.mu(wp, i) - model.mu(wm, i));
  r.jump = norm<N>(wp - wm);
  // alpha_i(w-, w') is the i-component of w- - w' = -psi- (owner run) or +psi- (owner run')
  double a = own_is_run ? -r.cd.alpha_m[i] : r.cd.alpha_m[i];
  r.rho = a * (model.mu(wp, i) - model.mu(wm, i));
  r.dominant = dominance_test(r, kappa1);
  auto s = strong_dominance_test(r, kappa2);
  r.strong_eig = s.eig;
  r.strong_mat = s.mat;
  r.jump_rel = verify_jump_relation<N>(r.am.eig, r.ap.eig, r.cd, i);
  r.sign_violations = flux_sign_violations<N>(r.cd, i, r.cls);
}

// |A+ - A-| / strength, compared with the Lipschitz constant of Df in tests
template <int N>
double jump_lipschitz_ratio(const AveragedShockRecord<N>& r) {
  return r.strength > 0 ? matnorm<N>(r.ap.A - r.am.A) / r.strength : 0.0;
}

namespace detail {

struct UnionFind {
  std::vector<int> p;
  explicit UnionFind(std::size_t n) : p(n) { std::iota(p.begin(), p.end(), 0); }
  int find(int a) { return p[a] == a ? a : p[a] = find(p[a]); }
  void join(int a, int b) { p[find(a)] = find(b); }
};

}  // namespace detail

// merged arrangement of both runs: a forward sweep over run events and crossings of fronts
// belonging to different runs
template <class M>
AveragedField<M::N> build_averaged_field(const M& model, const TrackedRun<M::N>& run, const TrackedRun<M::N>& runp,
                                         double kappa1 = 0.1, double kappa2 = 0.1) {
  constexpr int N = M::N;
  using State = Vec<N>;
  if (std::abs(run.t_end - runp.t_end) > 1e-14 * std::max(1.0, run.t_end))
    throw DomainError("build_averaged_field: mismatched horizons");
  if (run.model_name != runp.model_name) throw DomainError("build_averaged_field: runs use different models");
  AveragedField<N> F;
  F.run = &run;
  F.run_prime = &runp;
  F.model = run.model_name;
  F.t_end = run.t_end;
  F.h = std::max(run.h, runp.h);
  F.kappa1 = kappa1;
  F.kappa2 = kappa2;
  const double T = run.t_end;
  const TrackedRun<N>* R[2] = {&run, &runp};

  auto& E = F.edges;
  auto& P = F.phases;
  std::vector<int> active;      // edges ordered by position
  std::vector<int> gap_phase;   // gap_phase[k]: phase left of active[k]; size active.size() + 1
  std::vector<char> alive;

  auto new_phase = [&](double t, int l, int r) {
    Phase<N> ph;
    ph.id = static_cast<int>(P.size());
    ph.t_lo = t;
    ph.t_hi = T;
    ph.left = l;
    ph.right = r;
    if (l >= 0) {
      ph.u = E[l].u_p;
      ph.up = E[l].up_p;
    } else {
      ph.u = run.initial.values.front();
      ph.up = runp.initial.values.front();
    }
    ph.av = model.averaged(ph.u, ph.up);
    P.push_back(ph);
    return ph.id;
  };

  // outgoing edges at a vertex in speed order; the runs' fronts are merged, equal speeds paired
  auto make_out = [&](std::vector<int> fa, std::vector<int> fb, double t, int v, State u, State up) {
    auto by_speed = [&](int k) {
      return [&, k](int a, int b) { return R[k]->fronts[a].speed < R[k]->fronts[b].speed; };
    };
    std::stable_sort(fa.begin(), fa.end(), by_speed(0));
    std::stable_sort(fb.begin(), fb.end(), by_speed(1));
    std::vector<int> out;
    std::size_t i = 0, j = 0;
    while (i < fa.size() || j < fb.size()) {
      const Front<N>* a = i < fa.size() ? &run.fronts[fa[i]] : nullptr;
      const Front<N>* b = j < fb.size() ? &runp.fronts[fb[j]] : nullptr;
      bool take_a = a && (!b || a->speed <= b->speed);
      bool both = a && b && std::abs(a->speed - b->speed) <= 1e-14 * std::max(1.0, std::abs(a->speed));
      ArrEdge<N> e;
      e.id = static_cast<int>(E.size());
      e.t0 = t;
      e.t1 = T;
      e.v0 = v;
      e.u_m = u;
      e.up_m = up;
      const Front<N>* c = (take_a || both) ? a : b;
      e.owner = both ? 3 : (take_a ? 1 : 2);
      e.family = c->family;
      e.kind = c->kind;
      e.speed = c->speed;
      e.xr = c->x0;
      e.tr = c->t0;
      if (e.owner & 1) {
        if (a->left != u) throw std::logic_error("arrangement: broken state chain (run)");
        e.front = a->id;
        u = a->right;
        ++i;
      }
      if (e.owner & 2) {
        if (b->left != up) throw std::logic_error("arrangement: broken state chain (run')");
        e.front_p = b->id;
        up = b->right;
        ++j;
      }
      e.u_p = u;
      e.up_p = up;
      E.push_back(e);
      alive.push_back(1);
      out.push_back(e.id);
    }
    return std::make_tuple(out, u, up);
  };

  using Cand = std::tuple<double, int, int>;
  std::priority_queue<Cand, std::vector<Cand>, std::greater<Cand>> heap;
  auto push_pair = [&](int l, int r, double now) {
    if (l < 0 || r < 0) return;
    const auto& a = E[l];
    const auto& b = E[r];
    if (a.owner & b.owner) return;  // same-run meetings are run events
    if (!(a.speed > b.speed)) return;
    double gap = std::max(0.0, b.pos(now) - a.pos(now));
    double t = now + gap / (a.speed - b.speed);
    if (t <= T) heap.push({t, l, r});
  };

  struct Pt {
    double x;
    int run, ev;  // run index and event index, ev < 0 for a crossing
  };

  // ---- t = 0
  {
    std::vector<Pt> pts;
    for (int k = 0; k < 2; ++k)
      for (std::size_t e = 0; e < R[k]->events.size(); ++e)
        if (R[k]->events[e].initial_jump >= 0) pts.push_back({R[k]->events[e].x, k, static_cast<int>(e)});
    std::stable_sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.x < b.x; });
    State u = run.initial.values.front(), up = runp.initial.values.front();
    std::size_t k = 0;
    while (k < pts.size()) {
      std::size_t k1 = k;
      double x = pts[k].x;
      std::vector<int> fa, fb;
      while (k1 < pts.size() && std::abs(pts[k1].x - x) <= 1e-12 * std::max(1.0, std::abs(x))) {
        const auto& ev = R[pts[k1].run]->events[pts[k1].ev];
        auto& dst = pts[k1].run == 0 ? fa : fb;
        dst.insert(dst.end(), ev.outgoing.begin(), ev.outgoing.end());
        ++k1;
      }
      ArrVertex vx;
      vx.t = 0;
      vx.x = x;
      vx.left = active.empty() ? -1 : active.back();
      int v = static_cast<int>(F.vertices.size());
      auto [out, u2, up2] = make_out(fa, fb, 0.0, v, u, up);
      u = u2;
      up = up2;
      vx.out = out;
      active.insert(active.end(), out.begin(), out.end());
      F.vertices.push_back(vx);
      k = k1;
    }
    if (u != run.initial.values.back() || up != runp.initial.values.back())
      throw std::logic_error("arrangement: far field mismatch at t = 0");
    for (std::size_t v = 0; v < F.vertices.size(); ++v) {
      auto& vx = F.vertices[v];
      if (vx.out.empty()) continue;
      auto it = std::find(active.begin(), active.end(), vx.out.back());
      vx.right = (it + 1 == active.end()) ? -1 : *(it + 1);
    }
    gap_phase.push_back(new_phase(0, -1, active.empty() ? -1 : active.front()));
    for (std::size_t g = 0; g < active.size(); ++g)
      gap_phase.push_back(new_phase(0, active[g], g + 1 < active.size() ? active[g + 1] : -1));
    for (std::size_t g = 0; g + 1 < active.size(); ++g) push_pair(active[g], active[g + 1], 0);
  }

  // ---- t > 0
  std::size_t next[2] = {0, 0};
  for (int k = 0; k < 2; ++k)
    while (next[k] < R[k]->events.size() && R[k]->events[next[k]].initial_jump >= 0) ++next[k];
  while (true) {
    while (!heap.empty() && !(alive[std::get<1>(heap.top())] && alive[std::get<2>(heap.top())])) heap.pop();
    double tmin = heap.empty() ? kInf : std::get<0>(heap.top());
    for (int k = 0; k < 2; ++k)
      if (next[k] < R[k]->events.size()) tmin = std::min(tmin, R[k]->events[next[k]].t);
    if (!(tmin <= T)) break;
    double ttol = 1e-12 * std::max(1.0, tmin);
    std::vector<Pt> pts;
    for (int k = 0; k < 2; ++k)
      while (next[k] < R[k]->events.size() && R[k]->events[next[k]].t <= tmin + ttol) {
        pts.push_back({R[k]->events[next[k]].x, k, static_cast<int>(next[k])});
        ++next[k];
      }
    while (!heap.empty() && std::get<0>(heap.top()) <= tmin + ttol) {
      auto [t, l, r] = heap.top();
      heap.pop();
      if (!(alive[l] && alive[r])) continue;
      pts.push_back({0.5 * (E[l].pos(tmin) + E[r].pos(tmin)), -1, -1});
    }
    std::stable_sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.x < b.x; });
    std::size_t k = 0;
    while (k < pts.size()) {
      double x = pts[k].x;
      double xtol = 1e-9 * std::max(1.0, std::abs(x));
      std::size_t k1 = k;
      std::vector<int> ev[2];
      while (k1 < pts.size() && pts[k1].x - x <= xtol) {
        if (pts[k1].run >= 0) ev[pts[k1].run].push_back(pts[k1].ev);
        ++k1;
      }
      double xc = 0.5 * (x + pts[k1 - 1].x);
      k = k1;
      // edges through the point
      std::size_t i0 = 0;
      while (i0 < active.size() && E[active[i0]].pos(tmin) < xc - xtol) ++i0;
      std::size_t i1 = i0;
      while (i1 < active.size() && E[active[i1]].pos(tmin) <= xc + xtol) ++i1;
      if (i1 == i0) {
        if (ev[0].empty() && ev[1].empty()) continue;
        throw std::logic_error("arrangement: event without fronts");
      }
      std::vector<int> inc(active.begin() + static_cast<long>(i0), active.begin() + static_cast<long>(i1));
      std::vector<int> fl[2];
      for (int r = 0; r < 2; ++r) {
        std::vector<int> ending, born;
        for (int e : ev[r]) {
          const auto& evt = R[r]->events[e];
          ending.insert(ending.end(), evt.incoming.begin(), evt.incoming.end());
          born.insert(born.end(), evt.outgoing.begin(), evt.outgoing.end());
        }
        std::vector<int> through;
        for (int e : inc) {
          int f = r == 0 ? (E[e].owner & 1 ? E[e].front : -1) : (E[e].owner & 2 ? E[e].front_p : -1);
          if (f < 0) continue;
          if (std::find(ending.begin(), ending.end(), f) == ending.end()) {
            through.push_back(f);
          } else {
            ending.erase(std::find(ending.begin(), ending.end(), f));
          }
        }
        if (!ending.empty()) throw std::logic_error("arrangement: event fronts not found at the vertex");
        fl[r] = through;
        fl[r].insert(fl[r].end(), born.begin(), born.end());
      }
      int v = static_cast<int>(F.vertices.size());
      ArrVertex vx;
      vx.t = tmin;
      vx.x = xc;
      vx.left = i0 > 0 ? active[i0 - 1] : -1;
      vx.right = i1 < active.size() ? active[i1] : -1;
      vx.in = inc;
      State u = vx.left >= 0 ? E[vx.left].u_p : run.initial.values.front();
      State up = vx.left >= 0 ? E[vx.left].up_p : runp.initial.values.front();
      auto [out, u2, up2] = make_out(fl[0], fl[1], tmin, v, u, up);
      State ur = vx.right >= 0 ? E[vx.right].u_m : run.initial.values.back();
      State upr = vx.right >= 0 ? E[vx.right].up_m : runp.initial.values.back();
      if (u2 != ur || up2 != upr) throw std::logic_error("arrangement: state mismatch right of a vertex");
      vx.out = out;
      for (int e : inc) {
        E[e].t1 = tmin;
        E[e].v1 = v;
        alive[e] = 0;
      }
      // phases: the gaps i0 .. i1 close, out.size() + 1 gaps open
      for (std::size_t g = i0; g <= i1; ++g) {
        P[gap_phase[g]].t_hi = tmin;
        vx.below.push_back(gap_phase[g]);
      }
      std::vector<int> opened;
      std::vector<int> bounds;
      bounds.push_back(vx.left);
      bounds.insert(bounds.end(), out.begin(), out.end());
      bounds.push_back(vx.right);
      for (std::size_t g = 0; g + 1 < bounds.size(); ++g) opened.push_back(new_phase(tmin, bounds[g], bounds[g + 1]));
      P[vx.below.front()].above = opened.front();
      P[vx.below.back()].above = opened.back();
      vx.above = opened;
      active.erase(active.begin() + static_cast<long>(i0), active.begin() + static_cast<long>(i1));
      active.insert(active.begin() + static_cast<long>(i0), out.begin(), out.end());
      gap_phase.erase(gap_phase.begin() + static_cast<long>(i0), gap_phase.begin() + static_cast<long>(i1) + 1);
      gap_phase.insert(gap_phase.begin() + static_cast<long>(i0), opened.begin(), opened.end());
      if (out.empty()) {
        push_pair(vx.left, vx.right, tmin);
      } else {
        push_pair(vx.left, out.front(), tmin);
        push_pair(out.back(), vx.right, tmin);
      }
      F.vertices.push_back(std::move(vx));
    }
  }
  for (int g : gap_phase) P[g].above = -2;

  // faces: phases joined through their top windows
  detail::UnionFind uf(P.size());
  for (const auto& ph : P)
    if (ph.above >= 0) uf.join(ph.id, ph.above);
  std::map<int, int> face_id;
  for (auto& ph : P) {
    int root = uf.find(ph.id);
    auto it = face_id.emplace(root, static_cast<int>(face_id.size())).first;
    ph.face = it->second;
  }
  F.faces = static_cast<int>(face_id.size());

  // records: every edge of positive duration
  for (auto& e : E) {
    if (!(e.t1 > e.t0)) continue;
    AveragedShockRecord<N> r;
    r.id = static_cast<int>(F.records.size());
    r.edge = e.id;
    r.owner = e.owner;
    r.front = e.front;
    r.front_p = e.front_p;
    r.family = e.family;
    r.kind = e.kind;
    r.t0 = e.t0;
    r.t1 = e.t1;
    r.x0 = e.pos(e.t0);
    r.speed = e.speed;
    r.u_m = e.u_m;
    r.u_p = e.u_p;
    r.up_m = e.up_m;
    r.up_p = e.up_p;
    r.admissible = true;
    if (e.owner & 1) r.admissible = r.admissible && front_admissible(model, run, run.fronts[e.front]);
    if (e.owner & 2) r.admissible = r.admissible && front_admissible(model, runp, runp.fronts[e.front_p]);
    if (e.owner == 3) r.kind = (run.fronts[e.front].kind == WaveKind::Shock && runp.fronts[e.front_p].kind == WaveKind::Shock)
                                   ? WaveKind::Shock
                                   : WaveKind::RarefactionFront;
    fill_record(model, r, kappa1, kappa2);
    e.record = r.id;
    F.records.push_back(std::move(r));
  }

  // uniform band check over every cell and trace
  F.bands.lo.assign(N, kInf);
  F.bands.hi.assign(N, -kInf);
  for (const auto& ph : P)
    for (int j = 0; j < N; ++j) {
      F.bands.lo[j] = std::min(F.bands.lo[j], ph.av.eig.lam[j]);
      F.bands.hi[j] = std::max(F.bands.hi[j], ph.av.eig.lam[j]);
    }
  for (int j = 0; j + 1 < N; ++j) {
    double gap = F.bands.lo[j + 1] - F.bands.hi[j];
    F.bands.min_gap = std::min(F.bands.min_gap, gap);
    if (gap < 1e-6) F.bands.separated = false;
  }
  if (!F.bands.separated) throw ModelError("eigenvalue separation violated: averaged bands overlap");
  return F;
}

// phases alive at time t, left to right
template <int N>
std::vector<int> field_slice(const AveragedField<N>& F, double t) {
  if (t < 0 || t > F.t_end) throw DomainError("field_slice: time out of range");
  std::vector<int> out;
  for (const auto& ph : F.phases) {
    bool in = (ph.t_lo <= t && t < ph.t_hi) || (t == F.t_end && ph.above == -2);
    if (in) out.push_back(ph.id);
  }
  std::stable_sort(out.begin(), out.end(), [&](int a, int b) {
    double xa = F.left_pos(F.phases[a], t), xb = F.left_pos(F.phases[b], t);
    if (xa != xb) return xa < xb;
    return F.right_pos(F.phases[a], t) < F.right_pos(F.phases[b], t);
  });
  return out;
}

// ---------------------------------------------------------------- census

struct Census {
  std::map<std::string, int> counts;  // "class|adm|robust"
  int records = 0;
  int violations = 0;                 // admissible owner, strongly dominant, rarefaction class
  int rarefaction_class = 0;
  int rarefaction_class_on_shocks = 0;
  double max_rarefaction_strength = 0;
  double h = 0;
  int degenerate = 0;
  bool ok() const { return violations == 0 && rarefaction_class_on_shocks == 0 && max_rarefaction_strength <= 2 * h; }
};

// kappa2 < 0 keeps the flags stored in the records
template <int N>
Census rarefaction_census(const AveragedField<N>& F, double kappa2 = -1) {
  Census c;
  c.h = F.h;
  for (const auto& r : F.records) {
    bool strong = r.strong_eig || r.strong_mat;
    if (kappa2 >= 0) {
      auto s = strong_dominance_test(r, kappa2);
      strong = s.eig || s.mat;
    }
    ++c.records;
    std::string key = std::string(class_name(r.cls)) + (r.admissible ? "|adm" : "|inadm") + (strong ? "|robust" : "|weak");
    ++c.counts[key];
    c.degenerate += r.cls == ShockClass::Degenerate;
    if (r.cls != ShockClass::Rarefaction) continue;
    ++c.rarefaction_class;
    if (r.admissible && strong) ++c.violations;
    if (r.kind == WaveKind::Shock) {
      ++c.rarefaction_class_on_shocks;
    } else {
      c.max_rarefaction_strength = std::max(c.max_rarefaction_strength, r.strength);
    }
  }
  return c;
}

inline nlohmann::json census_json(const Census& c) {
  nlohmann::json j;
  j["records"] = c.records;
  j["counts"] = c.counts;
  j["violations"] = c.violations;
  j["rarefaction_class"] = c.rarefaction_class;
  j["rarefaction_class_on_shocks"] = c.rarefaction_class_on_shocks;
  j["max_rarefaction_strength"] = c.max_rarefaction_strength;
  j["degenerate"] = c.degenerate;
  j["h"] = c.h;
  j["ok"] = c.ok();
  return j;
}

// one row per record
template <int N>
std::string records_csv(const AveragedField<N>& F) {
  std::ostringstream os;
  os.precision(17);
  os << "id,owner,family,kind,admissible,t0,t1,x0,speed,class,strength,lam_minus,lam_plus,rho,dominant,strong_eig,"
        "strong_mat,res_213,res_213b,sign_violations\n";
  for (const auto& r : F.records) {
    int i = r.family;
    bool dom = true;
    for (bool d : r.dominant) dom = dom && d;
    os << r.id << ',' << r.owner << ',' << i << ',' << (r.kind == WaveKind::Shock ? "shock" : "rarefaction") << ','
       << r.admissible << ',' << r.t0 << ',' << r.t1 << ',' << r.x0 << ',' << r.speed << ',' << class_name(r.cls)
       << ',' << r.strength << ',' << r.lam_m(i) << ',' << r.lam_p(i) << ',' << r.rho << ',' << dom << ','
       << r.strong_eig << ',' << r.strong_mat << ',' << r.jump_rel.jump_direct << ',' << r.jump_rel.jump_symmetric << ','
       << r.sign_violations << '\n';
  }
  return os.str();
}

}  // namespace l1stab
