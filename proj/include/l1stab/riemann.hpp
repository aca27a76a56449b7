#pragma once

#include <boost/math/tools/roots.hpp>
#include <optional>
#include <vector>

#include "flux_models.hpp"

namespace l1stab {

enum class WaveKind { Shock, RarefactionFront };

template <int N>
struct ElementaryWave {
  int family = 0;  // 0-based
  Vec<N> left{}, right{};
  double speed = 0;
  WaveKind kind = WaveKind::Shock;
  double strength = 0;  // |mu(right) - mu(left)|
};

template <int N>
struct WaveFan {
  Vec<N> left{}, right{};
  std::vector<ElementaryWave<N>> waves;
};

struct CheckResult {
  bool admissible = true;
  double margin = kInf;  // min slack over samples
  double worst_at = 0;   // sample location achieving the margin
};

// ---------------------------------------------------------------- scalar

inline CheckResult oleinik_check(const ScalarFlux& m, double um, double up, const StateGrid* grid = nullptr,
                                 double tol = 1e-10) {
  CheckResult r;
  if (um == up) return r;
  double ref = m.chord(um, up);
  double a = std::min(um, up), b = std::max(um, up);
  auto probe = [&](double v) {
    double s = m.chord(um, v) - ref;
    if (s < r.margin) {
      r.margin = s;
      r.worst_at = v;
    }
  };
  if (grid) {
    for (long k = grid->index(a) + 1; k < grid->index(b); ++k) probe(grid->node(k));
  } else {
    for (int k = 1; k < 1024; ++k) probe(a + (b - a) * k / 1024.0);
  }
  r.admissible = r.margin >= -tol;
  return r;
}

inline WaveFan<1> envelope_riemann_scalar(const ScalarFlux& m, const StateGrid& g, double ul, double ur) {
  if (!g.on_grid(ul) || !g.on_grid(ur)) throw DiscretizationError("Riemann data off the approximant grid");
  m.check(ul);
  m.check(ur);
  WaveFan<1> fan;
  fan.left = {ul};
  fan.right = {ur};
  if (ul == ur) return fan;
  long kl = g.index(ul), kr = g.index(ur);
  int dir = kr > kl ? 1 : -1;
  // lower convex hull walking upward, or upper concave hull walking downward;
  // both keep only counterclockwise turns along the walk
  std::vector<long> hull;
  auto pt = [&](long k) { return std::pair<double, double>{g.node(k), m.f(g.node(k))}; };
  for (long k = kl;; k += dir) {
    while (hull.size() >= 2) {
      auto [x0, y0] = pt(hull[hull.size() - 2]);
      auto [x1, y1] = pt(hull.back());
      auto [x2, y2] = pt(k);
      double cr = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
      double scale = std::abs(x1 - x0) * std::abs(y2 - y0) + std::abs(y1 - y0) * std::abs(x2 - x0);
      if (cr > 1e-14 * scale) break;
      hull.pop_back();
    }
    hull.push_back(k);
    if (k == kr) break;
  }
  for (std::size_t i = 0; i + 1 < hull.size(); ++i) {
    ElementaryWave<1> w;
    w.family = 0;
    w.left = {g.node(hull[i])};
    w.right = {g.node(hull[i + 1])};
    w.speed = m.chord(w.left[0], w.right[0]);
    w.strength = std::abs(w.right[0] - w.left[0]);
    bool one_cell = std::labs(hull[i + 1] - hull[i]) == 1;
    w.kind = (one_cell && m.df(w.left[0]) < m.df(w.right[0])) ? WaveKind::RarefactionFront : WaveKind::Shock;
    fan.waves.push_back(w);
  }
  return fan;
}

// ---------------------------------------------------------------- p-system

inline Vec<2> hugoniot_psystem(const PSystem& m, const Vec<2>& left, int family, double v_plus) {
  m.check_v(v_plus);
  double vm = left[1];
  if (v_plus == vm) return left;
  double cb = m.cbar(vm, v_plus);
  double du = (family == 0 ? 1.0 : -1.0) * cb * (v_plus - vm);
  return {left[0] + du, v_plus};
}

inline double hugoniot_speed(const PSystem& m, double vm, double vp, int family) {
  double cb = m.cbar(vm, vp);
  return family == 0 ? -cb : cb;
}

// max of the two Rankine-Hugoniot residuals for a jump at speed s
template <class M>
double rh_residual(const M& m, const Vec<M::N>& a, const Vec<M::N>& b, double s) {
  auto df = m.flux(b) - m.flux(a);
  auto du = b - a;
  double r = 0;
  for (int i = 0; i < M::N; ++i) r = std::max(r, std::abs(s * du[i] - df[i]));
  return r;
}

inline CheckResult wendroff_check(const PSystem& m, double vm, double vp, int family, int samples = 64,
                                  double tol = 1e-10) {
  CheckResult r;
  if (vm == vp) {
    r.margin = 0;
    return r;
  }
  double ref = m.cbar(vm, vp);
  for (int k = 1; k < samples; ++k) {
    double v = vm + (vp - vm) * k / samples;
    // family 2 keys on the left state; family 1 is the mirror image keyed on the right state
    double s = (family == 1 ? m.cbar(v, vm) : m.cbar(v, vp)) - ref;
    if (s < r.margin) {
      r.margin = s;
      r.worst_at = v;
    }
  }
  r.admissible = r.margin >= -tol;
  return r;
}

inline CheckResult liu_check(const ScalarFlux& m, double um, double up, int = 0, const StateGrid* grid = nullptr,
                             double tol = 1e-10) {
  // along the scalar "curve" the averaged speed from um is the chord slope
  CheckResult r;
  if (um == up) return r;
  return oleinik_check(m, um, up, grid, tol);
}

inline CheckResult liu_check(const PSystem& m, const Vec<2>& left, const Vec<2>& right, int family, int samples = 64,
                             double tol = 1e-10) {
  CheckResult r;
  double vm = left[1], vp = right[1];
  if (vm == vp) return r;
  auto lam = [&](double v) { return hugoniot_speed(m, vm, v, family); };
  double ref = lam(vp);
  for (int k = 1; k < samples; ++k) {
    double v = vm + (vp - vm) * k / samples;
    double s = lam(v) - ref;
    if (s < r.margin) {
      r.margin = s;
      r.worst_at = v;
    }
  }
  r.admissible = r.margin >= -tol;
  return r;
}

namespace detail {

// chain of RH jumps of one family in steps of at most h in v, starting at `from`
// the jump relation is symmetric in its endpoints, so the same step works from either side
inline std::vector<Vec<2>> psystem_chain(const PSystem& m, const Vec<2>& from, double v_to, int family, double h) {
  std::vector<Vec<2>> pts{from};
  double v0 = from[1];
  double dir = v_to > v0 ? 1.0 : -1.0;
  // equal steps, so a jump slightly above h never leaves a tiny remainder front
  long n = static_cast<long>(std::ceil(std::abs(v_to - v0) / h - 1e-12));
  double step = n > 0 ? std::abs(v_to - v0) / static_cast<double>(n) : 0.0;
  for (long k = 1; k <= n; ++k) {
    double v = (k == n) ? v_to : v0 + dir * step * static_cast<double>(k);
    const auto& a = pts.back();
    double cb = m.cbar(a[1], v);
    double du = (family == 0 ? 1.0 : -1.0) * cb * (v - a[1]);
    pts.push_back({a[0] + du, v});
  }
  return pts;
}

}  // namespace detail

inline WaveFan<2> riemann_psystem(const PSystem& m, const Vec<2>& left, const Vec<2>& right, double h) {
  if (!m.gnl()) throw ModelError("p-system evolution requires a genuinely nonlinear pressure law");
  m.check_state(left);
  m.check_state(right);
  WaveFan<2> fan;
  fan.left = left;
  fan.right = right;
  if (left == right) return fan;

  // velocity reached at specific volume v by the forward 1-wave from `left`
  auto phi1 = [&](double v) {
    if (v <= left[1]) return hugoniot_psystem(m, left, 0, v)[0];
    return detail::psystem_chain(m, left, v, 0, h).back()[0];
  };
  // velocity of states at v joined to `right` by a 2-wave
  auto psi2 = [&](double v) {
    if (v <= right[1]) {
      double cb = m.cbar(v, right[1]);
      return right[0] + cb * (right[1] - v);
    }
    return detail::psystem_chain(m, right, v, 1, h).back()[0];
  };
  auto g = [&](double v) { return phi1(v) - psi2(v); };

  double lo = m.vlo(), hi = m.vhi();
  double glo = g(lo), ghi = g(hi);
  if (glo > 0 || ghi < 0) throw AmplitudeError("no wave-curve intersection inside the v-domain");
  double vmid;
  if (glo == 0) {
    vmid = lo;
  } else if (ghi == 0) {
    vmid = hi;
  } else {
    std::uintmax_t it = 200;
    auto res = boost::math::tools::toms748_solve(g, lo, hi, glo, ghi, boost::math::tools::eps_tolerance<double>(52), it);
    vmid = 0.5 * (res.first + res.second);
    // pick the endpoint with the smaller residual
    if (std::abs(g(res.first)) < std::abs(g(vmid))) vmid = res.first;
    if (std::abs(g(res.second)) < std::abs(g(vmid))) vmid = res.second;
  }
  Vec<2> mid{phi1(vmid), vmid};
  double vscale = std::max(1.0, std::abs(vmid));
  if (std::abs(vmid - left[1]) <= 1e-14 * vscale) mid = left;
  if (std::abs(vmid - right[1]) <= 1e-14 * vscale) mid = right;

  // 1-wave
  if (mid[1] != left[1]) {
    if (mid[1] < left[1]) {
      ElementaryWave<2> w{0, left, mid, hugoniot_speed(m, left[1], mid[1], 0), WaveKind::Shock,
                          std::abs(mid[1] - left[1])};
      fan.waves.push_back(w);
    } else {
      auto pts = detail::psystem_chain(m, left, mid[1], 0, h);
      pts.back() = mid;
      for (std::size_t k = 0; k + 1 < pts.size(); ++k)
        fan.waves.push_back({0, pts[k], pts[k + 1], hugoniot_speed(m, pts[k][1], pts[k + 1][1], 0),
                             WaveKind::RarefactionFront, std::abs(pts[k + 1][1] - pts[k][1])});
    }
  }
  // 2-wave
  if (mid[1] != right[1] || mid[0] != right[0]) {
    if (mid[1] <= right[1]) {
      fan.waves.push_back({1, mid, right, hugoniot_speed(m, mid[1], right[1], 1), WaveKind::Shock,
                           std::abs(right[1] - mid[1])});
    } else {
      auto pts = detail::psystem_chain(m, right, mid[1], 1, h);
      pts.back() = mid;
      for (std::size_t k = pts.size() - 1; k > 0; --k)
        fan.waves.push_back({1, pts[k], pts[k - 1], hugoniot_speed(m, pts[k][1], pts[k - 1][1], 1),
                             WaveKind::RarefactionFront, std::abs(pts[k][1] - pts[k - 1][1])});
    }
  }
  return fan;
}

}  // namespace l1stab
