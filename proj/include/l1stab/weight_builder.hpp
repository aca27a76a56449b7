#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <sstream>
#include <vector>

#include "l1stab/averaged_analysis.hpp"

namespace l1stab {

// ---------------------------------------------------------------- step maps

// right-continuous step function of the characteristic coordinate xi = x - a t:
// val[k] holds on [key[k], key[k+1]); val.front() also below key.front()
struct StepMap {
  std::vector<double> key, val;
  std::vector<double> pre;  // pre[k] = integral from key[1] to key[k]

  void push(double k, double v) {
    while (!key.empty() && !(k > key.back())) {
      key.pop_back();
      val.pop_back();
    }
    key.push_back(k);
    val.push_back(v);
  }
  void compress() {
    std::size_t n = 0;
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (n > 0 && val[n - 1] == val[i]) continue;
      key[n] = key[i];
      val[n] = val[i];
      ++n;
    }
    key.resize(n);
    val.resize(n);
  }
  void finalize() {
    pre.assign(key.size(), 0.0);
    for (std::size_t k = 2; k < key.size(); ++k) pre[k] = pre[k - 1] + val[k - 1] * (key[k] - key[k - 1]);
  }
  bool empty() const { return key.empty(); }
  std::size_t idx_right(double x) const {  // largest key <= x, 0 if none
    auto it = std::upper_bound(key.begin(), key.end(), x);
    return it == key.begin() ? 0 : static_cast<std::size_t>(it - key.begin()) - 1;
  }
  std::size_t idx_left(double x) const {  // largest key < x, 0 if none
    auto it = std::lower_bound(key.begin(), key.end(), x);
    return it == key.begin() ? 0 : static_cast<std::size_t>(it - key.begin()) - 1;
  }
  double at_right(double x) const { return val[idx_right(x)]; }
  double at_left(double x) const { return val[idx_left(x)]; }
  // antiderivative, anchored at key[1]
  double G(double x) const {
    std::size_t i = idx_right(x);
    if (i == 0) return key.size() > 1 ? val[0] * (x - key[1]) : val[0] * x;
    return pre[i] + val[i] * (x - key[i]);
  }
  double integral(double a, double b) const { return G(b) - G(a); }
};

// ---------------------------------------------------------------- weight field

template <int N>
struct WeightField {
  const AveragedField<N>* field = nullptr;
  std::string rule;
  double K = 10, C0 = 1, shift = 0;
  bool normalized = true;
  std::vector<std::array<StepMap, N>> maps;       // per phase
  std::vector<std::array<double, N>> jump;        // per edge, prescribed w+ - w-
  std::vector<std::array<char, N>> applies;       // per edge, a jump condition is imposed
  std::vector<std::array<double, N>> ride;        // per edge
  std::vector<std::vector<int>> left_side, right_side;  // per edge, phases on each side in time order
  double w_min = 0, w_max = 0, osc = 0, C2 = 1;
  int unimposable = 0;  // conditions on edges the family's characteristics do not cross
  std::size_t pieces = 0;

  double speed(int phase, int j) const { return field->phases[phase].av.eig.lam[j]; }
  double xi_left(int phase, int j, double t) const {
    const auto& p = field->phases[phase];
    return p.left < 0 ? -kInf : field->edges[p.left].pos(t) - speed(phase, j) * t;
  }
  double xi_right(int phase, int j, double t) const {
    const auto& p = field->phases[phase];
    return p.right < 0 ? kInf : field->edges[p.right].pos(t) - speed(phase, j) * t;
  }
  // value at (t, x), x inside the phase
  double value(int phase, int j, double t, double x) const {
    return maps[phase][j].at_right(x - speed(phase, j) * t);
  }
};

namespace detail {

template <int N>
void side_lists(const AveragedField<N>& F, std::vector<std::vector<int>>& L, std::vector<std::vector<int>>& R) {
  L.assign(F.edges.size(), {});
  R.assign(F.edges.size(), {});
  for (const auto& p : F.phases) {
    if (p.right >= 0) L[p.right].push_back(p.id);
    if (p.left >= 0) R[p.left].push_back(p.id);
  }
  auto by_t = [&](int a, int b) { return F.phases[a].t_lo < F.phases[b].t_lo; };
  for (auto& v : L) std::stable_sort(v.begin(), v.end(), by_t);
  for (auto& v : R) std::stable_sort(v.begin(), v.end(), by_t);
}

// one family of the backward construction; every value is the sum of the prescribed jumps met by
// the forward characteristic from the point up to the final time
template <int N>
struct FamilySweep {
  WeightField<N>& W;
  const AveragedField<N>& F;
  int j;
  double top;
  std::vector<char> state;  // per task: 0 new, 1 open, 2 done
  int NP;

  FamilySweep(WeightField<N>& w, int fam, double top_value)
      : W(w), F(*w.field), j(fam), top(top_value), state(F.phases.size() + F.edges.size(), 0),
        NP(static_cast<int>(F.phases.size())) {}

  double a(int p) const { return W.speed(p, j); }
  // a characteristic leaving through e keeps going inside q (q left of e, resp. right of e)
  bool passes_left(int q, int e) const { return a(q) < F.edges[e].speed; }
  bool passes_right(int q, int e) const { return a(q) > F.edges[e].speed; }

  // forward continuation at the vertex ending edge e: phase index >= 0 or -(edge + 1) for a ride
  int continuation(int v) const {
    const auto& V = F.vertices[v];
    const auto& G = V.above;
    const auto& out = V.out;
    std::size_t n = out.size();
    if (n == 0) return G[0];
    auto s = [&](std::size_t k) { return F.edges[out[k - 1]].speed; };  // k = 1..n
    if (a(G[0]) <= s(1)) return G[0];
    for (std::size_t k = 1; k <= n; ++k) {
      if (a(G[k - 1]) >= s(k) && s(k) >= a(G[k])) return -(out[k - 1] + 1);
      if (k < n && s(k) <= a(G[k]) && a(G[k]) <= s(k + 1)) return G[k];
    }
    return G[n];
  }

  template <class Fn>
  void for_overlaps(const std::vector<int>& side, double lo, double hi, Fn&& fn) const {
    for (int q : side) {
      double t0 = std::max(lo, F.phases[q].t_lo), t1 = std::min(hi, F.phases[q].t_hi);
      if (t1 > t0) fn(q, t0, t1);
    }
  }

  std::vector<int> deps(int task) const {
    std::vector<int> d;
    if (task >= NP) {
      int e = task - NP;
      if (F.edges[e].v1 < 0) return d;
      int c = continuation(F.edges[e].v1);
      d.push_back(c >= 0 ? c : NP + (-c - 1));
      return d;
    }
    const auto& P = F.phases[task];
    if (P.above >= 0) d.push_back(P.above);
    if (P.left >= 0 && a(task) < F.edges[P.left].speed)
      for_overlaps(W.left_side[P.left], P.t_lo, P.t_hi, [&](int q, double, double) {
        d.push_back(passes_left(q, P.left) ? q : NP + P.left);
      });
    if (P.right >= 0 && a(task) > F.edges[P.right].speed)
      for_overlaps(W.right_side[P.right], P.t_lo, P.t_hi, [&](int q, double, double) {
        d.push_back(passes_right(q, P.right) ? q : NP + P.right);
      });
    return d;
  }

  // keys of q's map strictly inside (x0, x1) in q's coordinate, mapped to p's coordinate through the edge
  void transfer(StepMap& m, int p, int q, int e, double x0, double x1, double add) const {
    const auto& Q = W.maps[q][j];
    const auto& E = F.edges[e];
    double c = E.xr - E.speed * E.tr;
    double rate = E.speed - a(q);
    auto b = std::upper_bound(Q.key.begin(), Q.key.end(), x0);
    auto en = std::lower_bound(Q.key.begin(), Q.key.end(), x1);
    for (auto it = b; it < en; ++it) {
      double t = (*it - c) / rate;
      std::size_t k = static_cast<std::size_t>(it - Q.key.begin());
      m.push(*it + (a(q) - a(p)) * t, Q.val[k] + add);
    }
  }

  void compute_phase(int p) {
    const auto& P = F.phases[p];
    double ap = a(p);
    StepMap m;
    if (P.left >= 0 && ap < F.edges[P.left].speed) {
      int e = P.left;
      const auto& E = F.edges[e];
      double J = W.jump[e][j];
      for_overlaps(W.left_side[e], P.t_lo, P.t_hi, [&](int q, double t0, double t1) {
        double start = E.pos(t0) - ap * t0;
        if (passes_left(q, e)) {
          double x0 = E.pos(t0) - a(q) * t0, x1 = E.pos(t1) - a(q) * t1;
          m.push(start, W.maps[q][j].at_right(x0) + J);
          transfer(m, p, q, e, x0, x1, J);
        } else {
          m.push(start, W.ride[e][j]);
        }
      });
    }
    if (P.above == -2) {
      m.push(W.xi_left(p, j, P.t_hi), top);
    } else if (P.above >= 0) {
      int u = P.above;
      const auto& U = W.maps[u][j];
      double xl = F.left_pos(P, P.t_hi), xr = F.right_pos(P, P.t_hi);
      double ul = xl - a(u) * P.t_hi, ur = xr - a(u) * P.t_hi;
      double shift = (a(u) - ap) * P.t_hi;
      m.push(xl - ap * P.t_hi, U.at_right(ul));
      auto b = std::upper_bound(U.key.begin(), U.key.end(), ul);
      auto en = std::lower_bound(U.key.begin(), U.key.end(), ur);
      for (auto it = b; it < en; ++it) m.push(*it + shift, U.val[static_cast<std::size_t>(it - U.key.begin())]);
    }
    if (P.right >= 0 && ap > F.edges[P.right].speed) {
      int e = P.right;
      const auto& E = F.edges[e];
      double J = W.jump[e][j];
      const auto& side = W.right_side[e];
      for (auto it = side.rbegin(); it != side.rend(); ++it) {
        int q = *it;
        double t0 = std::max(P.t_lo, F.phases[q].t_lo), t1 = std::min(P.t_hi, F.phases[q].t_hi);
        if (!(t1 > t0)) continue;
        double start = E.pos(t1) - ap * t1;
        if (passes_right(q, e)) {
          double x1 = E.pos(t1) - a(q) * t1, x0 = E.pos(t0) - a(q) * t0;
          m.push(start, W.maps[q][j].at_right(x1) - J);
          transfer(m, p, q, e, x1, x0, -J);
        } else {
          m.push(start, W.ride[e][j]);
        }
      }
    }
    if (m.empty()) m.push(-kInf, top);  // zero-duration phase with a point top
    m.compress();
    W.maps[p][j] = std::move(m);
  }

  void compute_ride(int e) {
    const auto& E = F.edges[e];
    if (E.v1 < 0) {
      W.ride[e][j] = top;
      return;
    }
    const auto& V = F.vertices[E.v1];
    int c = continuation(E.v1);
    if (c < 0) {
      W.ride[e][j] = W.ride[-c - 1][j];
    } else {
      W.ride[e][j] = W.maps[c][j].at_left(V.x - a(c) * V.t);
    }
  }

  void run() {
    std::vector<std::pair<int, bool>> stack;
    for (int root = static_cast<int>(state.size()) - 1; root >= 0; --root) {
      if (state[root] == 2) continue;
      stack.push_back({root, false});
      while (!stack.empty()) {
        auto [t, expanded] = stack.back();
        stack.pop_back();
        if (state[t] == 2) continue;
        if (expanded) {
          if (t >= NP) {
            compute_ride(t - NP);
          } else {
            compute_phase(t);
          }
          state[t] = 2;
          continue;
        }
        if (state[t] == 1) throw std::logic_error("weight construction: dependency cycle");
        state[t] = 1;
        stack.push_back({t, true});
        for (int d : deps(t)) {
          if (state[d] == 1) throw std::logic_error("weight construction: dependency cycle");
          if (state[d] == 0) stack.push_back({d, false});
        }
      }
    }
  }
};

// jumps prescribed per edge and family; fn(record, J&, applies&) for each family
template <int N, class Rule>
WeightField<N> build_weight(const AveragedField<N>& F, const std::string& name, double K, std::optional<double> C0,
                            Rule&& rule) {
  WeightField<N> W;
  W.field = &F;
  W.rule = name;
  W.K = K;
  W.normalized = !C0.has_value();
  std::size_t ne = F.edges.size(), np = F.phases.size();
  W.maps.assign(np, {});
  W.jump.assign(ne, {});
  W.applies.assign(ne, {});
  W.ride.assign(ne, {});
  side_lists(F, W.left_side, W.right_side);
  for (const auto& e : F.edges) {
    if (e.record < 0) continue;
    rule(F.records[e.record], W.jump[e.id], W.applies[e.id]);
    // a condition can only be carried by characteristics crossing the record
    for (int j = 0; j < N; ++j) {
      if (!W.applies[e.id][j]) continue;
      const auto& r = F.records[e.record];
      bool cross = (r.lam_m(j) > r.speed && r.lam_p(j) > r.speed) || (r.lam_m(j) < r.speed && r.lam_p(j) < r.speed);
      if (!cross) ++W.unimposable;
    }
  }
  double top = C0.value_or(0.0);
  for (int j = 0; j < N; ++j) FamilySweep<N>(W, j, top).run();
  double lo = kInf, hi = -kInf;
  for (const auto& ms : W.maps)
    for (const auto& m : ms)
      for (double v : m.val) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  W.osc = hi - lo;
  W.shift = W.normalized ? 1 + std::abs(lo) : 0.0;
  W.C0 = top + W.shift;
  if (W.shift != 0) {
    for (auto& ms : W.maps)
      for (auto& m : ms)
        for (double& v : m.val) v += W.shift;
    for (auto& rv : W.ride)
      for (double& v : rv) v += W.shift;
  }
  for (auto& ms : W.maps)
    for (auto& m : ms) {
      m.finalize();
      W.pieces += m.key.size();
    }
  W.w_min = lo + W.shift;
  W.w_max = hi + W.shift;
  W.C2 = std::max(W.w_max, 1 / W.w_min);
  return W;
}

}  // namespace detail

// scalar rule: jumps only across undercompressive records of the averaged speed
inline WeightField<1> build_weight_scalar(const AveragedField<1>& F, double K = 10, std::optional<double> C0 = {}) {
  return detail::build_weight<1>(F, "scalar", K, C0, [&](const AveragedShockRecord<1>& r, Vec<1>& J, auto& ap) {
    double d = std::abs(r.lam_p(0) - r.lam_m(0));
    if (r.cls == ShockClass::SlowUnder) {
      J[0] = -(K * d);
      ap[0] = 1;
    } else if (r.cls == ShockClass::FastUnder) {
      J[0] = K * d;
      ap[0] = 1;
    }
  });
}

// 2x2 rule: transversal jumps K eps where the component keeps its sign, own-family jumps on
// undercompressive records keyed to the sign of rho
inline WeightField<2> build_weight_system(const AveragedField<2>& F, double K = 10, std::optional<double> C0 = {}) {
  return detail::build_weight<2>(F, "system", K, C0, [&](const AveragedShockRecord<2>& r, Vec<2>& J, auto& ap) {
    int i = r.family;
    for (int j = 0; j < 2; ++j) {
      if (!(r.cd.alpha_m[j] * r.cd.alpha_p[j] > 0)) continue;
      if (j != i) {
        J[j] = (j < i ? 1.0 : -1.0) * K * r.strength;
        ap[j] = 1;
      } else if (undercompressive(r.cls)) {
        J[j] = sgn(r.rho) * K * (r.lam_p(i) - r.lam_m(i));
        ap[j] = 1;
      }
    }
  });
}

// rule with a probe function pi(u, u'); pi = chord reproduces the scalar rule
inline WeightField<1> build_weight_generalized(const AveragedField<1>& F, const std::function<double(double, double)>& pi,
                                               double K = 10, std::optional<double> C0 = {}) {
  return detail::build_weight<1>(F, "generalized", K, C0, [&](const AveragedShockRecord<1>& r, Vec<1>& J, auto& ap) {
    double pm = r.up_m[0] - r.u_m[0], pp = r.up_p[0] - r.u_p[0];
    if (!(pm * pp > 0) || r.cls == ShockClass::Degenerate) return;
    double dpi = pi(r.u_p[0], r.up_p[0]) - pi(r.u_m[0], r.up_m[0]);
    double s = (pp - pm) * pp;
    J[0] = s > 0 ? K * dpi : -(K * dpi);
    ap[0] = 1;
  });
}

// ---------------------------------------------------------------- audits

struct JumpAudit {
  int checked = 0;       // (record, family, piece) samples
  int records = 0;       // records carrying at least one condition
  double max_error = 0;  // |w+ - w- - J|
  int violations = 0;    // beyond tol
};

// samples w+ - w- along every record with an imposed condition
namespace detail {

// time where the trace of e in phase p crosses each key of p's map inside (ta, tb), with a rounding
// bound that grows as the edge speed approaches the characteristic speed
struct Cut {
  double t, err;
};

template <int N>
void key_cuts(const WeightField<N>& W, const ArrEdge<N>& E, int p, int j, double ta, double tb, std::vector<Cut>& out) {
  double rate = E.speed - W.speed(p, j);
  if (rate == 0) return;
  double c = E.xr - E.speed * E.tr;
  double x0 = c + rate * ta, x1 = c + rate * tb;
  const auto& key = W.maps[p][j].key;
  auto b = std::upper_bound(key.begin(), key.end(), std::min(x0, x1));
  auto en = std::lower_bound(key.begin(), key.end(), std::max(x0, x1));
  for (auto it = b; it < en; ++it) {
    double t = (*it - c) / rate;
    double err = 16 * std::numeric_limits<double>::epsilon() * (std::abs(*it) + std::abs(c) + std::abs(E.speed * t)) /
                 std::abs(rate);
    out.push_back({t, err + 1e-12 * std::max(1.0, std::abs(t))});
  }
}

// pieces of (ta, tb) between cuts that are resolvable; fn(midpoint, length)
template <class Fn>
void for_pieces(std::vector<Cut> cuts, double ta, double tb, Fn&& fn) {
  cuts.push_back({ta, 0});
  cuts.push_back({tb, 0});
  std::sort(cuts.begin(), cuts.end(), [](const Cut& x, const Cut& y) { return x.t < y.t; });
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    double lo = std::max(cuts[k].t, ta), hi = std::min(cuts[k + 1].t, tb);
    // cuts from the two sides that coincide up to rounding
    if (!(hi - lo > cuts[k].err + cuts[k + 1].err)) continue;
    fn(0.5 * (lo + hi), hi - lo);
  }
}

// midpoints of the resolvable pieces along e for each overlapping pair of neighbours; fn(l, r, t)
template <int N, class Fn>
void edge_pieces(const WeightField<N>& W, const ArrEdge<N>& E, int j, Fn&& fn) {
  const auto& F = *W.field;
  for (int l : W.left_side[E.id])
    for (int r : W.right_side[E.id]) {
      double t0 = std::max(F.phases[l].t_lo, F.phases[r].t_lo), t1 = std::min(F.phases[l].t_hi, F.phases[r].t_hi);
      if (!(t1 > t0)) continue;
      std::vector<Cut> cuts;
      key_cuts(W, E, l, j, t0, t1, cuts);
      key_cuts(W, E, r, j, t0, t1, cuts);
      for_pieces(std::move(cuts), t0, t1, [&](double t, double) { fn(l, r, t); });
    }
}

// w+ - w- across e at time t between neighbours l and r
template <int N>
double jump_at(const WeightField<N>& W, const ArrEdge<N>& E, int j, int l, int r, double t) {
  double x = E.pos(t);
  return W.maps[r][j].at_right(x - W.speed(r, j) * t) - W.maps[l][j].at_left(x - W.speed(l, j) * t);
}

}  // namespace detail

template <int N>
JumpAudit audit_jumps(const WeightField<N>& W, double tol = 1e-12) {
  const auto& F = *W.field;
  JumpAudit a;
  for (const auto& E : F.edges) {
    if (E.record < 0) continue;
    bool any = false;
    for (int j = 0; j < N; ++j) {
      if (!W.applies[E.id][j]) continue;
      any = true;
      detail::edge_pieces(W, E, j, [&](int l, int r, double t) {
        double d = detail::jump_at(W, E, j, l, r, t);
        double err = std::abs(d - W.jump[E.id][j]);
        ++a.checked;
        a.max_error = std::max(a.max_error, err);
        if (err > tol * std::max(1.0, std::abs(d))) ++a.violations;
      });
    }
    a.records += any;
  }
  return a;
}

struct ConstraintAudit {
  int transversal = 0, transversal_bad = 0;  // dominant j != i
  int strong = 0, strong_bad = 0;            // strongly dominant undercompressive own family
  int weak = 0, weak_bad = 0;                // dominant, not strongly dominant
  int bridge_sign_bad = 0;                   // dominant transversal with alpha- alpha+ <= 0
  int strong_not_exact = 0, weak_not_exact = 0;
  double lipschitz = 0;                      // max |A+ - A-| / strength
  double k_required = kInf;                  // smallest K/K_audit ratio met by the own-family conditions
  int violations() const { return transversal_bad + strong_bad + weak_bad; }
};

// the stability-theory constraints at every non-degenerate record; transversal bounds use
// K / L with L the largest |A+ - A-| / strength over the field
template <int N>
ConstraintAudit check_weight_constraints(const WeightField<N>& W, double K) {
  const auto& F = *W.field;
  ConstraintAudit c;
  for (const auto& r : F.records)
    if (r.strength > 0) c.lipschitz = std::max(c.lipschitz, matnorm<N>(r.ap.A - r.am.A) / r.strength);
  double tol = 1e-12;
  for (const auto& E : F.edges) {
    if (E.record < 0) continue;
    const auto& r = F.records[E.record];
    if (r.cls == ShockClass::Degenerate) continue;
    int i = r.family;
    double da = matnorm<N>(r.ap.A - r.am.A), dl = std::abs(r.lam_p(i) - r.lam_m(i));
    for (int j = 0; j < N; ++j) {
      bool own = j == i;
      if (own ? !(undercompressive(r.cls) && r.dominant[i]) : !r.dominant[j]) continue;
      bool slow = r.cls == ShockClass::SlowUnder;
      bool strong = r.strong_eig || r.strong_mat;
      // a record fails a check if any piece along it does
      bool bad = false, off_strong = false, off_weak = false, seen = false;
      double kreq = kInf;
      detail::edge_pieces(W, E, j, [&](int l, int rr, double t) {
        seen = true;
        double d = detail::jump_at(W, E, j, l, rr, t);
        double scale = tol * std::max(1.0, std::abs(d));
        if (!own) {
          double need = c.lipschitz > 0 ? K / c.lipschitz * da : 0.0;
          bad |= !(j < i ? d >= need - scale : d <= -need + scale);
        } else if (strong) {
          bad |= !(slow ? d <= -K * dl + scale : d >= K * dl - scale);
          off_strong |= std::abs(d - (slow ? -1 : 1) * K * dl) > scale;
          if (dl > 0) kreq = std::min(kreq, (slow ? -d : d) / (K * dl));
        } else {
          bad |= !(slow ? d <= K * dl + scale : d >= -K * dl - scale);
          off_weak |= r.cd.alpha_m[i] * r.cd.alpha_p[i] > 0 && std::abs(std::abs(d) - K * dl) > scale;
        }
      });
      if (!seen) continue;
      if (!own) {
        ++c.transversal;
        if (!(r.cd.alpha_m[j] * r.cd.alpha_p[j] > 0)) ++c.bridge_sign_bad;
        c.transversal_bad += bad;
      } else if (strong) {
        ++c.strong;
        c.strong_bad += bad;
        c.strong_not_exact += off_strong;
        c.k_required = std::min(c.k_required, kreq);
      } else {
        ++c.weak;
        c.weak_bad += bad;
        c.weak_not_exact += off_weak;
      }
    }
  }
  return c;
}

// ---------------------------------------------------------------- sign regions

struct SignRegions {
  int regions = 0;
  int positive = 0, negative = 0, zero = 0;   // regions by sign
  int zero_phases = 0;                        // bounded phases with an exactly vanishing component
  std::map<std::string, int> boundary;        // class of records separating opposite signs
  int bad_boundaries = 0;                     // scalar: undercompressive records between opposite signs
  std::vector<int> region_of;                 // per phase
};

// maximal unions of phases where psi (N = 1) or alpha_j keeps its sign
template <int N>
SignRegions sign_regions(const AveragedField<N>& F, int family = 0) {
  auto comp = [&](const Phase<N>& p) { return dot<N>(p.av.eig.l[family], p.up - p.u); };
  SignRegions s;
  detail::UnionFind uf(F.phases.size());
  for (const auto& p : F.phases) {
    if (p.above >= 0 && sgn(comp(p)) == sgn(comp(F.phases[p.above]))) uf.join(p.id, p.above);
    if (p.left >= 0 && p.right >= 0 && comp(p) == 0 && p.t_hi > p.t_lo) ++s.zero_phases;
  }
  std::vector<std::vector<int>> L, R;
  detail::side_lists(F, L, R);
  for (const auto& E : F.edges) {
    for (int l : L[E.id])
      for (int r : R[E.id]) {
        double t0 = std::max(F.phases[l].t_lo, F.phases[r].t_lo), t1 = std::min(F.phases[l].t_hi, F.phases[r].t_hi);
        if (!(t1 > t0)) continue;
        double a = sgn(comp(F.phases[l])), b = sgn(comp(F.phases[r]));
        if (a == b) {
          uf.join(l, r);
        } else if (a * b < 0 && E.record >= 0) {
          auto cls = F.records[E.record].cls;
          ++s.boundary[class_name(cls)];
          if (N == 1 && undercompressive(cls)) ++s.bad_boundaries;
        }
      }
  }
  std::map<int, int> id;
  s.region_of.assign(F.phases.size(), -1);
  for (const auto& p : F.phases) {
    int root = uf.find(p.id);
    auto [it, fresh] = id.emplace(root, static_cast<int>(id.size()));
    s.region_of[p.id] = it->second;
    if (fresh) {
      double c = sgn(comp(p));
      (c > 0 ? s.positive : c < 0 ? s.negative : s.zero)++;
    }
  }
  s.regions = static_cast<int>(id.size());
  return s;
}

// ---------------------------------------------------------------- backward characteristics

struct TracerReport {
  int paths = 0;
  int steps = 0;
  int crossings = 0;
  int mismatches = 0;
  double max_error = 0;
  int visited = 0, cells = 0;  // phases of positive duration
  double coverage() const { return cells ? static_cast<double>(visited) / cells : 1.0; }
};

// follows family-j characteristics backward from the final slice and from both sides of every
// record, checking the stored weight against the running value: constant inside cells, minus the
// prescribed jump at every crossing; paths stop at the initial line, at records whose
// characteristics leave both sides, and at vertices
template <int N>
TracerReport backward_characteristics(const WeightField<N>& W, int j) {
  const auto& F = *W.field;
  TracerReport rep;
  std::vector<int> opened_at(F.phases.size(), -1);
  for (std::size_t v = 0; v < F.vertices.size(); ++v)
    for (int p : F.vertices[v].above) opened_at[p] = static_cast<int>(v);
  std::vector<char> seen(F.phases.size(), 0);
  double tol = 1e-12;

  auto check = [&](int p, double t, double x, double expect) {
    double got = W.value(p, j, t, x);
    double err = std::abs(got - expect);
    rep.max_error = std::max(rep.max_error, err);
    if (err > tol * std::max(1.0, std::abs(expect))) ++rep.mismatches;
  };
  auto side_at = [&](const std::vector<int>& side, double t) {
    for (int q : side)
      if (F.phases[q].t_lo <= t && t < F.phases[q].t_hi) return q;
    return -1;
  };

  auto trace = [&](int p, double t, double x) {
    ++rep.paths;
    double v = W.value(p, j, t, x);
    for (int guard = 0; guard < 100000; ++guard) {
      const auto& P = F.phases[p];
      seen[p] = 1;
      ++rep.steps;
      check(p, t, x, v);
      double a = W.speed(p, j);
      // backward hit times
      double tb = P.t_lo;
      int hit = 0;  // 0 bottom, 1 left, 2 right
      if (P.left >= 0) {
        const auto& E = F.edges[P.left];
        if (a > E.speed) {
          double th = t - (x - E.pos(t)) / (a - E.speed);
          if (th > tb) {
            tb = th;
            hit = 1;
          }
        }
      }
      if (P.right >= 0) {
        const auto& E = F.edges[P.right];
        if (a < E.speed) {
          double th = t - (E.pos(t) - x) / (E.speed - a);
          if (th > tb) {
            tb = th;
            hit = 2;
          }
        }
      }
      double xb = x - a * (t - tb);
      if (hit == 0) {
        if (tb <= 0) return;
        int v0 = opened_at[p];
        if (v0 < 0) return;
        const auto& V = F.vertices[v0];
        if (V.below.empty()) return;
        int q = xb < V.x ? V.below.front() : V.below.back();
        if (std::abs(xb - V.x) <= 1e-12 * std::max(1.0, std::abs(xb))) return;
        if (F.phases[q].above != p) return;
        // continue just below the window
        p = q;
        t = tb;
        x = xb;
        check(p, t, x, v);
        continue;
      }
      int e = hit == 1 ? P.left : P.right;
      const auto& E = F.edges[e];
      double tm = tb - 1e-13 * std::max(1.0, tb);
      int q = side_at(hit == 1 ? W.left_side[e] : W.right_side[e], tm);
      if (q < 0 || !(tm > F.phases[q].t_lo)) return;
      double aq = W.speed(q, j);
      bool cross = hit == 1 ? aq > E.speed : aq < E.speed;
      if (!cross) return;  // characteristics leave both sides
      ++rep.crossings;
      v = hit == 1 ? v - W.jump[e][j] : v + W.jump[e][j];
      // a point strictly inside q, slightly earlier on the same characteristic of q
      double dt = 1e-9 * std::max(1.0, tb);
      double tt = std::max(tb - dt, F.phases[q].t_lo + 0.5 * (tb - F.phases[q].t_lo));
      double xx = E.pos(tb) - aq * (tb - tt);
      p = q;
      t = tt;
      x = xx;
    }
  };

  for (const auto& p : F.phases) {
    if (!(p.t_hi > p.t_lo)) continue;
    ++rep.cells;
  }
  // final slice
  for (int p : field_slice(F, F.t_end)) {
    const auto& P = F.phases[p];
    double t = F.t_end * (1 - 1e-12);
    double xl = F.left_pos(P, t), xr = F.right_pos(P, t);
    if (!std::isfinite(xl)) xl = xr - 1;
    if (!std::isfinite(xr)) xr = xl + 1;
    if (!(xr > xl)) continue;
    trace(p, t, 0.5 * (xl + xr));
  }
  // from both sides of every record, at the middle of each adjacent cell's stretch
  for (const auto& E : F.edges) {
    if (E.record < 0) continue;
    for (int side = 0; side < 2; ++side)
      for (int q : side ? W.right_side[E.id] : W.left_side[E.id]) {
        const auto& Q = F.phases[q];
        if (!(Q.t_hi > Q.t_lo)) continue;
        double t = 0.5 * (Q.t_lo + Q.t_hi);
        double w = F.right_pos(Q, t) - F.left_pos(Q, t);
        double off = std::isfinite(w) ? 1e-3 * w : 1e-3;
        trace(q, t, E.pos(t) + (side ? off : -off));
      }
  }
  for (const auto& p : F.phases)
    if (p.t_hi > p.t_lo && seen[p.id]) ++rep.visited;
  return rep;
}

// ---------------------------------------------------------------- norms and ledger

namespace detail {

inline std::vector<double> event_times(const std::vector<ArrVertex>& V, double T) {
  std::vector<double> ts{0.0, T};
  for (const auto& v : V) ts.push_back(v.t);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  return ts;
}

template <int N>
Vec<N> alpha_of(const Phase<N>& p) {
  Vec<N> a{};
  for (int j = 0; j < N; ++j) a[j] = dot<N>(p.av.eig.l[j], p.up - p.u);
  return a;
}

template <int N>
bool alive_at(const AveragedField<N>& F, const Phase<N>& p, double t) {
  return (p.t_lo <= t && t < p.t_hi) || (t == F.t_end && p.above == -2);
}

}  // namespace detail

// sum_j int |alpha_j| w_j dx at time t, exact over the merged breakpoints
template <int N>
double weighted_norm(const WeightField<N>& W, double t) {
  const auto& F = *W.field;
  if (t < 0 || t > F.t_end) throw DomainError("weighted_norm: time out of range");
  double s = 0;
  for (const auto& p : F.phases) {
    if (!detail::alive_at(F, p, t)) continue;
    auto al = detail::alpha_of(p);
    for (int j = 0; j < N; ++j) {
      if (al[j] == 0) continue;
      double a = W.xi_left(p.id, j, t), b = W.xi_right(p.id, j, t);
      if (!std::isfinite(a) || !std::isfinite(b)) throw DomainError("weighted_norm: unbounded support");
      s += std::abs(al[j]) * W.maps[p.id][j].integral(a, b);
    }
  }
  return s;
}

// L1 norm of psi = u' - u on the field at time t
template <int N>
double field_l1(const AveragedField<N>& F, double t) {
  double s = 0;
  for (const auto& p : F.phases) {
    if (!detail::alive_at(F, p, t)) continue;
    double m = norm1<N>(p.up - p.u);
    if (m == 0) continue;
    double w = F.right_pos(p, t) - F.left_pos(p, t);
    if (!std::isfinite(w)) throw DomainError("field_l1: unbounded support");
    s += m * w;
  }
  return s;
}

// L1 norm at every event time, assembled from the linear pieces of each cell
template <int N>
std::vector<std::pair<double, double>> l1_series(const AveragedField<N>& F) {
  auto ts = detail::event_times(F.vertices, F.t_end);
  std::vector<double> c0(ts.size() + 1, 0.0), c1(ts.size() + 1, 0.0);
  for (const auto& p : F.phases) {
    double m = norm1<N>(p.up - p.u);
    if (m == 0 || !(p.t_hi > p.t_lo)) continue;
    if (p.left < 0 || p.right < 0) throw DomainError("l1_series: unbounded support");
    const auto& L = F.edges[p.left];
    const auto& R = F.edges[p.right];
    // m (xR(t) - xL(t)) = m (cR - cL) + m (sR - sL) t
    double a0 = m * ((R.xr - R.speed * R.tr) - (L.xr - L.speed * L.tr)), a1 = m * (R.speed - L.speed);
    auto i0 = std::lower_bound(ts.begin(), ts.end(), p.t_lo) - ts.begin();
    auto i1 = std::lower_bound(ts.begin(), ts.end(), p.t_hi) - ts.begin();
    if (p.above == -2) ++i1;
    c0[i0] += a0;
    c1[i0] += a1;
    c0[i1] -= a0;
    c1[i1] -= a1;
  }
  std::vector<std::pair<double, double>> out;
  double s0 = 0, s1 = 0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    s0 += c0[k];
    s1 += c1[k];
    out.push_back({ts[k], std::max(0.0, s0 + s1 * ts[k])});
  }
  return out;
}

struct LedgerInterval {
  double t0 = 0, t1 = 0;
  double norm0 = 0, norm1 = 0;
  double integral = 0;                    // time integral of the record sums
  std::array<double, 5> by_class{};       // indexed by ShockClass
  double budget = 0;                      // rarefaction-class records
  double excess = 0;                      // sum over other records of their largest positive rate
  double sd_sup = 0;                      // sup |psi+ - psi-| over strongly dominant rarefaction-class records
  double fd_error = 0;
};

struct DissipationLedger {
  std::vector<LedgerInterval> intervals;
  double max_fd_error = 0;
  double max_excess = 0;
  double overshoot = 0;        // sum of positive norm increments
  double max_vertex_jump = 0;  // norm mismatch at event times from the vertex clustering tolerance
  double norm0 = 0, norm_max = 0, norm_end = 0;
  double lax_dissipation = 0;  // minus the integrals, both nonnegative when the weight works
  double under_dissipation = 0;
  double budget_total = 0;
  double sd_integral = 0;
  std::size_t sub_pieces = 0;
};

// record sums sum_j beta_j^- w_j^- + beta_j^+ w_j^+ integrated piece by piece over each interval
// between event times, set against differences of the weighted norm
template <int N>
DissipationLedger norm_derivative_ledger(const WeightField<N>& W) {
  const auto& F = *W.field;
  DissipationLedger D;
  auto ts = detail::event_times(F.vertices, F.t_end);
  std::size_t nI = ts.size() - 1;
  D.intervals.resize(nI);
  for (std::size_t k = 0; k < nI; ++k) {
    D.intervals[k].t0 = ts[k];
    D.intervals[k].t1 = ts[k + 1];
  }
  // norms at both ends of every interval, from the cells alive inside it
  std::vector<double> n0(nI, 0.0), n1(nI, 0.0);
  for (const auto& p : F.phases) {
    if (!(p.t_hi > p.t_lo)) continue;
    auto al = detail::alpha_of(p);
    bool any = false;
    for (int j = 0; j < N; ++j) any = any || al[j] != 0;
    if (!any) continue;
    auto i0 = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), p.t_lo) - ts.begin());
    for (std::size_t k = i0; k < nI && ts[k] < p.t_hi; ++k) {
      for (int j = 0; j < N; ++j) {
        if (al[j] == 0) continue;
        double a0 = W.xi_left(p.id, j, ts[k]), b0 = W.xi_right(p.id, j, ts[k]);
        double a1 = W.xi_left(p.id, j, ts[k + 1]), b1 = W.xi_right(p.id, j, ts[k + 1]);
        if (!std::isfinite(a0) || !std::isfinite(b0)) throw DomainError("ledger: unbounded support");
        const auto& m = W.maps[p.id][j];
        n0[k] += std::abs(al[j]) * m.integral(a0, b0);
        n1[k] += std::abs(al[j]) * m.integral(a1, b1);
      }
    }
  }
  // record sums
  for (const auto& E : F.edges) {
    if (E.record < 0) continue;
    const auto& r = F.records[E.record];
    int ci = static_cast<int>(r.cls);
    bool raref = r.cls == ShockClass::Rarefaction;
    bool sd = raref && (r.strong_eig || r.strong_mat);
    double jump = norm<N>((r.up_p - r.u_p) - (r.up_m - r.u_m));
    const auto& Ls = W.left_side[E.id];
    const auto& Rs = W.right_side[E.id];
    auto k0 = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), E.t0) - ts.begin());
    std::size_t il = 0, ir = 0;
    for (std::size_t k = k0; k < nI && ts[k] < E.t1; ++k) {
      double ta = ts[k], tb = ts[k + 1];
      while (il + 1 < Ls.size() && !(F.phases[Ls[il]].t_hi > ta)) ++il;
      while (ir + 1 < Rs.size() && !(F.phases[Rs[ir]].t_hi > ta)) ++ir;
      int l = Ls[il], rp = Rs[ir];
      auto& I = D.intervals[k];
      if (sd) I.sd_sup = std::max(I.sd_sup, jump);
      double integral = 0, peak = -kInf;
      std::vector<detail::Cut> cuts;
      for (int j = 0; j < N; ++j) {
        if (r.cd.beta_m[j] == 0 && r.cd.beta_p[j] == 0) continue;
        detail::key_cuts(W, E, l, j, ta, tb, cuts);
        detail::key_cuts(W, E, rp, j, ta, tb, cuts);
      }
      detail::for_pieces(std::move(cuts), ta, tb, [&](double t, double dt) {
        double x = E.pos(t);
        double rate = 0;
        for (int j = 0; j < N; ++j) {
          double bm = r.cd.beta_m[j], bp = r.cd.beta_p[j];
          if (bm == 0 && bp == 0) continue;
          double wm = W.maps[l][j].at_left(x - W.speed(l, j) * t);
          double wp = W.maps[rp][j].at_right(x - W.speed(rp, j) * t);
          rate += bm * wm + bp * wp;
        }
        integral += rate * dt;
        peak = std::max(peak, rate);
        ++D.sub_pieces;
      });
      if (peak == -kInf) peak = 0;
      I.integral += integral;
      I.by_class[static_cast<std::size_t>(ci)] += integral;
      if (raref) {
        I.budget += std::max(0.0, integral);
      } else {
        I.excess += std::max(0.0, peak);
      }
    }
  }
  D.norm0 = nI ? n0.front() : 0.0;
  D.norm_end = nI ? n1.back() : 0.0;
  for (std::size_t k = 0; k < nI; ++k) {
    auto& I = D.intervals[k];
    I.norm0 = n0[k];
    I.norm1 = n1[k];
    if (k > 0) D.max_vertex_jump = std::max(D.max_vertex_jump, std::abs(n0[k] - n1[k - 1]));
    double dn = I.norm1 - I.norm0;
    I.fd_error = std::abs(dn - I.integral);
    D.max_fd_error = std::max(D.max_fd_error, I.fd_error);
    D.max_excess = std::max(D.max_excess, I.excess);
    D.overshoot += std::max(0.0, dn);
    D.norm_max = std::max(D.norm_max, I.norm1);
    D.lax_dissipation -= I.by_class[static_cast<std::size_t>(ShockClass::Lax)];
    D.under_dissipation -= I.by_class[static_cast<std::size_t>(ShockClass::SlowUnder)] +
                           I.by_class[static_cast<std::size_t>(ShockClass::FastUnder)];
    D.budget_total += I.budget;
    D.sd_integral += I.sd_sup * (I.t1 - I.t0);
  }
  D.norm_max = std::max(D.norm_max, D.norm0);
  return D;
}

struct StabilityVerdict {
  double l1_0 = 0, l1_max = 0;
  double ratio = 0;           // max_t |psi(t)|_1 / |psi(0)|_1
  double c_empirical = 0;     // max_t |psi(t)|_1 / (|psi(0)|_1 + int sup term)
  double c_bound = 0;         // basis constants times w_max / w_min
  double functional_excess = 0;  // max_t (N(t) - N(0) - integrated budget)^+ / N(0)
  bool holds = false;
};

// checks the L1 estimate with the constant implied by the weight bounds and eigenbasis equivalence
template <int N>
StabilityVerdict stability_estimate_check(const WeightField<N>& W, const DissipationLedger& D) {
  const auto& F = *W.field;
  StabilityVerdict v;
  auto l1 = l1_series(F);
  v.l1_0 = l1.front().second;
  // |psi|_1 <= c1 sum |alpha_j| and sum |alpha_j| <= c2 |psi|_1 over every cell
  double c1 = 0, c2 = 0;
  for (const auto& p : F.phases) {
    for (int j = 0; j < N; ++j) {
      c1 = std::max(c1, norm1<N>(p.av.eig.r[j]));
      double lj = 0;
      for (int k = 0; k < N; ++k) lj = std::max(lj, std::abs(p.av.eig.l[j][k]));
      c2 = std::max(c2, lj * N);
    }
  }
  v.c_bound = c1 * c2 * W.w_max / W.w_min;
  double integ = 0;
  std::size_t k = 0;
  for (const auto& [t, m] : l1) {
    while (k < D.intervals.size() && D.intervals[k].t1 <= t) {
      integ += D.intervals[k].sd_sup * (D.intervals[k].t1 - D.intervals[k].t0);
      ++k;
    }
    v.l1_max = std::max(v.l1_max, m);
    if (v.l1_0 + integ > 0) v.c_empirical = std::max(v.c_empirical, m / (v.l1_0 + integ));
  }
  v.ratio = v.l1_0 > 0 ? v.l1_max / v.l1_0 : 1.0;
  double acc = 0;
  for (const auto& I : D.intervals) {
    acc += I.budget;
    if (D.norm0 > 0) v.functional_excess = std::max(v.functional_excess, (I.norm1 - D.norm0 - acc) / D.norm0);
  }
  v.holds = v.c_empirical <= v.c_bound * (1 + 1e-12) + 1e-12;
  return v;
}

// ---------------------------------------------------------------- serialization

template <int N>
std::string weight_csv(const WeightField<N>& W) {
  std::ostringstream os;
  os.precision(17);
  os << "phase,family,t_lo,t_hi,xi_lo,xi_hi,w\n";
  const auto& F = *W.field;
  for (const auto& p : F.phases)
    for (int j = 0; j < N; ++j) {
      const auto& m = W.maps[p.id][j];
      for (std::size_t k = 0; k < m.key.size(); ++k)
        os << p.id << ',' << j << ',' << p.t_lo << ',' << p.t_hi << ',' << m.key[k] << ','
           << (k + 1 < m.key.size() ? m.key[k + 1] : kInf) << ',' << m.val[k] << '\n';
    }
  return os.str();
}

inline std::string ledger_csv(const DissipationLedger& D) {
  std::ostringstream os;
  os.precision(17);
  os << "t0,t1,norm0,norm1,ledger,lax,slow,fast,rarefaction,degenerate,budget,excess,sd_sup,fd_error,cum_lax,cum_under\n";
  double cl = 0, cu = 0;
  for (const auto& I : D.intervals) {
    cl -= I.by_class[0];
    cu -= I.by_class[1] + I.by_class[2];
    os << I.t0 << ',' << I.t1 << ',' << I.norm0 << ',' << I.norm1 << ',' << I.integral;
    for (double b : I.by_class) os << ',' << b;
    os << ',' << I.budget << ',' << I.excess << ',' << I.sd_sup << ',' << I.fd_error << ',' << cl << ',' << cu << '\n';
  }
  return os.str();
}

}  // namespace l1stab
