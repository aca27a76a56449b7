#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "riemann.hpp"

namespace l1stab {

template <int N>
struct Profile {
  std::vector<double> x;        // strictly increasing breakpoints
  std::vector<Vec<N>> values;   // values.size() == x.size() + 1
  double t = 0;
  bool at_event = false;        // slice taken exactly at an interaction time (right limit)
};

template <int N>
struct Front {
  int id = -1;
  int family = 0;
  WaveKind kind = WaveKind::Shock;
  Vec<N> left{}, right{};
  double speed = 0, strength = 0;
  double t0 = 0, x0 = 0;        // birth
  double t1 = kInf, x1 = 0;     // death (kInf while alive at t_end)
  int birth_event = -1, death_event = -1;

  double pos(double t) const { return x0 + speed * (t - t0); }
  bool alive_at(double t) const { return t0 <= t && t < t1; }
};

struct Event {
  double t = 0, x = 0;
  std::vector<int> incoming, outgoing;
  int initial_jump = -1;  // >= 0 for the t = 0 Riemann problems
};

template <int N>
struct TrackedRun {
  Profile<N> initial;
  std::vector<Front<N>> fronts;
  std::vector<Event> events;  // time-ordered
  double t_end = 0;
  double h = 0;
  std::uint64_t seed = 0;
  StateGrid grid;             // scalar runs only
  std::string model_name;
  int interactions() const {
    int n = 0;
    for (const auto& e : events) n += e.initial_jump < 0;
    return n;
  }
};

// portable uniform in [0,1)
inline double unit_uniform(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

template <int N>
double total_variation(const Profile<N>& p) {
  double tv = 0;
  for (std::size_t i = 0; i + 1 < p.values.size(); ++i) tv += norm1<N>(p.values[i + 1] - p.values[i]);
  return tv;
}

// exact integral of |a - b|_1 over the merged arrangement; infinite if far fields differ
template <int N>
double l1_distance(const Profile<N>& a, const Profile<N>& b) {
  if (std::abs(a.t - b.t) > 1e-12 * std::max(1.0, std::abs(a.t))) throw DomainError("l1_distance: mismatched times");
  if (norm1<N>(a.values.front() - b.values.front()) > 0 || norm1<N>(a.values.back() - b.values.back()) > 0)
    return kInf;
  std::vector<double> xs(a.x);
  xs.insert(xs.end(), b.x.begin(), b.x.end());
  std::sort(xs.begin(), xs.end());
  double s = 0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    double xm = xs[k];
    while (ia < a.x.size() && a.x[ia] <= xm) ++ia;
    while (ib < b.x.size() && b.x[ib] <= xm) ++ib;
    s += (xs[k + 1] - xs[k]) * norm1<N>(a.values[ia] - b.values[ib]);
  }
  return s;
}

template <int N>
Vec<N> profile_value(const Profile<N>& p, double x) {
  auto it = std::upper_bound(p.x.begin(), p.x.end(), x);
  return p.values[static_cast<std::size_t>(it - p.x.begin())];
}

// raw initial data: either piecewise constant or a function sampled at spacing h over [a, b]
template <int N>
struct InitialSpec {
  std::vector<double> breakpoints;
  std::vector<Vec<N>> values;
  std::function<Vec<N>(double)> fn;
  double a = 0, b = 0;
  Vec<N> far{};  // value outside [a, b] for sampled data
};

template <int N>
Profile<N> clean_profile(Profile<N> p) {
  Profile<N> q;
  q.t = p.t;
  q.values.push_back(p.values.front());
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    if (p.values[i + 1] == q.values.back()) continue;
    if (!q.x.empty() && p.x[i] <= q.x.back()) {
      q.values.back() = p.values[i + 1];
      if (q.values.size() >= 2 && q.values[q.values.size() - 2] == q.values.back()) {
        q.values.pop_back();
        q.x.pop_back();
      }
      continue;
    }
    q.x.push_back(p.x[i]);
    q.values.push_back(p.values[i + 1]);
  }
  return q;
}

// project every component to the grid of spacing h
template <int N>
Profile<N> discretize_initial(const InitialSpec<N>& spec, double h) {
  StateGrid g{h, 0.0};
  auto proj = [&](Vec<N> v) {
    for (auto& c : v) c = g.snap(c);
    return v;
  };
  Profile<N> p;
  if (!spec.fn) {
    if (spec.values.size() != spec.breakpoints.size() + 1)
      throw ValidationError("initial data: values must have one more entry than breakpoints");
    for (std::size_t i = 0; i + 1 < spec.breakpoints.size(); ++i)
      if (!(spec.breakpoints[i] < spec.breakpoints[i + 1]))
        throw ValidationError("initial data: breakpoints must be strictly increasing");
    p.x = spec.breakpoints;
    for (const auto& v : spec.values) p.values.push_back(proj(v));
  } else {
    if (!(spec.b > spec.a)) throw ValidationError("initial data: empty sampling interval");
    long n = std::max<long>(1, std::lround((spec.b - spec.a) / h));
    double dx = (spec.b - spec.a) / static_cast<double>(n);
    p.values.push_back(proj(spec.far));
    for (long k = 0; k < n; ++k) {
      p.x.push_back(spec.a + dx * static_cast<double>(k));
      p.values.push_back(proj(spec.fn(spec.a + dx * (static_cast<double>(k) + 0.5))));
    }
    p.x.push_back(spec.b);
    p.values.push_back(proj(spec.far));
    for (const auto& v : p.values)
      if (!std::isfinite(norm1<N>(v))) throw ValidationError("initial data: unbounded variation");
  }
  return clean_profile(p);
}

// seeded piecewise-constant data with compact variation: jumps at jittered grid positions
// on [a, b], increments uniform in [-amp, amp] rescaled so TV <= tv_cap, far field = base
template <int N>
InitialSpec<N> random_profile(std::uint64_t seed, int jumps, double a, double b, Vec<N> base, double amplitude,
                              double tv_cap) {
  std::mt19937_64 g(seed);
  InitialSpec<N> s;
  int n = std::max(2, jumps);
  double dx = (b - a) / n;
  for (int k = 0; k < n; ++k) s.breakpoints.push_back(a + dx * (k + 0.5 + 0.8 * (unit_uniform(g) - 0.5)));
  std::vector<Vec<N>> inner;
  double tv = 0;
  Vec<N> prev = base;
  for (int k = 0; k + 1 < n; ++k) {
    Vec<N> v;
    for (int c = 0; c < N; ++c) v[c] = base[c] + amplitude * (2 * unit_uniform(g) - 1);
    tv += norm1<N>(v - prev);
    prev = v;
    inner.push_back(v);
  }
  tv += norm1<N>(base - prev);
  double scale = tv > tv_cap ? tv_cap / tv : 1.0;
  s.values.push_back(base);
  for (auto& v : inner) s.values.push_back(base + scale * (v - base));
  s.values.push_back(base);
  return s;
}

namespace detail {

template <class M, class Solver>
TrackedRun<M::N> run_events(const M& model, const Profile<M::N>& p0, double t_end, const Solver& solve,
                            long budget) {
  constexpr int N = M::N;
  (void)model;
  TrackedRun<N> run;
  run.initial = p0;
  run.t_end = t_end;
  std::vector<int> active;

  auto spawn = [&](const WaveFan<N>& fan, double t, double x, int ev) {
    std::vector<int> ids;
    for (const auto& w : fan.waves) {
      Front<N> f;
      f.id = static_cast<int>(run.fronts.size());
      f.family = w.family;
      f.kind = w.kind;
      f.left = w.left;
      f.right = w.right;
      f.speed = w.speed;
      f.strength = w.strength;
      f.t0 = t;
      f.x0 = x;
      f.birth_event = ev;
      run.fronts.push_back(f);
      ids.push_back(f.id);
    }
    return ids;
  };

  for (std::size_t j = 0; j < p0.x.size(); ++j) {
    Event e;
    e.t = 0;
    e.x = p0.x[j];
    e.initial_jump = static_cast<int>(j);
    int ev = static_cast<int>(run.events.size());
    e.outgoing = spawn(solve(p0.values[j], p0.values[j + 1]), 0.0, p0.x[j], ev);
    active.insert(active.end(), e.outgoing.begin(), e.outgoing.end());
    run.events.push_back(e);
  }

  double now = 0;
  long count = 0;
  while (true) {
    double tmin = kInf;
    std::vector<double> tc(active.size(), kInf);
    for (std::size_t i = 0; i + 1 < active.size(); ++i) {
      const auto& a = run.fronts[active[i]];
      const auto& b = run.fronts[active[i + 1]];
      if (a.speed > b.speed) {
        double gap = std::max(0.0, b.pos(now) - a.pos(now));
        tc[i] = now + gap / (a.speed - b.speed);
        tmin = std::min(tmin, tc[i]);
      }
    }
    if (!(tmin <= t_end)) break;
    if (++count > budget) throw BlowUpError("event budget exceeded at t=" + std::to_string(tmin));
    double ttol = 1e-12 * std::max(1.0, tmin);
    std::size_t i0 = 0;
    while (!(tc[i0] <= tmin + ttol)) ++i0;
    double xstar = run.fronts[active[i0]].pos(tmin);
    double xtol = 1e-11 * std::max(1.0, std::abs(xstar));
    std::size_t i1 = i0 + 1;
    // extend over every adjacent pair meeting at the same point at the same time
    while (i1 + 1 < active.size() && tc[i1] <= tmin + ttol &&
           std::abs(run.fronts[active[i1 + 1]].pos(tmin) - xstar) <= xtol)
      ++i1;
    while (i0 > 0 && tc[i0 - 1] <= tmin + ttol && std::abs(run.fronts[active[i0 - 1]].pos(tmin) - xstar) <= xtol)
      --i0;
    now = tmin;
    Event e;
    e.t = now;
    e.x = xstar;
    int ev = static_cast<int>(run.events.size());
    for (std::size_t k = i0; k <= i1; ++k) {
      auto& f = run.fronts[active[k]];
      f.t1 = now;
      f.x1 = xstar;
      f.death_event = ev;
      e.incoming.push_back(f.id);
    }
    auto ul = run.fronts[active[i0]].left, ur = run.fronts[active[i1]].right;
    e.outgoing = spawn(solve(ul, ur), now, xstar, ev);
    active.erase(active.begin() + static_cast<long>(i0), active.begin() + static_cast<long>(i1) + 1);
    active.insert(active.begin() + static_cast<long>(i0), e.outgoing.begin(), e.outgoing.end());
    run.events.push_back(e);
  }
  for (int id : active) run.fronts[id].x1 = run.fronts[id].pos(t_end);
  return run;
}

}  // namespace detail

inline constexpr long kEventBudget = 1000000;

// grid offset in [0, 1e-3 h^2) derived from the seed; seed 0 leaves the grid unshifted
inline double grid_offset(std::uint64_t seed, double h) {
  if (seed == 0) return 0.0;
  std::mt19937_64 g(seed ^ 0x9e3779b97f4a7c15ULL);
  return unit_uniform(g) * 1e-3 * h * h;
}

inline TrackedRun<1> evolve(const ScalarFlux& model, const Profile<1>& profile, double h, double t_end,
                            std::uint64_t seed, long budget = kEventBudget) {
  StateGrid g{h, grid_offset(seed, h)};
  Profile<1> p = profile;
  for (auto& v : p.values) {
    v[0] = g.snap(v[0]);
    model.check(v[0]);
  }
  p = clean_profile(p);
  auto run = detail::run_events(model, p, t_end,
                                [&](const Vec<1>& a, const Vec<1>& b) {
                                  return envelope_riemann_scalar(model, g, a[0], b[0]);
                                },
                                budget);
  run.h = h;
  run.seed = seed;
  run.grid = g;
  run.model_name = model.name();
  return run;
}

inline TrackedRun<2> evolve(const PSystem& model, const Profile<2>& profile, double h, double t_end,
                            std::uint64_t seed, long budget = kEventBudget) {
  if (!model.gnl()) throw ModelError("p-system evolution requires a genuinely nonlinear pressure law");
  Profile<2> p = profile;
  if (seed != 0) {
    std::mt19937_64 g(seed);
    for (auto& v : p.values) v[1] += unit_uniform(g) * 1e-3 * h * h;
    // far fields stay untouched so that paired runs share them
    p.values.back() = profile.values.back();
    p.values.front() = profile.values.front();
  }
  for (const auto& v : p.values) model.check_state(v);
  p = clean_profile(p);
  auto run = detail::run_events(model, p, t_end,
                                [&](const Vec<2>& a, const Vec<2>& b) { return riemann_psystem(model, a, b, h); },
                                budget);
  run.h = h;
  run.seed = seed;
  run.model_name = model.name();
  return run;
}

// right-continuous restriction at time t
template <int N>
Profile<N> slice(const TrackedRun<N>& run, double t) {
  if (t < 0 || t > run.t_end * (1 + 1e-14)) throw DomainError("slice: time out of range");
  if (t == 0) {
    Profile<N> p = run.initial;
    p.t = 0;
    return p;
  }
  std::vector<const Front<N>*> alive;
  for (const auto& f : run.fronts)
    if (f.alive_at(t) || (t >= run.t_end && f.t1 == kInf)) alive.push_back(&f);
  std::sort(alive.begin(), alive.end(), [&](auto a, auto b) {
    double xa = a->pos(t), xb = b->pos(t);
    if (xa != xb) return xa < xb;
    return a->speed < b->speed;
  });
  Profile<N> p;
  p.t = t;
  p.values.push_back(run.initial.values.front());
  for (const auto* f : alive) {
    p.x.push_back(f->pos(t));
    p.values.push_back(f->right);
  }
  for (const auto& e : run.events)
    if (e.t == t && e.initial_jump < 0) p.at_event = true;
  bool flag = p.at_event;
  p = clean_profile(p);
  p.at_event = flag;
  return p;
}

// ---------------------------------------------------------------- wave partition (scalar)

struct WavePiece {
  int wave = -1;
  double a = 0, b = 0;  // oriented state interval a -> b
};

struct Cancellation {
  int event = -1;
  double t = 0, x = 0;
  int wave_left = -1, wave_right = -1;
  double mass = 0;
};

struct WavePartitionScalar {
  struct Wave {
    int id = -1;
    double a = 0, b = 0;  // initial interval
    double remaining = 0;
    double cancelled_at = -1;
    std::vector<int> carriers;  // fronts that carried some part of it
  };
  std::vector<Wave> waves;
  std::map<int, std::vector<WavePiece>> pieces;  // front id -> left-to-right pieces
  std::vector<Cancellation> cancellations;
  int splits = 0;
};

inline WavePartitionScalar wave_partition_scalar(const TrackedRun<1>& run) {
  WavePartitionScalar wp;
  auto distribute = [&](std::vector<WavePiece> path, const std::vector<int>& outgoing) {
    std::size_t k = 0;
    for (int id : outgoing) {
      const auto& f = run.fronts[id];
      double end = f.right[0];
      double dir = f.right[0] > f.left[0] ? 1 : -1;
      auto& dst = wp.pieces[id];
      while (k < path.size()) {
        auto& pc = path[k];
        // does this piece extend past the end of the front?
        bool beyond = dir > 0 ? pc.b > end : pc.b < end;
        if (!beyond) {
          dst.push_back(pc);
          wp.waves[pc.wave].carriers.push_back(id);
          bool done = pc.b == end;
          ++k;
          if (done) break;
        } else {
          dst.push_back({pc.wave, pc.a, end});
          wp.waves[pc.wave].carriers.push_back(id);
          pc.a = end;
          ++wp.splits;
          break;
        }
      }
    }
  };
  for (std::size_t ei = 0; ei < run.events.size(); ++ei) {
    const auto& e = run.events[ei];
    std::vector<WavePiece> path;
    if (e.initial_jump >= 0) {
      WavePartitionScalar::Wave w;
      w.id = static_cast<int>(wp.waves.size());
      w.a = run.initial.values[e.initial_jump][0];
      w.b = run.initial.values[e.initial_jump + 1][0];
      w.remaining = std::abs(w.b - w.a);
      wp.waves.push_back(w);
      path.push_back({w.id, w.a, w.b});
    } else {
      for (int id : e.incoming) {
        for (const auto& pc : wp.pieces[id]) {
          WavePiece p = pc;
          // cancel against the stack top while orientations are opposite
          while (!path.empty() && p.a != p.b) {
            auto& top = path.back();
            bool up_top = top.b > top.a, up_p = p.b > p.a;
            if (up_top == up_p) break;
            double lt = std::abs(top.b - top.a), lp = std::abs(p.b - p.a);
            double mass = std::min(lt, lp);
            wp.cancellations.push_back({static_cast<int>(ei), e.t, e.x, top.wave, p.wave, mass});
            wp.waves[top.wave].remaining -= mass;
            wp.waves[p.wave].remaining -= mass;
            if (lt <= lp) {
              p.a = top.a;
              path.pop_back();
            } else {
              top.b = p.b;
              p.a = p.b;
            }
          }
          if (p.a != p.b) path.push_back(p);
        }
      }
      for (auto& w : wp.waves)
        if (w.remaining <= 1e-14 && w.cancelled_at < 0) w.cancelled_at = e.t;
    }
    distribute(path, e.outgoing);
  }
  return wp;
}

}  // namespace l1stab
