// Acceptance suite: one PASS/FAIL line per criterion, exit code 0 iff all pass.
// The three 50-seed ensembles are built once and shared by the criteria that read them.

#include <Eigen/Dense>
#include <chrono>
#include <iomanip>
#include <iostream>

#include "l1stab/harness.hpp"

using namespace l1stab;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double secs(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Line {
  bool pass = true;
  std::vector<std::string> notes;
  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "" : "[x] ") + what);
  }
};

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

int failures = 0;

void report(int id, const std::string& title, const Line& L, double s) {
  failures += !L.pass;
  std::cout << "criterion " << id << " " << title << ": " << (L.pass ? "PASS" : "FAIL") << "  (" << fmt(s) << " s)\n";
  for (const auto& n : L.notes) std::cout << "    " << n << '\n';
  std::cout.flush();
}

Scenario random_scenario(const std::string& name, const std::string& flux, int n, double amp, double tv, double T,
                         const std::string& experiment) {
  json base = n == 1 ? json::array({0.0}) : json::array({0.0, 1.0});
  json j = {{"name", name},
            {"experiment", experiment},
            {"model", {{"flux", flux}}},
            {"initial",
             {{{"kind", "random"}, {"base", base}, {"amplitude", amp}, {"tv", tv}},
              {{"kind", "random"}, {"base", base}, {"amplitude", amp}, {"tv", tv}, {"seed_offset", 1000}}}},
            {"h", 0.05},
            {"h_levels", 3},
            {"t_end", T},
            {"seeds", 50}};
  return parse_scenario(j);
}

// field and weight of one pair, rebuilt for the oracle checks
template <class M>
struct Rebuilt {
  TrackedRun<M::N> a, b;
  AveragedField<M::N> f;
};

template <class M>
std::unique_ptr<Rebuilt<M>> rebuild(const Scenario& sc, const M& m, std::uint64_t seed, double h) {
  constexpr int N = M::N;
  auto p = std::make_unique<Rebuilt<M>>();
  p->a = evolve(m, discretize_initial(initial_spec<N>(sc, 0, seed), h), h, sc.t_end, seed);
  p->b = evolve(m, discretize_initial(initial_spec<N>(sc, 1, seed), h), h, sc.t_end, seed);
  p->f = build_averaged_field(m, p->a, p->b, sc.kappa1, sc.kappa2);
  return p;
}

// midpoint rule over the support of psi at time t; weighted when W is given, plain |psi| otherwise
template <int N>
double quadrature(const AveragedField<N>& F, const WeightField<N>* W, double t, double dx) {
  auto s = field_slice(F, t);
  double lo = kInf, hi = -kInf;
  for (int p : s) {
    const auto& P = F.phases[p];
    if (norm1<N>(P.up - P.u) == 0) continue;
    lo = std::min(lo, F.left_pos(P, t));
    hi = std::max(hi, F.right_pos(P, t));
  }
  if (!(hi > lo)) return 0;
  long n = std::lround(std::ceil((hi - lo) / dx));
  double sum = 0;
  std::size_t k = 0;
  for (long i = 0; i < n; ++i) {
    double x = lo + (i + 0.5) * dx;
    while (k + 1 < s.size() && F.right_pos(F.phases[s[k]], t) <= x) ++k;
    const auto& P = F.phases[s[k]];
    if (!W) {
      sum += norm1<N>(P.up - P.u);
      continue;
    }
    for (int j = 0; j < N; ++j) {
      double al = dot<N>(P.av.eig.l[j], P.up - P.u);
      if (al != 0) sum += std::abs(al) * W->value(P.id, j, t, x);
    }
  }
  return sum * (hi - lo) / n;
}

// solve R alpha = psi with Eigen, R holding the right eigenvectors as columns
Eigen::Vector2d dense_components(const EigenData<2>& e, const Vec<2>& psi) {
  Eigen::Matrix2d R;
  R << e.r[0][0], e.r[1][0], e.r[0][1], e.r[1][1];
  return R.fullPivHouseholderQr().solve(Eigen::Vector2d(psi[0], psi[1]));
}

double halving_lo = 0.35, halving_hi = 0.65;

}  // namespace

int main() {
  std::cout << std::setprecision(6);
  auto t_all = Clock::now();

  // ---------------------------------------------------------------- shared ensembles
  auto sB = random_scenario("burgers", "burgers", 1, 1.0, 2.0, 2.0, "pair_stability");
  auto sC = random_scenario("cubic", "cubic", 1, 1.0, 2.0, 1.5, "census");
  auto sP = random_scenario("psystem", "plaw_pressure gamma=1 kappa=1", 2, 0.15, 0.8, 1.0, "pair_stability");
  auto t0 = Clock::now();
  auto rB = ensemble(sB, 50);
  double tB = secs(t0);
  t0 = Clock::now();
  auto rC = ensemble(sC, 50);
  double tC = secs(t0);
  t0 = Clock::now();
  auto rP = ensemble(sP, 50);
  double tP = secs(t0);
  std::cout << "ensembles (50 seeds, h = 0.05, 0.025, 0.0125): burgers " << fmt(tB) << " s, cubic " << fmt(tC)
            << " s, p-system " << fmt(tP) << " s\n";
  struct Named {
    const char* name;
    const RunReport* r;
  };
  std::vector<Named> all{{"burgers", &rB}, {"cubic", &rC}, {"p-system", &rP}};
  std::vector<Named> weighted{{"burgers", &rB}, {"p-system", &rP}};
  {
    Line L;
    for (const auto& [n, r] : all) {
      std::size_t e = r->errors.size();
      L.check(e == 0, std::string(n) + ": " + std::to_string(e) + " failed runs");
      for (std::size_t i = 0; i < std::min<std::size_t>(e, 3); ++i) L.notes.push_back("  " + r->errors[i]);
    }
    if (!L.pass) report(0, "ensemble runs", L, tB + tC + tP);
  }

  // ---------------------------------------------------------------- 1
  {
    auto t = Clock::now();
    Line L;
    auto f = identity_fuzz(10000, 20261014);
    L.check(f.instances >= 10000, "instances per identity = " + std::to_string(f.instances));
    L.check(f.res.size() >= 10, "identities checked = " + std::to_string(f.res.size()));
    for (const auto& [k, v] : f.res) L.check(v <= 1e-10, k + " max residual " + fmt(v) + " <= 1e-10");
    report(1, "algebraic identities", L, secs(t));
  }

  // ---------------------------------------------------------------- 2
  {
    Line L;
    for (const auto& [n, r] : all) {
      Concordance c;
      for (const auto& lev : r->levels) {
        c.checked += lev.concord.checked;
        c.agree += lev.concord.agree;
        c.robust_checked += lev.concord.robust_checked;
        c.robust_agree += lev.concord.robust_agree;
      }
      L.check(c.checked > 0 && c.agree == c.checked,
              std::string(n) + ": closed-form tables " + std::to_string(c.agree) + "/" + std::to_string(c.checked));
      L.check(c.robust_agree == c.robust_checked, std::string(n) + ": robust sign tables " +
                                                      std::to_string(c.robust_agree) + "/" +
                                                      std::to_string(c.robust_checked));
    }
    report(2, "classification concordance", L, 0);
  }

  // ---------------------------------------------------------------- 3
  {
    Line L;
    for (const auto& [n, r] : all)
      for (const auto& lev : r->levels) {
        std::string p = std::string(n) + " h=" + fmt(lev.h) + ": ";
        L.check(lev.census_violations == 0, p + std::to_string(lev.census_violations) +
                                                " admissible strongly dominant rarefaction-class records (of " +
                                                std::to_string(lev.records) + ")");
        L.check(lev.raref_on_shocks == 0, p + std::to_string(lev.raref_on_shocks) + " rarefaction-class records on shocks, " +
                                              std::to_string(lev.raref_class) + " in total");
        L.check(lev.raref_strength <= 2 * lev.h, p + "max rarefaction-class strength " + fmt(lev.raref_strength) +
                                                     " <= 2h");
      }
    report(3, "rarefaction-shock census", L, 0);
  }

  // ---------------------------------------------------------------- 4
  {
    auto t = Clock::now();
    Line L;
    auto b = monotonicity_scan(ScalarFlux::burgers(), 1, 0.3, -2, 2, 100);
    L.check(b.monotone && b.slack > 0, "burgers: monotone=" + std::to_string(b.monotone) + " slack " + fmt(b.slack));
    for (int fam = 0; fam < 2; ++fam) {
      auto p = monotonicity_scan(PSystem::reciprocal(), 1.0, fam, 1.3, 0.3, 4, 100);
      L.check(p.monotone && p.slack > 0, "p = 1/v family " + std::to_string(fam + 1) + ": monotone=" +
                                             std::to_string(p.monotone) + " slack " + fmt(p.slack));
    }
    auto c = monotonicity_scan(ScalarFlux::cubic(), 0.5, 0, -1, 1, 100);
    L.check(!c.monotone, "cubic negative control: monotone=" + std::to_string(c.monotone));
    report(4, "averaged-speed monotonicity", L, secs(t));
  }

  // ---------------------------------------------------------------- 5
  {
    Line L;
    for (const auto& [n, r] : weighted) {
      std::vector<double> c2;
      for (std::size_t k = 0; k < r->levels.size(); ++k) {
        const auto& lev = r->levels[k];
        std::string p = std::string(n) + " h=" + fmt(lev.h) + ": ";
        L.check(lev.jump_error <= 1e-12 && lev.jump_violations == 0,
                p + "max jump error " + fmt(lev.jump_error) + ", " + std::to_string(lev.jump_violations) + " violations");
        L.check(lev.constraint_violations == 0, p + std::to_string(lev.constraint_violations) + " constraint violations");
        c2.push_back(lev.c2_max);
        // oscillation constant fitted on the first half of the seeds, tested on the second
        double fit = 0, rest = 0;
        const auto& rs = r->results[k];
        for (std::size_t s = 0; s < rs.size(); ++s) {
          double& c = s < rs.size() / 2 ? fit : rest;
          c = std::max(c, rs[s].osc_const);
        }
        L.check(rest <= 1.2 * fit, p + "C_osc fitted " + fmt(fit) + " on seeds 1-25, held-out max " + fmt(rest));
      }
      std::string cs;
      for (double v : c2) cs += fmt(v) + " ";
      double sp = relative_spread(c2);
      L.check(sp <= 0.2, std::string(n) + ": C2 over h levels " + cs + "spread " + fmt(sp) + " <= 0.2");
    }
    report(5, "weight existence", L, 0);
  }

  // ---------------------------------------------------------------- 6
  {
    Line L;
    for (const auto& [n, r] : weighted) {
      std::vector<double> over, budget;
      for (const auto& lev : r->levels) {
        std::string p = std::string(n) + " h=" + fmt(lev.h) + ": ";
        L.check(lev.excess <= 1e-9, p + "max per-interval excess " + fmt(lev.excess) + " <= 1e-9");
        L.check(lev.min_dissipation >= -1e-12, p + "admissible and undercompressive dissipation >= 0");
        over.push_back(lev.overshoot / lev.seeds);
        budget.push_back(lev.budget / lev.seeds);
      }
      // overshoot <= C h with C taken from the coarsest level
      double C = over[0] / r->levels[0].h;
      for (std::size_t k = 0; k < over.size(); ++k)
        L.check(over[k] <= C * r->levels[k].h * (1 + 1e-12) + 1e-15,
                std::string(n) + " h=" + fmt(r->levels[k].h) + ": mean relative overshoot " + fmt(over[k]) +
                    " <= C h, C = " + fmt(C));
      // halving: the overshoot if it is ever positive, otherwise the rarefaction budget it is charged against
      bool use_over = *std::max_element(over.begin(), over.end()) > 0;
      const auto& q = use_over ? over : budget;
      std::string what = use_over ? "overshoot" : "overshoot is 0 at every level; rarefaction budget";
      if (*std::max_element(q.begin(), q.end()) == 0) {
        L.notes.push_back(std::string(n) + ": overshoot and rarefaction budget are both 0 at every level");
        continue;
      }
      for (std::size_t k = 1; k < q.size(); ++k) {
        double ratio = q[k - 1] > 0 ? q[k] / q[k - 1] : kInf;
        L.check(ratio >= halving_lo && ratio <= halving_hi,
                std::string(n) + ": " + what + " " + fmt(q[k - 1]) + " -> " + fmt(q[k]) + ", ratio " + fmt(ratio) +
                    " in [0.35, 0.65]");
      }
    }
    report(6, "dissipation ledger", L, 0);
  }

  // ---------------------------------------------------------------- 7
  {
    auto t = Clock::now();
    Line L;
    for (const auto& [n, r] : all) {
      std::vector<double> c;
      std::string cs;
      for (const auto& lev : r->levels) {
        c.push_back(lev.ratio_max);
        cs += fmt(lev.ratio_max) + " ";
      }
      double sp = relative_spread(c);
      L.check(sp <= 0.2, std::string(n) + ": C_emp = max_t |psi(t)|_1 / |psi(0)|_1 over h levels " + cs + "spread " +
                             fmt(sp) + " <= 0.2");
    }
    for (double dx : {0.3, -0.2, 0.05}) {
      json j = {{"name", "shifted"},
                {"model", {{"flux", "burgers"}}},
                {"initial",
                 {{{"kind", "piecewise"}, {"breakpoints", {0.0}}, {"values", {1.0, -1.0}}}, {{"kind", "shift"}, {"dx", dx}}}},
                {"h", 0.05},
                {"h_levels", 3},
                {"t_end", 2.0}};
      auto rep = run_pair_experiment(parse_scenario(j));
      for (const auto& lev : rep.results) {
        const auto& r = lev.at(0);
        L.check(r.ok && r.l1_0 > 0 && r.ratio <= 1 + 1e-10,
                "shifted shock dx=" + fmt(dx) + " h=" + fmt(r.h) + ": ratio - 1 = " + fmt(r.ratio - 1));
      }
    }
    report(7, "L1 continuous dependence", L, secs(t));
  }

  // ---------------------------------------------------------------- 8
  {
    auto t = Clock::now();
    Line L;
    double qw = 0, ql = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto p = rebuild(sB, std::get<ScalarFlux>(sB.model), seed, sB.h);
      auto W = build_weight_scalar(p->f, sB.K);
      for (double tt : {0.0, 0.8, 2.0}) {
        qw = std::max(qw, std::abs(weighted_norm(W, tt) - quadrature<1>(p->f, &W, tt, 1e-5)));
        ql = std::max(ql, std::abs(field_l1(p->f, tt) - quadrature<1>(p->f, nullptr, tt, 1e-5)));
      }
    }
    double dmax = 0;
    int records = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto p = rebuild(sP, std::get<PSystem>(sP.model), seed, sP.h);
      auto W = build_weight_system(p->f, sP.K);
      for (double tt : {0.0, 0.5, 1.0}) {
        qw = std::max(qw, std::abs(weighted_norm(W, tt) - quadrature<2>(p->f, &W, tt, 1e-5)));
        ql = std::max(ql, std::abs(field_l1(p->f, tt) - quadrature<2>(p->f, nullptr, tt, 1e-5)));
      }
      // decompositions stored on the records against a dense solve
      for (const auto& r : p->f.records) {
        auto xm = dense_components(r.am.eig, r.up_m - r.u_m), xp = dense_components(r.ap.eig, r.up_p - r.u_p);
        for (int j = 0; j < 2; ++j)
          dmax = std::max({dmax, std::abs(r.cd.alpha_m[j] - xm[j]), std::abs(r.cd.alpha_p[j] - xp[j])});
        ++records;
      }
    }
    // and on random states of a second pressure law
    PSystem g(PressureLaw::power(1.4), 0.05, 20);
    std::mt19937_64 rng(7);
    auto uni = [&](double a, double b) { return a + (b - a) * unit_uniform(rng); };
    for (int k = 0; k < 10000; ++k) {
      auto em = g.averaged({uni(-1, 1), uni(0.3, 4)}, {uni(-1, 1), uni(0.3, 4)}).eig;
      auto ep = g.averaged({uni(-1, 1), uni(0.3, 4)}, {uni(-1, 1), uni(0.3, 4)}).eig;
      Vec<2> pm{uni(-1, 1), uni(-1, 1)}, pp{uni(-1, 1), uni(-1, 1)};
      auto cd = characteristic_components<2>(em, ep, pm, pp);
      auto xm = dense_components(em, pm), xp = dense_components(ep, pp);
      for (int j = 0; j < 2; ++j) dmax = std::max({dmax, std::abs(cd.alpha_m[j] - xm[j]), std::abs(cd.alpha_p[j] - xp[j])});
    }
    L.check(qw <= 1e-4, "weighted norm vs midpoint quadrature (dx = 1e-5): max difference " + fmt(qw) + " <= 1e-4");
    L.check(ql <= 1e-4, "L1 norm vs midpoint quadrature (dx = 1e-5): max difference " + fmt(ql) + " <= 1e-4");
    L.check(dmax <= 1e-12, "characteristic components vs dense solve (" + std::to_string(records) +
                               " records + 10000 random): max difference " + fmt(dmax) + " <= 1e-12");
    for (const auto& [n, r] : weighted)
      for (const auto& lev : r->levels)
        L.check(lev.fd_error <= 1e-8, std::string(n) + " h=" + fmt(lev.h) + ": ledger vs norm difference " +
                                          fmt(lev.fd_error) + " <= 1e-8");
    report(8, "oracle cross-checks", L, secs(t));
  }

  // ---------------------------------------------------------------- 9
  {
    auto t = Clock::now();
    Line L;
    const auto& m = std::get<ScalarFlux>(sB.model);
    int differ = 0, cells = 0, nonconst = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      auto p = rebuild(sB, m, seed, sB.h);
      auto S = build_weight_scalar(p->f, sB.K);
      auto G = build_weight_generalized(p->f, [&](double u, double v) { return m.chord(u, v); }, sB.K);
      differ += S.maps.size() != G.maps.size();
      for (std::size_t k = 0; k < std::min(S.maps.size(), G.maps.size()); ++k) {
        ++cells;
        differ += S.maps[k][0].key != G.maps[k][0].key || S.maps[k][0].val != G.maps[k][0].val;
      }
      auto C = build_weight_generalized(p->f, [](double, double) { return 0.7; }, sB.K, 3.0);
      for (const auto& mp : C.maps)
        for (double v : mp[0].val) nonconst += v != 3.0;
      nonconst += C.w_min != 3.0 || C.w_max != 3.0;
    }
    L.check(differ == 0, "probe = averaged speed: " + std::to_string(differ) + " of " + std::to_string(cells) +
                             " cell maps differ from the scalar weight");
    L.check(nonconst == 0, "constant probe with C0 = 3: " + std::to_string(nonconst) + " values differ from 3");
    report(9, "generalized weight", L, secs(t));
  }

  std::cout << (failures == 0 ? "all acceptance criteria PASS" : std::to_string(failures) + " criteria FAIL") << " ("
            << fmt(secs(t_all)) << " s)\n";
  return failures == 0 ? 0 : 1;
}
