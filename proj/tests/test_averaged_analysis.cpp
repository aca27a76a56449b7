#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "l1stab/averaged_analysis.hpp"

using namespace l1stab;

namespace {

std::mt19937_64 rng(4242);
double uni(double a, double b) { return a + (b - a) * unit_uniform(rng); }

Profile<1> pc(std::vector<double> x, std::vector<double> v) {
  Profile<1> p;
  p.x = std::move(x);
  for (double c : v) p.values.push_back({c});
  return p;
}

Profile<2> pc2(std::vector<double> x, std::vector<Vec<2>> v) {
  Profile<2> p;
  p.x = std::move(x);
  p.values = std::move(v);
  return p;
}

// single record of a one-front run against a constant run'
template <class M>
AveragedShockRecord<M::N> probe_record(const M& m, const Profile<M::N>& one, const Vec<M::N>& probe, double h) {
  auto a = evolve(m, one, h, 1.0, 0);
  auto b = evolve(m, Profile<M::N>{{}, {probe}}, h, 1.0, 0);
  auto f = build_averaged_field(m, a, b);
  EXPECT_EQ(f.records.size(), 1u);
  return f.records.at(0);
}

}  // namespace

TEST(Classify, ThreeWay) {
  EXPECT_EQ(classify_shock(0.75, 0, -0.25), ShockClass::Lax);
  EXPECT_EQ(classify_shock(1.5, 0, 0.5), ShockClass::SlowUnder);
  EXPECT_EQ(classify_shock(-1.5, 0, -0.5), ShockClass::FastUnder);
  EXPECT_EQ(classify_shock(-1, 0, 1), ShockClass::Rarefaction);
  EXPECT_EQ(classify_shock(1e-13, 0, 1), ShockClass::Degenerate);
}

TEST(Classify, ScalarRho) {
  auto m = ScalarFlux::burgers();
  auto lax = classify_scalar_rho(1, -1, 0.5, m);
  EXPECT_EQ(lax.predicted, ShockClass::Lax);
  EXPECT_TRUE(lax.agrees);
  EXPECT_GT(lax.rho * lax.jump, 0);
  auto slow = classify_scalar_rho(1, -1, 2, m);
  EXPECT_EQ(slow.predicted, ShockClass::SlowUnder);
  EXPECT_TRUE(slow.agrees);
  EXPECT_LE(slow.chord_first, 1e-15);
  EXPECT_LE(slow.chord_second, 1e-15);
  std::vector<ScalarFlux> models{m, ScalarFlux::cubic()};
  for (const auto& f : models) {
    int agree = 0, applicable = 0;
    for (int k = 0; k < 10000; ++k) {
      double a = uni(-2, 2), b = uni(-2, 2), c = uni(-2, 2);
      auto r = classify_scalar_rho(a, b, c, f);
      EXPECT_LE(r.chord_first, 1e-12);
      EXPECT_LE(r.chord_second, 1e-12);
      if (r.direct == ShockClass::Degenerate) continue;
      ++applicable;
      agree += r.agrees;
    }
    EXPECT_EQ(agree, applicable);
  }
}

TEST(Classify, PSystemRho) {
  auto m = PSystem::reciprocal();
  auto r = classify_psystem_rho(1, 2, 1.5, 1, m);
  EXPECT_LT((1 - 1.5) * (2 - 1.5), 0);
  EXPECT_TRUE(r.agrees);
  EXPECT_TRUE(r.predicted == ShockClass::Lax || r.predicted == ShockClass::Rarefaction);
  // c(v, 1.5) decreases in v, rho < 0, so the jump product is positive
  EXPECT_EQ(r.predicted, ShockClass::Lax);
  EXPECT_LE(r.kappa_first, 1e-12);
  EXPECT_LE(r.kappa_second, 1e-12);
  auto z = classify_psystem_rho(1, 2, 2, 1, m);
  EXPECT_LE(z.kappa_first, 1e-14);
  EXPECT_NEAR((m.cbar(1, 2) - m.cbar(2, 2)) * 0.0, 0, 0);
  PSystem g(PressureLaw::power(1.4), 0.05, 20);
  for (int k = 0; k < 10000; ++k) {
    double a = uni(0.2, 5), b = uni(0.2, 5), c = uni(0.2, 5);
    int fam = k % 2;
    auto q = classify_psystem_rho(a, b, c, fam, g);
    EXPECT_GT(q.kappa, 0);
    EXPECT_GT(q.kappa2, 0);
    EXPECT_LE(q.kappa_first, 1e-10);
    EXPECT_LE(q.kappa_second, 1e-10);
    if (q.direct != ShockClass::Degenerate) EXPECT_TRUE(q.agrees) << a << ' ' << b << ' ' << c << ' ' << fam;
  }
  EXPECT_THROW(classify_psystem_rho(1, 1, 2, 1, m), DomainError);
  EXPECT_THROW(classify_psystem_rho(-1, 1, 2, 1, m), DomainError);
}

TEST(Characteristic, Components) {
  auto m = PSystem::reciprocal();
  auto em = m.averaged({0, 1}, {0.3, 1.7}).eig, ep = m.averaged({0.2, 2}, {0.3, 1.7}).eig;
  auto z = characteristic_components<2>(em, ep, {0, 0}, {0, 0});
  EXPECT_EQ(z.alpha_m, (Vec<2>{0, 0}));
  auto one = characteristic_components<2>(em, ep, em.r[0], ep.r[1]);
  EXPECT_NEAR(one.alpha_m[0], 1, 1e-15);
  EXPECT_NEAR(one.alpha_m[1], 0, 1e-15);
  EXPECT_NEAR(one.alpha_p[1], 1, 1e-15);
  PSystem g(PressureLaw::power(1.4), 0.05, 20);
  for (int k = 0; k < 1000; ++k) {
    auto e = g.averaged({uni(-1, 1), uni(0.3, 4)}, {uni(-1, 1), uni(0.3, 4)}).eig;
    Vec<2> psi{uni(-1, 1), uni(-1, 1)};
    auto cd = characteristic_components<2>(e, e, psi, psi);
    Eigen::Matrix2d R;
    R << e.r[0][0], e.r[1][0], e.r[0][1], e.r[1][1];
    Eigen::Vector2d x = R.fullPivLu().solve(Eigen::Vector2d(psi[0], psi[1]));
    EXPECT_NEAR(cd.alpha_m[0], x[0], 1e-12);
    EXPECT_NEAR(cd.alpha_m[1], x[1], 1e-12);
    EXPECT_LE(cd.reconstruction, 1e-12);
  }
}

TEST(Characteristic, FluxSigns) {
  auto m = ScalarFlux::burgers();
  auto lax = probe_record(m, pc({0}, {1, -1}), {0.5}, 0.01);
  EXPECT_EQ(lax.cls, ShockClass::Lax);
  EXPECT_LE(lax.cd.beta_m[0], 0);
  EXPECT_LE(lax.cd.beta_p[0], 0);
  EXPECT_EQ(lax.sign_violations, 0);
  auto slow = probe_record(m, pc({0}, {1, -1}), {2}, 0.01);
  EXPECT_EQ(slow.cls, ShockClass::SlowUnder);
  EXPECT_GE(slow.cd.beta_p[0], 0);
  EXPECT_GE(-slow.cd.beta_m[0], 0);
  // transversal j < i on a 2-shock of the p-system
  auto p = PSystem::reciprocal();
  Vec<2> l{0, 1};
  auto r = hugoniot_psystem(p, l, 1, 1.5);
  auto rec = probe_record(p, pc2({0}, {l, r}), {0.1, 1.2}, 0.01);
  EXPECT_EQ(rec.family, 1);
  EXPECT_LE(rec.cd.beta_p[0], 0);
  EXPECT_LE(-rec.cd.beta_m[0], 0);
  EXPECT_EQ(rec.sign_violations, 0);
}

TEST(Characteristic, JumpRelation) {
  auto p = PSystem::reciprocal();
  auto e = p.averaged({0, 1}, {0.4, 2}).eig;
  auto cd = characteristic_components<2>(e, e, {0.3, -0.2}, {0.3, -0.2});
  characteristic_flux<2>(cd, e, e, 0.3);
  auto same = verify_jump_relation<2>(e, e, cd, 1);
  EXPECT_EQ(cd.gamma_m, cd.gamma_p);
  EXPECT_EQ(same.jump_direct, 0);
  PSystem g(PressureLaw::power(1.4), 0.05, 20);
  for (int k = 0; k < 2000; ++k) {
    int fam = k % 2;
    Vec<2> um{uni(-0.5, 0.5), uni(0.5, 2)};
    auto up = hugoniot_psystem(g, um, fam, um[1] * uni(0.6, 1.6));
    double lb = hugoniot_speed(g, um[1], up[1], fam);
    Vec<2> w{uni(-0.5, 0.5), uni(0.5, 2)};
    auto am = g.averaged(um, w), ap = g.averaged(up, w);
    // psi+ from the RH relation of the linear system
    Vec<2> psim{uni(-1, 1), uni(-1, 1)};
    Eigen::Matrix2d Am, Ap;
    Am << am.A[0][0], am.A[0][1], am.A[1][0], am.A[1][1];
    Ap << ap.A[0][0], ap.A[0][1], ap.A[1][0], ap.A[1][1];
    Eigen::Vector2d rhs = (Am - lb * Eigen::Matrix2d::Identity()) * Eigen::Vector2d(psim[0], psim[1]);
    Eigen::Vector2d x = (Ap - lb * Eigen::Matrix2d::Identity()).fullPivLu().solve(rhs);
    auto c = characteristic_components<2>(am.eig, ap.eig, psim, {x[0], x[1]});
    characteristic_flux<2>(c, am.eig, ap.eig, lb);
    auto rep = verify_jump_relation<2>(am.eig, ap.eig, c, fam);
    EXPECT_LE(rep.jump_direct, 1e-10);
    EXPECT_LE(rep.jump_symmetric, 1e-10);
  }
  auto s = probe_record(ScalarFlux::burgers(), pc({0}, {1, -1}), {2}, 0.01);
  EXPECT_NEAR(s.cd.gamma_p[0], s.cd.gamma_m[0], 1e-15);
  EXPECT_TRUE(s.jump_rel.special_applies);
}

TEST(Dominance, ScalarAlways) {
  auto m = ScalarFlux::burgers();
  for (double probe : {-3.0, -0.5, 0.5, 2.0, 3.0}) {
    auto r = probe_record(m, pc({0}, {1, -1}), {probe}, 0.01);
    EXPECT_TRUE(r.dominant[0]);
    EXPECT_TRUE(r.strong_eig);
    EXPECT_TRUE(r.strong_mat);
    EXPECT_EQ(dominance_sign_violations(r), 0);
  }
}

TEST(Dominance, ProbeOnWaveCurve) {
  // linear pressure: Hugoniot curves are straight, the probe on the 2-curve has no 1-component
  PSystem lin(PressureLaw::linear(1.0), 0.1, 10);
  auto em = lin.averaged({0, 1}, {-0.5, 1.5});
  Vec<2> um{0, 1}, up{-1, 2}, w{-0.5, 1.5};
  AveragedShockRecord<2> r;
  r.family = 1;
  r.owner = 1;
  r.u_m = um;
  r.u_p = up;
  r.up_m = w;
  r.up_p = w;
  r.speed = 1;
  fill_record(lin, r, 0.1, 0.1);
  EXPECT_NEAR(r.cd.alpha_m[0], 0, 1e-15);
  EXPECT_TRUE(r.strong_eig);
  EXPECT_TRUE(r.strong_mat);
  (void)em;
  // genuinely nonlinear case: probe on the 2-Hugoniot curve of u-
  auto p = PSystem::reciprocal();
  Vec<2> a{0, 1};
  auto b = hugoniot_psystem(p, a, 1, 1.2);
  auto c = hugoniot_psystem(p, a, 1, 1.1);
  AveragedShockRecord<2> q;
  q.family = 1;
  q.u_m = a;
  q.u_p = b;
  q.up_m = c;
  q.up_p = c;
  q.speed = hugoniot_speed(p, 1, 1.2, 1);
  fill_record(p, q, 0.1, 0.1);
  EXPECT_LE(std::abs(q.cd.alpha_m[0]), 1e-14);
  EXPECT_TRUE(q.strong_eig);
}

TEST(Robust, TablesAndScalarReduction) {
  auto m = ScalarFlux::burgers();
  for (double probe : {-3.0, -0.5, 0.5, 2.0, 3.0}) {
    auto r = probe_record(m, pc({0}, {1, -1}), {probe}, 0.01);
    auto v = robust_classification(r);
    EXPECT_TRUE(v.applicable);
    EXPECT_EQ(v.predicted, classify_scalar_rho(1, -1, probe, m).predicted);
    EXPECT_TRUE(v.agrees);
  }
  // flipping the sign of rho swaps the class within a row
  EXPECT_EQ(sign_table_class(true, 1), ShockClass::FastUnder);
  EXPECT_EQ(sign_table_class(true, -1), ShockClass::SlowUnder);
  EXPECT_EQ(sign_table_class(false, 1), ShockClass::Lax);
  EXPECT_EQ(sign_table_class(false, -1), ShockClass::Rarefaction);
}

TEST(SystemIdentity, ExactAndEnsemble) {
  PSystem lin(PressureLaw::linear(1.0), 0.1, 10);
  auto ex = verify_system_identity(lin, {0, 1}, {-1, 2}, {-0.5, 1.5}, 1);
  EXPECT_LE(ex.rh, 1e-14);
  EXPECT_LE(ex.omega, 1e-14);
  EXPECT_LE(ex.remainder, 1e-12);
  EXPECT_LE(std::max(ex.projection_m, ex.projection_p), 1e-12);
  PSystem g(PressureLaw::power(1.4), 0.05, 20);
  double worst = 0;
  for (int k = 0; k < 10000; ++k) {
    int fam = k % 2;
    Vec<2> um{uni(-0.2, 0.2), uni(0.8, 1.4)};
    auto up = hugoniot_psystem(g, um, fam, um[1] * uni(0.9, 1.1));
    Vec<2> w{uni(-0.2, 0.2), uni(0.8, 1.4)};
    auto rep = verify_system_identity(g, um, up, w, fam);
    EXPECT_LE(rep.form1, 1e-10);
    EXPECT_LE(rep.form2, 1e-10);
    EXPECT_LE(rep.transversal, 1e-10);
    EXPECT_LE(std::max(rep.projection_m, rep.projection_p), 1e-10);
    worst = std::max(worst, rep.ratio);
  }
  EXPECT_LE(worst, 10);
  // scalar: the remainder vanishes
  auto s = verify_system_identity(ScalarFlux::burgers(), {1}, {-1}, {2}, 0);
  EXPECT_EQ(s.omega, 0);
  EXPECT_LE(s.projection_m, 1e-15);
}

TEST(Monotonicity, Scans) {
  auto b = monotonicity_scan(ScalarFlux::burgers(), 1, 0.3, -2, 2);
  EXPECT_TRUE(b.gnl);
  EXPECT_TRUE(b.monotone);
  EXPECT_GT(b.slack, 0);
  EXPECT_GT(b.entropy_checked, 0);
  EXPECT_EQ(b.entropy_violations, 0);
  auto p = monotonicity_scan(PSystem::reciprocal(), 1.0, 1, 1.3, 0.3, 4);
  EXPECT_TRUE(p.monotone);
  EXPECT_GT(p.entropy_checked, 0);
  EXPECT_EQ(p.entropy_violations, 0);
  auto q = monotonicity_scan(PSystem::reciprocal(), 1.0, 0, 1.3, 0.3, 4);
  EXPECT_TRUE(q.monotone);
  EXPECT_EQ(q.entropy_violations, 0);
  auto c = monotonicity_scan(ScalarFlux::cubic(), 0.5, 0, -1, 1);
  EXPECT_FALSE(c.gnl);
  EXPECT_FALSE(c.monotone);
}

TEST(Field, OneSidedAndIdentical) {
  auto m = ScalarFlux::burgers();
  double h = 0.02;
  auto spec = random_profile<1>(5, 8, -2, 2, {0.0}, 1.0, 2.0);
  auto a = evolve(m, discretize_initial(spec, h), h, 2, 5);
  auto c = evolve(m, pc({}, {0.0}), h, 2, 5);
  auto f = build_averaged_field(m, a, c);
  double c0 = c.initial.values[0][0];  // snapped to the jittered grid
  for (const auto& ph : f.phases) {
    EXPECT_EQ(ph.up[0], c0);
    EXPECT_EQ(ph.av.eig.lam[0], m.chord(ph.u[0], c0));
  }
  EXPECT_EQ(f.records.size(), [&] {
    std::size_t n = 0;
    for (const auto& fr : a.fronts) n += std::min(fr.t1, 2.0) > fr.t0;
    return n;
  }());
  auto same = build_averaged_field(m, a, a);
  for (const auto& r : same.records) {
    EXPECT_EQ(r.owner, 3);
    EXPECT_EQ(r.cd.alpha_m[0], 0);
    EXPECT_EQ(r.cd.alpha_p[0], 0);
  }
  for (const auto& ph : same.phases) EXPECT_EQ(ph.av.eig.lam[0], m.df(ph.u[0]));
  auto cen = rarefaction_census(same);
  EXPECT_EQ(cen.violations, 0);
  auto other = evolve(m, pc({}, {0.0}), h, 3, 5);
  EXPECT_THROW(build_averaged_field(m, a, other), DomainError);
}

TEST(Field, EulerFaceCount) {
  auto m = ScalarFlux::burgers();
  auto a = evolve(m, pc({-1, 1}, {1, 0, -1}), 0.01, 4, 0);
  auto b = evolve(m, pc({0.5}, {0.6, -0.2}), 0.01, 4, 0);
  auto f = build_averaged_field(m, a, b);
  // planar graph on the strip: bottom and top boundary lines plus two points at infinity
  int interior = 0, bottom = 0, top = 0, edges = 0;
  for (const auto& v : f.vertices) (v.t == 0 ? bottom : interior)++;
  for (const auto& e : f.edges) {
    edges += e.t1 > e.t0;
    top += e.v1 < 0;
  }
  int V = interior + bottom + top + 2;
  int E = edges + (bottom + 1) + (top + 1);
  EXPECT_EQ(f.faces, E - V + 1);
  EXPECT_EQ(f.faces, 5);
  EXPECT_EQ(interior, 2);
}

TEST(Field, TracesMatchSlices) {
  auto m = ScalarFlux::burgers();
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    double h = 0.05;
    auto a = evolve(m, discretize_initial(random_profile<1>(seed, 8, -2, 2, {0.0}, 1.0, 2.0), h), h, 2, seed);
    auto b = evolve(m, discretize_initial(random_profile<1>(seed + 100, 8, -2, 2, {0.0}, 1.0, 2.0), h), h, 2,
                    seed + 100);
    auto f = build_averaged_field(m, a, b);
    int checked = 0;
    for (const auto& ph : f.phases) {
      if (!(ph.t_hi - ph.t_lo > 1e-6) || checked > 300) continue;
      double t = 0.5 * (ph.t_lo + ph.t_hi);
      double xl = f.left_pos(ph, t), xr = f.right_pos(ph, t);
      if (!std::isfinite(xl)) xl = xr - 1;
      if (!std::isfinite(xr)) xr = xl + 1;
      if (!(xr - xl > 1e-9)) continue;
      double x = 0.5 * (xl + xr);
      EXPECT_EQ(profile_value(slice(a, t), x), ph.u);
      EXPECT_EQ(profile_value(slice(b, t), x), ph.up);
      ++checked;
    }
    EXPECT_GT(checked, 10);
    // slices partition the line
    for (double t : {0.0, 0.37, 1.2, 2.0}) {
      auto s = field_slice(f, t);
      ASSERT_FALSE(s.empty());
      EXPECT_EQ(f.phases[s.front()].left, -1);
      EXPECT_EQ(f.phases[s.back()].right, -1);
      for (std::size_t k = 0; k + 1 < s.size(); ++k) EXPECT_EQ(f.phases[s[k]].right, f.phases[s[k + 1]].left);
    }
    double lip = m.lip_df(-2, 2);
    for (const auto& r : f.records) {
      EXPECT_LE(r.cd.reconstruction, 1e-12);
      EXPECT_LE(r.jump_rel.jump_direct, 1e-10);
      EXPECT_LE(r.sign_violations, 0);
      EXPECT_LE(jump_lipschitz_ratio(r), lip + 1e-12);
      if (r.cls != ShockClass::Degenerate) EXPECT_TRUE(robust_classification(r).agrees);
    }
    auto c = rarefaction_census(f);
    EXPECT_TRUE(c.ok());
    EXPECT_EQ(rarefaction_census(f, 0.05).violations, 0);
    EXPECT_EQ(rarefaction_census(f, 0.2).violations, 0);
  }
}

TEST(Census, ProbeSweeps) {
  auto m = ScalarFlux::burgers();
  for (int k = -30; k <= 30; ++k) {
    double probe = 0.1 * k + 0.005;
    auto r = probe_record(m, pc({0}, {1, -1}), {probe}, 0.01);
    EXPECT_NE(r.cls, ShockClass::Rarefaction);
    EXPECT_TRUE(r.admissible);
  }
  auto p = PSystem::reciprocal();
  Vec<2> l{0, 1};
  auto rr = hugoniot_psystem(p, l, 1, 1.6);
  auto a = evolve(p, pc2({0}, {l, rr}), 0.01, 1, 0);
  ASSERT_EQ(a.fronts.size(), 1u);
  for (int k = 0; k < 40; ++k) {
    Vec<2> probe{-0.5 + 0.025 * k, 0.5 + 0.05 * k};
    auto b = evolve(p, Profile<2>{{}, {probe}}, 0.01, 1, 0);
    auto f = build_averaged_field(p, a, b);
    auto c = rarefaction_census(f);
    EXPECT_EQ(c.violations, 0);
    EXPECT_EQ(c.rarefaction_class, 0);
  }
}

TEST(Field, PSystemPairs) {
  auto m = PSystem::reciprocal();
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    double h = 0.05;
    auto a = evolve(m, discretize_initial(random_profile<2>(seed, 6, -2, 2, {0.0, 1.0}, 0.15, 0.8), h), h, 1.5, seed);
    auto b = evolve(m, discretize_initial(random_profile<2>(seed + 50, 6, -2, 2, {0.0, 1.0}, 0.15, 0.8), h), h,
                    1.5, seed + 50);
    auto f = build_averaged_field(m, a, b);
    EXPECT_TRUE(f.bands.separated);
    for (const auto& r : f.records) {
      EXPECT_LE(r.cd.reconstruction, 1e-12);
      EXPECT_LE(r.jump_rel.jump_direct, 1e-10);
      EXPECT_LE(r.jump_rel.jump_symmetric, 1e-10);
      EXPECT_EQ(r.sign_violations, 0);
      auto v = robust_classification(r);
      if (v.applicable && r.cls != ShockClass::Degenerate) EXPECT_TRUE(v.agrees);
    }
    EXPECT_TRUE(rarefaction_census(f).ok());
    auto csv = records_csv(f);
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), f.records.size() + 1);
  }
}
