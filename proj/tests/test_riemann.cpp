#include <gtest/gtest.h>

#include <random>

#include "l1stab/riemann.hpp"

using namespace l1stab;

namespace {

std::mt19937_64 rng(777);
double uni(double a, double b) { return a + (b - a) * std::uniform_real_distribution<double>(0, 1)(rng); }

template <int N>
void expect_chained(const WaveFan<N>& fan) {
  if (fan.waves.empty()) {
    EXPECT_EQ(fan.left, fan.right);
    return;
  }
  EXPECT_EQ(fan.waves.front().left, fan.left);
  EXPECT_EQ(fan.waves.back().right, fan.right);
  for (std::size_t k = 0; k + 1 < fan.waves.size(); ++k) {
    EXPECT_EQ(fan.waves[k].right, fan.waves[k + 1].left);
    EXPECT_LE(fan.waves[k].speed, fan.waves[k + 1].speed);
  }
}

// exact integral of the self-similar fan at time t over [-L, L]
template <int N>
Vec<N> fan_integral(const WaveFan<N>& fan, double t, double L) {
  Vec<N> s{};
  double x = -L;
  Vec<N> cur = fan.left;
  for (const auto& w : fan.waves) {
    double xw = w.speed * t;
    s = s + (xw - x) * cur;
    x = xw;
    cur = w.right;
  }
  return s + (L - x) * cur;
}

}  // namespace

TEST(Envelope, BurgersShock) {
  auto m = ScalarFlux::burgers();
  StateGrid g{0.01, 0};
  auto fan = envelope_riemann_scalar(m, g, 1, -1);
  ASSERT_EQ(fan.waves.size(), 1u);
  EXPECT_EQ(fan.waves[0].kind, WaveKind::Shock);
  EXPECT_NEAR(fan.waves[0].speed, 0, 1e-15);
  EXPECT_TRUE(oleinik_check(m, 1, -1, &g).admissible);
}

TEST(Envelope, BurgersRarefaction) {
  auto m = ScalarFlux::burgers();
  StateGrid g{0.01, 0};
  auto fan = envelope_riemann_scalar(m, g, -1, 1);
  expect_chained(fan);
  EXPECT_EQ(fan.waves.size(), 200u);
  for (const auto& w : fan.waves) {
    EXPECT_EQ(w.kind, WaveKind::RarefactionFront);
    EXPECT_LE(w.strength, g.delta * (1 + 1e-9));
    EXPECT_GE(w.speed, -1);
    EXPECT_LE(w.speed, 1);
  }
  EXPECT_LE(fan.waves.front().speed, -1 + g.delta);
  EXPECT_GE(fan.waves.back().speed, 1 - g.delta);
  EXPECT_FALSE(oleinik_check(m, -1, 1, &g).admissible);
}

TEST(Envelope, CubicComposite) {
  auto m = ScalarFlux::cubic();
  StateGrid g{0.01, 0};
  auto fan = envelope_riemann_scalar(m, g, 1, -1);
  expect_chained(fan);
  EXPECT_GT(fan.waves.size(), 1u);
  EXPECT_EQ(fan.waves.front().kind, WaveKind::Shock);
  auto c = oleinik_check(m, 1, -1, &g);
  EXPECT_FALSE(c.admissible);
  EXPECT_NEAR(c.margin, -0.25, 1e-12);
  EXPECT_NEAR(c.worst_at, -0.5, 1e-12);
}

TEST(Envelope, OffGridRejected) {
  StateGrid g{0.01, 0};
  EXPECT_THROW(envelope_riemann_scalar(ScalarFlux::burgers(), g, 0.005, 1), DiscretizationError);
}

TEST(Envelope, PropertySweep) {
  std::vector<ScalarFlux> models{ScalarFlux::burgers(), ScalarFlux::cubic(),
                                 ScalarFlux::piecewise_cubic({{-2, 0, 2, -2, 0.5, 0}, {0, 2, 0, 0, 0.5, 1}})};
  for (const auto& m : models) {
    StateGrid g{0.05, 0.0003};
    for (int k = 0; k < 200; ++k) {
      double a = g.snap(uni(-1.5, 1.5)), b = g.snap(uni(-1.5, 1.5));
      auto fan = envelope_riemann_scalar(m, g, a, b);
      expect_chained(fan);
      for (std::size_t i = 0; i + 1 < fan.waves.size(); ++i) EXPECT_LT(fan.waves[i].speed, fan.waves[i + 1].speed);
      for (const auto& w : fan.waves) {
        EXPECT_LE(rh_residual(m, w.left, w.right, w.speed), 1e-12);
        if (w.kind == WaveKind::Shock) {
          EXPECT_GE(oleinik_check(m, w.left[0], w.right[0], &g).margin, -1e-10);
        }
        // re-solving one front returns that front
        auto again = envelope_riemann_scalar(m, g, w.left[0], w.right[0]);
        ASSERT_EQ(again.waves.size(), 1u);
        EXPECT_EQ(again.waves[0].speed, w.speed);
      }
      // conservation against the flux balance
      double t = 0.7, L = 10;
      double lhs = fan_integral(fan, t, L)[0] - (L * a + L * b);
      EXPECT_NEAR(lhs, -t * (m.f(b) - m.f(a)), 1e-12);
    }
  }
}

TEST(Liu, ScalarAgreesWithOleinik) {
  auto m = ScalarFlux::cubic();
  StateGrid g{0.02, 0};
  for (int k = 0; k < 1000; ++k) {
    double a = g.snap(uni(-1.5, 1.5)), b = g.snap(uni(-1.5, 1.5));
    auto o = oleinik_check(m, a, b, &g);
    auto l = liu_check(m, a, b, 0, &g);
    EXPECT_EQ(o.admissible, l.admissible);
  }
  EXPECT_TRUE(liu_check(m, 0.3, 0.3).admissible);
}

TEST(Hugoniot, ReciprocalExample) {
  auto m = PSystem::reciprocal();
  Vec<2> l{0, 1};
  EXPECT_EQ(hugoniot_psystem(m, l, 1, 1), l);
  auto r = hugoniot_psystem(m, l, 1, 2);
  EXPECT_NEAR(r[0], -std::sqrt(0.5), 1e-15);
  double s = hugoniot_speed(m, 1, 2, 1);
  EXPECT_NEAR(s, std::sqrt(0.5), 1e-15);
  EXPECT_LE(rh_residual(m, l, r, s), 1e-12);
  EXPECT_THROW(hugoniot_psystem(m, l, 1, 50), DomainError);
}

TEST(Hugoniot, RandomResiduals) {
  PSystem m(PressureLaw::power(1.4), 0.1, 10);
  for (int k = 0; k < 1000; ++k) {
    Vec<2> l{uni(-1, 1), uni(0.2, 5)};
    int fam = k % 2;
    double vp = uni(0.2, 5);
    auto r = hugoniot_psystem(m, l, fam, vp);
    EXPECT_LE(rh_residual(m, l, r, hugoniot_speed(m, l[1], vp, fam)), 1e-12);
  }
}

TEST(Wendroff, Orientation) {
  auto m = PSystem::reciprocal();
  auto c = wendroff_check(m, 1, 2, 1);
  EXPECT_TRUE(c.admissible);
  EXPECT_GE(c.margin, 0);
  EXPECT_FALSE(wendroff_check(m, 2, 1, 1).admissible);
  // family 1 mirrored
  EXPECT_TRUE(wendroff_check(m, 2, 1, 0).admissible);
  EXPECT_FALSE(wendroff_check(m, 1, 2, 0).admissible);
  auto z = wendroff_check(m, 1.5, 1.5, 1);
  EXPECT_TRUE(z.admissible);
  EXPECT_EQ(z.margin, 0);
}

TEST(Liu, PSystemCompressive) {
  auto m = PSystem::reciprocal();
  Vec<2> l{0, 1};
  EXPECT_TRUE(liu_check(m, l, hugoniot_psystem(m, l, 1, 2), 1).admissible);
  EXPECT_FALSE(liu_check(m, l, hugoniot_psystem(m, l, 1, 0.5), 1).admissible);
  EXPECT_TRUE(liu_check(m, l, l, 1).admissible);
}

TEST(PSystemRiemann, EmptyAndCollidingStreams) {
  auto m = PSystem::reciprocal();
  Vec<2> s{0.2, 1.3};
  EXPECT_TRUE(riemann_psystem(m, s, s, 0.05).waves.empty());
  Vec<2> l{0.5, 1.0}, r{-0.5, 1.0};
  auto fan = riemann_psystem(m, l, r, 0.05);
  expect_chained(fan);
  ASSERT_EQ(fan.waves.size(), 2u);
  for (const auto& w : fan.waves) {
    EXPECT_EQ(w.kind, WaveKind::Shock);
    EXPECT_TRUE(wendroff_check(m, w.left[1], w.right[1], w.family).admissible);
    EXPECT_LE(rh_residual(m, w.left, w.right, w.speed), 1e-12);
  }
  auto mid = fan.waves[0].right;
  EXPECT_LT(mid[1], 1.0);
  EXPECT_NEAR(mid[0], 0, 1e-12);
  // mid lies on both Hugoniot curves
  EXPECT_NEAR(hugoniot_psystem(m, l, 0, mid[1])[0], mid[0], 1e-10);
  EXPECT_NEAR(hugoniot_psystem(m, mid, 1, 1.0)[0], r[0], 1e-10);
}

TEST(PSystemRiemann, RandomFans) {
  auto m = PSystem::reciprocal();
  double h = 0.02;
  for (int k = 0; k < 300; ++k) {
    Vec<2> l{uni(-0.3, 0.3), uni(0.7, 1.5)}, r{uni(-0.3, 0.3), uni(0.7, 1.5)};
    auto fan = riemann_psystem(m, l, r, h);
    expect_chained(fan);
    for (const auto& w : fan.waves) {
      EXPECT_LE(rh_residual(m, w.left, w.right, w.speed), 1e-12);
      if (w.kind == WaveKind::Shock) {
        EXPECT_GE(wendroff_check(m, w.left[1], w.right[1], w.family).margin, -1e-10);
      } else {
        EXPECT_LE(w.strength, h * (1 + 1e-12));
      }
    }
    double t = 0.5, L = 20;
    auto lhs = fan_integral(fan, t, L) - (L * l + L * r);
    auto rhs = -t * (m.flux(r) - m.flux(l));
    EXPECT_NEAR(lhs[0], rhs[0], 1e-12);
    EXPECT_NEAR(lhs[1], rhs[1], 1e-12);
  }
}

TEST(PSystemRiemann, Errors) {
  PSystem lin(PressureLaw::linear(1.0), 0.1, 10);
  EXPECT_THROW(riemann_psystem(lin, {0, 1}, {0, 2}, 0.1), ModelError);
  auto m = PSystem::reciprocal(0.5, 2);
  EXPECT_THROW(riemann_psystem(m, {5, 1}, {-5, 1}, 0.1), AmplitudeError);
}
