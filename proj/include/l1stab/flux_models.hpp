#pragma once

#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"

namespace l1stab {

template <int N>
struct EigenData {
  Vec<N> lam{};
  std::array<Vec<N>, N> r{};  // unit right vectors
  std::array<Vec<N>, N> l{};  // dual left vectors, l[j].r[k] = delta_jk
};

template <int N>
struct Averaged {
  Mat<N> A{};
  EigenData<N> eig;
};

namespace detail {

using GL16 = boost::math::quadrature::gauss<double, 16>;

// nodes/weights of the 16-point rule mapped to [0,1]
inline const std::array<std::pair<double, double>, 16>& gl16_unit() {
  static const auto table = [] {
    std::array<std::pair<double, double>, 16> t{};
    const auto& x = GL16::abscissa();
    const auto& w = GL16::weights();
    int k = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      t[k++] = {0.5 * (1.0 - x[i]), 0.5 * w[i]};
      t[k++] = {0.5 * (1.0 + x[i]), 0.5 * w[i]};
    }
    return t;
  }();
  return table;
}

// mean value of df over [a,b]; equals (F(b)-F(a))/(b-a) for F' = df
template <class DF>
double mean_of(const DF& df, double a, double b) {
  if (a > b) std::swap(a, b);
  if (a == b) return df(a);
  double s = 0;
  for (auto [x, w] : gl16_unit()) s += w * df(a + x * (b - a));
  return s;
}

// symmetric divided difference of F, quadrature of dF for nearby arguments
template <class F, class DF>
double divided_difference(const F& f, const DF& df, double a, double b) {
  if (a > b) std::swap(a, b);
  if (a == b) return df(a);
  double scale = std::max({1.0, std::abs(a), std::abs(b)});
  if (b - a > 1e-3 * scale) return (f(b) - f(a)) / (b - a);
  return mean_of(df, a, b);
}

template <int N>
Vec<N> normalize_last_positive(Vec<N> v) {
  double n = norm<N>(v);
  for (auto& c : v) c /= n;
  for (int i = N - 1; i >= 0; --i) {
    if (v[i] != 0) {
      if (v[i] < 0)
        for (auto& c : v) c = -c;
      break;
    }
  }
  return v;
}

inline void fill_left_2(EigenData<2>& e) {
  const auto& a = e.r[0];
  const auto& b = e.r[1];
  double det = a[0] * b[1] - b[0] * a[1];
  e.l[0] = {b[1] / det, -b[0] / det};
  e.l[1] = {-a[1] / det, a[0] / det};
}

}  // namespace detail

// eigen-decomposition of a 2x2 matrix with real distinct eigenvalues
inline EigenData<2> eigen2(const Mat<2>& m) {
  double a = m[0][0], b = m[0][1], c = m[1][0], d = m[1][1];
  double tr = a + d, disc = 0.25 * (a - d) * (a - d) + b * c;
  if (!(disc > 0)) throw ModelError("eigen2: eigenvalues not real and distinct");
  double s = std::sqrt(disc);
  EigenData<2> e;
  e.lam = {0.5 * tr - s, 0.5 * tr + s};
  for (int j = 0; j < 2; ++j) {
    double lam = e.lam[j];
    Vec<2> v1{b, lam - a}, v2{lam - d, c};
    e.r[j] = detail::normalize_last_positive<2>(norm<2>(v1) >= norm<2>(v2) ? v1 : v2);
  }
  detail::fill_left_2(e);
  return e;
}

// piecewise-linear interpolation grid for a scalar flux: nodes offset + k*delta
struct StateGrid {
  double delta = 0.01;
  double offset = 0.0;

  double node(long k) const { return offset + static_cast<double>(k) * delta; }
  long index(double u) const { return std::lround((u - offset) / delta); }
  double snap(double u) const { return node(index(u)); }
  bool on_grid(double u) const { return std::abs(u - snap(u)) <= 1e-9 * delta; }
};

class ScalarFlux {
 public:
  static constexpr int N = 1;
  enum class Kind { Burgers, Cubic, PiecewiseCubic };

  // segment [x0, x1): f = a + b t + c t^2 + d t^3, t = u - x0
  struct Segment {
    double x0, x1, a, b, c, d;
  };

  static ScalarFlux burgers(double lo = -10, double hi = 10) { return ScalarFlux(Kind::Burgers, {}, lo, hi); }
  static ScalarFlux cubic(double lo = -10, double hi = 10) { return ScalarFlux(Kind::Cubic, {}, lo, hi); }
  static ScalarFlux piecewise_cubic(std::vector<Segment> segs) {
    if (segs.empty()) throw ModelError("piecewise cubic flux needs at least one segment");
    std::sort(segs.begin(), segs.end(), [](auto& x, auto& y) { return x.x0 < y.x0; });
    for (std::size_t i = 0; i + 1 < segs.size(); ++i)
      if (std::abs(segs[i].x1 - segs[i + 1].x0) > 1e-14)
        throw ModelError("piecewise cubic segments must be contiguous");
    double lo = segs.front().x0, hi = segs.back().x1;
    return ScalarFlux(Kind::PiecewiseCubic, std::move(segs), lo, hi);
  }

  Kind kind() const { return kind_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  std::string name() const {
    switch (kind_) {
      case Kind::Burgers: return "burgers";
      case Kind::Cubic: return "cubic";
      default: return "piecewise_cubic";
    }
  }

  void check(double u) const {
    if (!(u >= lo_ - 1e-12 && u <= hi_ + 1e-12)) {
      std::ostringstream os;
      os << "state " << u << " outside working range [" << lo_ << ", " << hi_ << "]";
      throw DomainError(os.str());
    }
  }

  double f(double u) const {
    switch (kind_) {
      case Kind::Burgers: return 0.5 * u * u;
      case Kind::Cubic: return u * u * u;
      default: {
        const auto& s = seg(u);
        double t = u - s.x0;
        return s.a + t * (s.b + t * (s.c + t * s.d));
      }
    }
  }
  double df(double u) const {
    switch (kind_) {
      case Kind::Burgers: return u;
      case Kind::Cubic: return 3 * u * u;
      default: {
        const auto& s = seg(u);
        double t = u - s.x0;
        return s.b + t * (2 * s.c + 3 * t * s.d);
      }
    }
  }
  double d2f(double u) const {
    switch (kind_) {
      case Kind::Burgers: return 1;
      case Kind::Cubic: return 6 * u;
      default: {
        const auto& s = seg(u);
        return 2 * s.c + 6 * (u - s.x0) * s.d;
      }
    }
  }

  // averaged speed: mean of f' over the segment, the chord slope off the diagonal
  double chord(double u, double v) const {
    check(u);
    check(v);
    if (u > v) std::swap(u, v);
    switch (kind_) {
      case Kind::Burgers: return 0.5 * (u + v);
      case Kind::Cubic: return u * u + u * v + v * v;
      default: {
        if (u == v) return df(u);
        // split at knots so each piece is integrated exactly
        double total = 0, a = u;
        for (const auto& s : segs_) {
          if (s.x1 <= a) continue;
          double b = std::min(v, s.x1);
          if (b > a) total += (b - a) * detail::mean_of([&](double x) { return dseg(s, x); }, a, b);
          a = b;
          if (a >= v) break;
        }
        return total / (v - u);
      }
    }
  }

  double lip_df(double lo, double hi, int samples = 512) const {
    double m = 0;
    for (int k = 0; k <= samples; ++k) m = std::max(m, std::abs(d2f(lo + (hi - lo) * k / samples)));
    return m;
  }

  Vec<1> flux(const Vec<1>& u) const { return {f(u[0])}; }
  Mat<1> jacobian(const Vec<1>& u) const { return {{{df(u[0])}}}; }
  Averaged<1> averaged(const Vec<1>& u, const Vec<1>& up) const {
    Averaged<1> r;
    double a = chord(u[0], up[0]);
    r.A = {{{a}}};
    r.eig.lam = {a};
    r.eig.r = {{{1.0}}};
    r.eig.l = {{{1.0}}};
    return r;
  }
  EigenData<1> eigen(const Vec<1>& u) const { return averaged(u, u).eig; }
  double mu(const Vec<1>& u, int) const { return u[0]; }
  Vec<1> grad_mu(const Vec<1>&, int) const { return {1.0}; }
  void check_state(const Vec<1>& u) const { check(u[0]); }

 private:
  ScalarFlux(Kind k, std::vector<Segment> s, double lo, double hi)
      : kind_(k), segs_(std::move(s)), lo_(lo), hi_(hi) {}

  const Segment& seg(double u) const {
    auto it = std::upper_bound(segs_.begin(), segs_.end(), u, [](double x, const Segment& s) { return x < s.x1; });
    if (it == segs_.end()) return segs_.back();
    return *it;
  }
  static double dseg(const Segment& s, double u) {
    double t = u - s.x0;
    return s.b + t * (2 * s.c + 3 * t * s.d);
  }

  Kind kind_;
  std::vector<Segment> segs_;
  double lo_, hi_;
};

// pressure law p(v) for the Lagrangian p-system, or p(rho) for the Euler algebra
struct PressureLaw {
  enum class Kind { Power, Linear };
  Kind kind = Kind::Power;
  double kappa = 1.0;
  double gamma = 1.0;  // Power: p = sign * kappa * x^(-gamma) (p-system) or kappa * x^gamma (Euler)

  static PressureLaw power(double gamma, double kappa = 1.0) { return {Kind::Power, kappa, gamma}; }
  static PressureLaw linear(double slope) { return {Kind::Linear, slope, 0.0}; }
};

// u_t + p(v)_x = 0, v_t - u_x = 0; state (u, v)
class PSystem {
 public:
  static constexpr int N = 2;

  PSystem(PressureLaw law, double vlo, double vhi) : law_(law), vlo_(vlo), vhi_(vhi) {
    if (!(vlo > 0 && vhi > vlo)) throw ModelError("p-system v-domain must satisfy 0 < vlo < vhi");
    gnl_ = true;
    for (int k = 0; k <= 256; ++k) {
      double v = vlo + (vhi - vlo) * k / 256.0;
      if (!(dp(v) < 0)) throw ModelError("pressure law is not decreasing on the v-domain (hyperbolicity)");
      if (!(d2p(v) > 0)) gnl_ = false;
    }
  }

  static PSystem reciprocal(double vlo = 0.05, double vhi = 20) { return PSystem(PressureLaw::power(1.0), vlo, vhi); }

  const PressureLaw& law() const { return law_; }
  double vlo() const { return vlo_; }
  double vhi() const { return vhi_; }
  bool gnl() const { return gnl_; }
  std::string name() const {
    std::ostringstream os;
    if (law_.kind == PressureLaw::Kind::Linear)
      os << "linear_pressure slope=" << law_.kappa;
    else
      os << "plaw_pressure gamma=" << law_.gamma << " kappa=" << law_.kappa;
    return os.str();
  }

  double p(double v) const {
    if (law_.kind == PressureLaw::Kind::Linear) return -law_.kappa * v;
    return law_.kappa * std::pow(v, -law_.gamma);
  }
  double dp(double v) const {
    if (law_.kind == PressureLaw::Kind::Linear) return -law_.kappa;
    return -law_.gamma * law_.kappa * std::pow(v, -law_.gamma - 1);
  }
  double d2p(double v) const {
    if (law_.kind == PressureLaw::Kind::Linear) return 0.0;
    return law_.gamma * (law_.gamma + 1) * law_.kappa * std::pow(v, -law_.gamma - 2);
  }
  double c(double v) const { return std::sqrt(-dp(v)); }

  void check_v(double v) const {
    if (!(v >= vlo_ * (1 - 1e-12) && v <= vhi_ * (1 + 1e-12))) {
      std::ostringstream os;
      os << "specific volume " << v << " outside v-domain [" << vlo_ << ", " << vhi_ << "]";
      throw DomainError(os.str());
    }
  }

  double cbar(double v, double vp) const {
    check_v(v);
    check_v(vp);
    double rad = -detail::divided_difference([&](double x) { return p(x); }, [&](double x) { return dp(x); }, v, vp);
    if (!(rad > 0)) throw ModelError("nonpositive radicand in averaged sound speed");
    return std::sqrt(rad);
  }

  Vec<2> flux(const Vec<2>& s) const { return {p(s[1]), -s[0]}; }
  Mat<2> jacobian(const Vec<2>& s) const { return {{{0.0, dp(s[1])}, {-1.0, 0.0}}}; }

  Averaged<2> averaged(const Vec<2>& s, const Vec<2>& sp) const {
    double cb = cbar(s[1], sp[1]);
    Averaged<2> r;
    r.A = {{{0.0, -cb * cb}, {-1.0, 0.0}}};
    r.eig.lam = {-cb, cb};
    r.eig.r[0] = detail::normalize_last_positive<2>({cb, 1.0});
    r.eig.r[1] = detail::normalize_last_positive<2>({-cb, 1.0});
    detail::fill_left_2(r.eig);
    return r;
  }
  EigenData<2> eigen(const Vec<2>& s) const { return averaged(s, s).eig; }

  // both families use mu = v; see README for the orientation of r_1
  double mu(const Vec<2>& s, int) const { return s[1]; }
  Vec<2> grad_mu(const Vec<2>&, int) const { return {0.0, 1.0}; }
  void check_state(const Vec<2>& s) const { check_v(s[1]); }

 private:
  PressureLaw law_;
  double vlo_, vhi_;
  bool gnl_ = false;
};

// isentropic Euler in (rho, q = rho u); algebra only
class EulerAlgebra {
 public:
  static constexpr int N = 2;

  explicit EulerAlgebra(PressureLaw law, double rho_min = 1e-3) : law_(law), rho_min_(rho_min) {
    if (!(rho_min > 0)) throw ModelError("rho_min must be positive");
    for (int k = 0; k <= 256; ++k) {
      double rho = rho_min * std::pow(1e6, k / 256.0);
      if (!(dp(rho) > 0)) throw ModelError("Euler pressure law must be increasing");
    }
  }

  double rho_min() const { return rho_min_; }
  std::string name() const {
    std::ostringstream os;
    os << "euler gamma=" << law_.gamma << " kappa=" << law_.kappa;
    return os.str();
  }

  double p(double rho) const {
    if (law_.kind == PressureLaw::Kind::Linear) return law_.kappa * rho;
    return law_.kappa * std::pow(rho, law_.gamma);
  }
  double dp(double rho) const {
    if (law_.kind == PressureLaw::Kind::Linear) return law_.kappa;
    return law_.kappa * law_.gamma * std::pow(rho, law_.gamma - 1);
  }

  void check_rho(double rho) const {
    if (!(rho >= rho_min_)) {
      std::ostringstream os;
      os << "density " << rho << " below vacuum guard " << rho_min_;
      throw DomainError(os.str());
    }
  }

  double ebar(double rho, double q, double rhop, double qp) const {
    check_rho(rho);
    check_rho(rhop);
    double u = q / rho, up = qp / rhop;
    double sr = std::sqrt(rho), srp = std::sqrt(rhop);
    return 0.5 * (u + up) + 0.5 * (sr - srp) / (sr + srp) * (u - up);
  }
  double cbar2(double rho, double rhop) const {
    return detail::divided_difference([&](double x) { return p(x); }, [&](double x) { return dp(x); }, rho, rhop);
  }

  Vec<2> flux(const Vec<2>& s) const { return {s[1], s[1] * s[1] / s[0] + p(s[0])}; }
  Mat<2> jacobian(const Vec<2>& s) const {
    double u = s[1] / s[0];
    return {{{0.0, 1.0}, {-u * u + dp(s[0]), 2 * u}}};
  }

  Averaged<2> averaged(const Vec<2>& s, const Vec<2>& sp) const {
    double e = ebar(s[0], s[1], sp[0], sp[1]);
    double c2 = cbar2(s[0], sp[0]);
    if (!(c2 > 0)) throw ModelError("nonpositive averaged sound speed squared");
    double cb = std::sqrt(c2);
    Averaged<2> r;
    r.A = {{{0.0, 1.0}, {-e * e + c2, 2 * e}}};
    r.eig.lam = {e - cb, e + cb};
    for (int j = 0; j < 2; ++j) r.eig.r[j] = detail::normalize_last_positive<2>({1.0, r.eig.lam[j]});
    detail::fill_left_2(r.eig);
    return r;
  }
  EigenData<2> eigen(const Vec<2>& s) const { return averaged(s, s).eig; }
  void check_state(const Vec<2>& s) const { check_rho(s[0]); }

 private:
  PressureLaw law_;
  double rho_min_;
};

// Gauss-Legendre average of Df along the segment from u to u', on 2^k equal panels;
// panels are doubled until the Rankine-Hugoniot defect stops improving
template <class M>
Mat<M::N> averaged_matrix_generic(const M& model, const Vec<M::N>& u, const Vec<M::N>& up, double tol = 1e-14) {
  constexpr int N = M::N;
  model.check_state(u);
  model.check_state(up);
  if (u == up) return model.jacobian(u);
  auto panels = [&](int n) {
    Mat<N> A{};
    for (int p = 0; p < n; ++p) {
      double t0 = double(p) / n, t1 = double(p + 1) / n;
      for (auto [th, w] : detail::gl16_unit()) {
        // the node set is symmetric, so averaging th and 1-th keeps the sum symmetric in (u, u')
        double a = t0 + th * (t1 - t0), b = 1 - a;
        auto J = model.jacobian((1 - a) * u + a * up);
        auto K = model.jacobian((1 - b) * u + b * up);
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) A[i][j] += 0.5 * w * (J[i][j] + K[i][j]) / n;
      }
    }
    return A;
  };
  auto df = model.flux(up) - model.flux(u);
  double scale = std::max(1.0, norm<N>(df));
  Mat<N> best = panels(1);
  double best_def = norm<N>(matvec<N>(best, up - u) - df);
  for (int n = 2; n <= 256 && best_def > tol * scale; n *= 2) {
    auto A = panels(n);
    double d = norm<N>(matvec<N>(A, up - u) - df);
    if (d >= best_def) break;
    best = A;
    best_def = d;
  }
  return best;
}

// |A(u,u')(u'-u) - (f(u') - f(u))|
template <class M>
double matrix_defect(const M& model, const Vec<M::N>& u, const Vec<M::N>& up) {
  auto av = model.averaged(u, up);
  auto lhs = matvec<M::N>(av.A, up - u);
  auto rhs = model.flux(up) - model.flux(u);
  return norm<M::N>(lhs - rhs);
}

inline double averaged_speed_scalar(const ScalarFlux& m, double um, double up) { return m.chord(um, up); }
inline double psystem_cbar(const PSystem& m, double v, double vp) { return m.cbar(v, vp); }
inline Averaged<2> psystem_averaged_matrix(const PSystem& m, double v, double vp) {
  return m.averaged({0.0, v}, {0.0, vp});
}
inline double euler_ebar(const EulerAlgebra& m, double rho, double q, double rhop, double qp) {
  return m.ebar(rho, q, rhop, qp);
}
inline Averaged<2> euler_averaged_matrix(const EulerAlgebra& m, double rho, double q, double rhop, double qp) {
  return m.averaged({rho, q}, {rhop, qp});
}
template <class M>
double mu_parameter(const M& m, const Vec<M::N>& s, int family) {
  return m.mu(s, family);
}

struct BandReport {
  std::vector<double> lo, hi;
  double min_gap = kInf;
  bool separated = true;
};

// scan averaged eigenvalues over all pairs of sampled states
template <class M>
BandReport scan_bands(const M& model, const std::vector<Vec<M::N>>& states, double floor = 1e-6) {
  constexpr int N = M::N;
  BandReport b;
  b.lo.assign(N, kInf);
  b.hi.assign(N, -kInf);
  for (const auto& a : states)
    for (const auto& c : states) {
      auto e = model.averaged(a, c).eig;
      for (int j = 0; j < N; ++j) {
        b.lo[j] = std::min(b.lo[j], e.lam[j]);
        b.hi[j] = std::max(b.hi[j], e.lam[j]);
      }
    }
  for (int j = 0; j + 1 < N; ++j) {
    double gap = b.lo[j + 1] - b.hi[j];
    b.min_gap = std::min(b.min_gap, gap);
    if (gap < floor) b.separated = false;
  }
  return b;
}

}  // namespace l1stab
