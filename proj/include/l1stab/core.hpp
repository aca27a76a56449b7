#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace l1stab {

template <int N>
using Vec = std::array<double, N>;

// row-major: m[row][col]
template <int N>
using Mat = std::array<std::array<double, N>, N>;

// relative band used by every large-inequality comparison
inline constexpr double kClassTol = 1e-12;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DiscretizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AmplitudeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BlowUpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <std::size_t N>
inline std::array<double, N> operator+(const std::array<double, N>& a, const std::array<double, N>& b) {
  std::array<double, N> r;
  for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + b[i];
  return r;
}
template <std::size_t N>
inline std::array<double, N> operator-(const std::array<double, N>& a, const std::array<double, N>& b) {
  std::array<double, N> r;
  for (std::size_t i = 0; i < N; ++i) r[i] = a[i] - b[i];
  return r;
}
template <std::size_t N>
inline std::array<double, N> operator*(double s, const std::array<double, N>& a) {
  std::array<double, N> r;
  for (std::size_t i = 0; i < N; ++i) r[i] = s * a[i];
  return r;
}
template <std::size_t N>
inline double dot(const std::array<double, N>& a, const std::array<double, N>& b) {
  double s = 0;
  for (std::size_t i = 0; i < N; ++i) s += a[i] * b[i];
  return s;
}
template <std::size_t N>
inline double norm(const std::array<double, N>& a) {
  return std::sqrt(dot<N>(a, a));
}
template <std::size_t N>
inline double norm1(const std::array<double, N>& a) {
  double s = 0;
  for (std::size_t i = 0; i < N; ++i) s += std::abs(a[i]);
  return s;
}
template <std::size_t N>
inline std::array<double, N> matvec(const std::array<std::array<double, N>, N>& m, const std::array<double, N>& x) {
  std::array<double, N> r{};
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) r[i] += m[i][j] * x[j];
  return r;
}
template <std::size_t N>
inline std::array<std::array<double, N>, N> operator-(const std::array<std::array<double, N>, N>& a, const std::array<std::array<double, N>, N>& b) {
  std::array<std::array<double, N>, N> r;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) r[i][j] = a[i][j] - b[i][j];
  return r;
}
// Frobenius norm
template <std::size_t N>
inline double matnorm(const std::array<std::array<double, N>, N>& a) {
  double s = 0;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) s += a[i][j] * a[i][j];
  return std::sqrt(s);
}

inline double sgn(double x) { return (x > 0) - (x < 0); }

inline double band(double scale) { return kClassTol * std::max(1.0, std::abs(scale)); }

}  // namespace l1stab
