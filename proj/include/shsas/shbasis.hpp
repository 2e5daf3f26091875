#pragma once

// Real spherical harmonics up to degree 3 and complex-coefficient
// scattering evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "shsas/core.hpp"

namespace shsas {

inline constexpr int kMaxShDegree = 3;

constexpr int sh_count(int degree) { return (degree + 1) * (degree + 1); }
constexpr int sh_index(int l, int m) { return l * l + l + m; }

struct Direction {
  double theta = 0.0;  // polar angle from +z, [0, pi]
  double phi = 0.0;    // azimuth, [0, 2 pi)

  Vec3 unit_vector() const {
    const double st = std::sin(theta);
    return {st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
  }
};

struct SHCoeffs {
  int degree = 0;
  std::vector<cplx> c;

  SHCoeffs() = default;
  explicit SHCoeffs(int l) : degree(l), c(static_cast<std::size_t>(sh_count(l)), 0.0) {}
};

inline void check_degree(int degree) {
  if (degree < 0 || degree > kMaxShDegree)
    throw UsageError("spherical harmonics: degree " + std::to_string(degree) + " unsupported (0..3)");
}

// Real orthonormal harmonics of a unit vector, written out as polynomials.
// Values are stored at index l*l + l + m.
inline std::array<double, 16> sh_basis_unit(int degree, const Vec3& u) {
  check_degree(degree);
  std::array<double, 16> y{};
  const double x = u.x(), yv = u.y(), z = u.z();
  y[0] = 0.28209479177387814;  // 1/(2 sqrt(pi))
  if (degree >= 1) {
    constexpr double k1 = 0.48860251190291992;  // sqrt(3/(4 pi))
    y[1] = k1 * yv;
    y[2] = k1 * z;
    y[3] = k1 * x;
  }
  if (degree >= 2) {
    constexpr double k2a = 1.0925484305920792;  // 1/2 sqrt(15/pi)
    constexpr double k2b = 0.31539156525252005;  // 1/4 sqrt(5/pi)
    constexpr double k2c = 0.54627421529603959;  // 1/4 sqrt(15/pi)
    y[4] = k2a * x * yv;
    y[5] = k2a * yv * z;
    y[6] = k2b * (3.0 * z * z - 1.0);
    y[7] = k2a * x * z;
    y[8] = k2c * (x * x - yv * yv);
  }
  if (degree >= 3) {
    constexpr double k3a = 0.59004358992664352;  // 1/4 sqrt(35/(2 pi))
    constexpr double k3b = 2.8906114426405538;   // 1/2 sqrt(105/pi)
    constexpr double k3c = 0.45704579946446572;  // 1/4 sqrt(21/(2 pi))
    constexpr double k3d = 0.37317633259011540;  // 1/4 sqrt(7/pi)
    constexpr double k3e = 1.4453057213202769;   // 1/4 sqrt(105/pi)
    y[9] = k3a * yv * (3.0 * x * x - yv * yv);
    y[10] = k3b * x * yv * z;
    y[11] = k3c * yv * (5.0 * z * z - 1.0);
    y[12] = k3d * z * (5.0 * z * z - 3.0);
    y[13] = k3c * x * (5.0 * z * z - 1.0);
    y[14] = k3e * z * (x * x - yv * yv);
    y[15] = k3a * x * (x * x - 3.0 * yv * yv);
  }
  return y;
}

inline std::vector<double> eval_sh_basis(int degree, const Direction& dir) {
  const auto y = sh_basis_unit(degree, dir.unit_vector());
  return {y.begin(), y.begin() + sh_count(degree)};
}

inline Direction dir_from_vector(const Vec3& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw UsageError("dir_from_vector: zero vector");
  Direction d;
  d.theta = std::acos(std::clamp(v.z() / n, -1.0, 1.0));
  double phi = std::atan2(v.y(), v.x());
  if (phi < 0.0) phi += 2.0 * kPi;
  if (phi >= 2.0 * kPi) phi = 0.0;
  d.phi = phi;
  return d;
}

// sum_k c_k Y_k for a basis vector already evaluated.
inline cplx scatter_from_basis(std::span<const cplx> c, std::span<const double> basis) {
  cplx acc = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) acc += c[k] * basis[k];
  return acc;
}

inline cplx eval_scatter(const SHCoeffs& coeffs, const Direction& dir) {
  const auto y = sh_basis_unit(coeffs.degree, dir.unit_vector());
  return scatter_from_basis(coeffs.c, y);
}

inline constexpr double kInvSqrt4Pi = 0.28209479177387814;

inline cplx dc_amplitude(const SHCoeffs& coeffs) { return coeffs.c.at(0) * kInvSqrt4Pi; }

}  // namespace shsas
