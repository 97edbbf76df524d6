#pragma once

// Independent reference implementations and finite-difference helpers used
// to check analytic results. Nothing here may call the code under test.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

namespace oracles {

using Vec3 = Eigen::Vector3d;

// Axis-angle rotation through the quaternion sandwich product, an
// independent path to the same rotation as a matrix exponential.
inline Vec3 quaternion_rotate(const Vec3& rotvec, const Vec3& v) {
  const double angle = rotvec.norm();
  if (angle < 1e-300) return v;
  const Vec3 axis = rotvec / angle;
  const double half = 0.5 * angle;
  const double qw = std::cos(half);
  const Vec3 qv = std::sin(half) * axis;
  // q * (0, v) * q^-1 expanded.
  const Vec3 t = 2.0 * qv.cross(v);
  return v + qw * t + qv.cross(t);
}

// Symmetric relative error with an absolute floor for near-zero pairs.
inline double rel_err(double a, double b, double floor_at = 1e-8) {
  const double scale = std::max(floor_at, std::abs(a) + std::abs(b));
  return std::abs(a - b) / scale;
}

// Central finite difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Central difference with a Richardson consistency probe: the h and h/2
// estimates must agree, otherwise the point straddles a discontinuity and
// the caller should skip it.
struct FdEstimate {
  double value = 0.0;
  bool smooth = false;
};

inline FdEstimate guarded_diff(const std::function<double(double)>& f, double x, double h,
                               double agree_tol = 0.05, double floor_at = 1e-7) {
  const double d1 = central_diff(f, x, h);
  const double d2 = central_diff(f, x, 0.5 * h);
  FdEstimate est;
  est.value = d2;
  est.smooth = rel_err(d1, d2, floor_at) <= agree_tol;
  return est;
}

// Deterministic uniform doubles in [0, 1) from the engine's raw 64-bit
// output; independent of distribution implementations.
inline double unit_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_double(rng);
}

inline Vec3 uniform_vec3(std::mt19937_64& rng, double lo, double hi) {
  return Vec3(uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi));
}

// Box-Muller standard normal; avoids distribution implementation drift.
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = unit_double(rng);
  while (u1 <= 0.0) u1 = unit_double(rng);
  const double u2 = unit_double(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace oracles
