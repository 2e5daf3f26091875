#pragma once

// Bistatic constant time-of-flight ellipsoids and TX-ray sampling on them.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "shsas/core.hpp"

namespace shsas {

struct SensorPose {
  Vec3 tx = Vec3::Zero();
  Vec3 rx = Vec3::Zero();
  Vec3 boresight = Vec3::UnitX();
  double beam_halfangle = kPi / 6.0;

  double separation() const { return (rx - tx).norm(); }
};

inline void validate(const SensorPose& pose) {
  if (std::abs(pose.boresight.norm() - 1.0) > 1e-9)
    throw UsageError("SensorPose: boresight must be a unit vector");
  if (!(pose.beam_halfangle > 0.0) || pose.beam_halfangle > kPi)
    throw UsageError("SensorPose: beam half-angle must lie in (0, pi]");
}

struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();  // columns: local axes in world frame
  double a = 0.0;                    // semi-major, along local x
  double b = 0.0;                    // semi-minor (both remaining axes)
  double d = 0.0;                    // focal separation

  Vec3 to_local(const Vec3& x) const { return rotation.transpose() * (x - center); }
  Vec3 to_world(const Vec3& x) const { return center + rotation * x; }

  // Quadric value x^2/a^2 + (y^2 + z^2)/b^2 - 1 of a world point.
  double implicit(const Vec3& x) const {
    const Vec3 q = to_local(x);
    return q.x() * q.x() / (a * a) + (q.y() * q.y() + q.z() * q.z()) / (b * b) - 1.0;
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitX();
};

// Orthonormal frame whose first column is `axis` (unit). The completion is
// a fixed function of the axis.
inline Mat3 frame_from_axis(const Vec3& axis) {
  const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 u = helper - helper.dot(axis) * axis;
  u.normalize();
  const Vec3 w = axis.cross(u);
  Mat3 r;
  r.col(0) = axis;
  r.col(1) = u;
  r.col(2) = w;
  return r;
}

inline Ellipsoid ellipsoid_from_tof(const SensorPose& pose, double t, double c) {
  if (!(c > 0.0) || !(t > 0.0)) throw UsageError("ellipsoid_from_tof: c and t must be positive");
  Ellipsoid e;
  const Vec3 baseline = pose.rx - pose.tx;
  e.d = baseline.norm();
  e.a = c * t / 2.0;
  if (c * t <= e.d) throw DataError("ellipsoid_from_tof: path length does not exceed focal separation");
  e.b = std::sqrt(e.a * e.a - (e.d / 2.0) * (e.d / 2.0));
  e.center = 0.5 * (pose.tx + pose.rx);
  e.rotation = e.d > 0.0 ? frame_from_axis(baseline / e.d) : Mat3::Identity();
  return e;
}

struct RayHit {
  Vec3 point;
  double l = 0.0;  // distance along the ray
};

// Smallest positive root of the ray/quadric equation, solved in the
// ellipsoid frame.
inline std::optional<RayHit> ray_ellipsoid_intersect(const Ellipsoid& ell, const Ray& ray) {
  const Vec3 o = ell.to_local(ray.origin);
  const Vec3 dl = ell.rotation.transpose() * ray.dir;
  const double ia2 = 1.0 / (ell.a * ell.a);
  const double ib2 = 1.0 / (ell.b * ell.b);
  const double a0 = dl.x() * dl.x() * ia2 + (dl.y() * dl.y() + dl.z() * dl.z()) * ib2;
  const double b0 = 2.0 * (o.x() * dl.x() * ia2 + (o.y() * dl.y() + o.z() * dl.z()) * ib2);
  const double c0 = o.x() * o.x() * ia2 + (o.y() * o.y() + o.z() * o.z()) * ib2 - 1.0;
  const double disc = b0 * b0 - 4.0 * a0 * c0;
  if (disc < 0.0 || a0 <= 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  // Cancellation-free pair of roots.
  const double q = -0.5 * (b0 + (b0 >= 0.0 ? sq : -sq));
  double r1 = q / a0;
  double r2 = q != 0.0 ? c0 / q : r1;
  if (r1 > r2) std::swap(r1, r2);
  double l;
  if (r1 > 0.0)
    l = r1;
  else if (r2 > 0.0)
    l = r2;
  else
    return std::nullopt;
  return RayHit{ray.origin + l * ray.dir, l};
}

// Direction drawn area-uniformly from the spherical cap of half-angle
// `halfangle` around `axis`.
inline Vec3 sample_cone(const Vec3& axis, double halfangle, KeyedRng& rng) {
  const double u = rng.uniform();
  const double v = rng.uniform();
  const double cos_t = 1.0 - u * (1.0 - std::cos(halfangle));
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  const double phi = 2.0 * kPi * v;
  const Mat3 f = frame_from_axis(axis);
  Vec3 dir = f.col(0) * cos_t + f.col(1) * (sin_t * std::cos(phi)) + f.col(2) * (sin_t * std::sin(phi));
  return dir.normalized();
}

struct EllipsoidSample {
  std::size_t bin = 0;  // index into the requested ToF list
  double l = 0.0;
  Vec3 point;
};

struct RaySamples {
  std::size_t ray_index = 0;
  Vec3 dir;
  std::vector<EllipsoidSample> samples;  // increasing l
};

// Casts n_rays TX rays inside the beam cone and intersects each with the
// constant-ToF ellipsoid of every requested time. Ray r of pose p draws from
// KeyedRng(seed, p, r), so results do not depend on evaluation order.
inline std::vector<RaySamples> sample_ellipsoid_points(const SensorPose& pose, std::span<const double> tof,
                                                       double c, std::size_t n_rays, std::uint64_t seed,
                                                       std::uint64_t pose_index = 0) {
  if (n_rays < 1) throw UsageError("sample_ellipsoid_points: n_rays must be >= 1");
  for (std::size_t i = 1; i < tof.size(); ++i)
    if (!(tof[i] > tof[i - 1])) throw UsageError("sample_ellipsoid_points: ToF bins must increase strictly");

  const double d = pose.separation();
  std::vector<std::optional<Ellipsoid>> ells(tof.size());
  for (std::size_t i = 0; i < tof.size(); ++i)
    if (tof[i] > 0.0 && c * tof[i] > d) ells[i] = ellipsoid_from_tof(pose, tof[i], c);

  std::vector<RaySamples> out(n_rays);
  for (std::size_t r = 0; r < n_rays; ++r) {
    KeyedRng rng(seed, pose_index, r);
    RaySamples& rs = out[r];
    rs.ray_index = r;
    rs.dir = sample_cone(pose.boresight, pose.beam_halfangle, rng);
    const Ray ray{pose.tx, rs.dir};
    for (std::size_t i = 0; i < tof.size(); ++i) {
      if (!ells[i]) continue;
      if (auto hit = ray_ellipsoid_intersect(*ells[i], ray)) rs.samples.push_back({i, hit->l, hit->point});
    }
  }
  return out;
}

}  // namespace shsas
