#pragma once

// Time-domain delay-and-sum over a voxel grid.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include "shsas/core.hpp"
#include "shsas/geometry.hpp"
#include "shsas/renderer.hpp"
#include "shsas/signal.hpp"

namespace shsas {

// Regular lattice; voxel (i, j, k) is centered at origin + spacing * (i, j, k).
struct GridSpec {
  Vec3 origin = Vec3::Zero();
  double spacing = 1.0;
  std::array<std::size_t, 3> dims{1, 1, 1};

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return i + dims[0] * (j + dims[1] * k); }
  Vec3 center(std::size_t i, std::size_t j, std::size_t k) const {
    return origin + spacing * Vec3(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
  }
  Vec3 center(std::size_t lin) const {
    const std::size_t i = lin % dims[0];
    const std::size_t j = (lin / dims[0]) % dims[1];
    const std::size_t k = lin / (dims[0] * dims[1]);
    return center(i, j, k);
  }
};

// n^3 cubic voxels covering the box's largest extent, centered on the box.
inline GridSpec grid_spec_from_bounds(const Aabb& box, std::size_t n) {
  if (n < 1 || box.isEmpty()) throw UsageError("grid_spec_from_bounds: need n >= 1 and a non-empty box");
  GridSpec g;
  g.spacing = box.sizes().maxCoeff() / static_cast<double>(n);
  g.dims = {n, n, n};
  const Vec3 half = Vec3::Constant(0.5 * g.spacing * static_cast<double>(n - 1));
  g.origin = box.center() - half;
  return g;
}

template <typename T>
struct VoxelGrid {
  GridSpec spec;
  std::vector<T> values;

  VoxelGrid() = default;
  explicit VoxelGrid(const GridSpec& s) : spec(s), values(s.size(), T{}) {
    if (!(s.spacing > 0.0)) throw UsageError("VoxelGrid: spacing must be positive");
  }
};

enum class Interpolation { linear, nearest };

// Sample of a trace at continuous time t: linear between bins, zero outside.
inline cplx sample_at(const AnalyticSignal& s, double t, Interpolation mode = Interpolation::linear) {
  const double pos = (t - s.t0) * s.fs;
  const auto n = static_cast<double>(s.size());
  if (!(pos >= 0.0) || pos > n - 1.0) return 0.0;
  if (mode == Interpolation::nearest) return s.samples[static_cast<std::size_t>(std::llround(pos))];
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= s.size()) return s.samples[i];
  const double f = pos - static_cast<double>(i);
  return (1.0 - f) * s.samples[i] + f * s.samples[i + 1];
}

struct BackprojectionConfig {
  double c = 343.0;
  BeamPattern tx_beam{BeamKind::cosine_power, 2.0, kPi / 6.0};
  Interpolation interpolation = Interpolation::linear;
};

// I(v) = (1/N) sum_n b_T,n(v) s_n((|v - o_T| + |v - o_R|) / c). Voxels are
// processed in parallel. Each voxel sums poses in a canonical order sorted by
// pose geometry, so permuting the (measurement, pose) pairs is bit-exact.
inline VoxelGrid<cplx> backproject(std::span<const AnalyticSignal> measurements, std::span<const SensorPose> aperture,
                                   const GridSpec& spec, const BackprojectionConfig& cfg = {}) {
  if (measurements.size() != aperture.size())
    throw UsageError("backproject: " + std::to_string(measurements.size()) + " measurements for " +
                     std::to_string(aperture.size()) + " poses");
  if (spec.size() == 0) throw UsageError("backproject: empty grid");
  if (!(cfg.c > 0.0)) throw UsageError("backproject: sound speed must be positive");
  VoxelGrid<cplx> grid(spec);
  if (aperture.empty()) return grid;
  const double inv_n = 1.0 / static_cast<double>(aperture.size());
  std::vector<BeamPattern> beams(aperture.size(), cfg.tx_beam);
  for (std::size_t p = 0; p < aperture.size(); ++p) beams[p].halfangle = aperture[p].beam_halfangle;
  std::vector<std::size_t> order(aperture.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    const auto& q = aperture[i];
    return std::array<double, 10>{q.tx.x(), q.tx.y(), q.tx.z(), q.rx.x(), q.rx.y(), q.rx.z(),
                                  q.boresight.x(), q.boresight.y(), q.boresight.z(), q.beam_halfangle};
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  parallel_for(spec.size(), [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t v = begin; v < end; ++v) {
      const Vec3 x = spec.center(v);
      cplx acc = 0.0;
      for (std::size_t p : order) {
        const auto& pose = aperture[p];
        const Vec3 dt = x - pose.tx;
        if (!(dt.norm() > 0.0)) continue;
        const double w = beam_weight(beams[p], pose.boresight, pose.tx, x);
        if (w == 0.0) continue;
        const double t = (dt.norm() + (x - pose.rx).norm()) / cfg.c;
        acc += w * sample_at(measurements[p], t, cfg.interpolation);
      }
      grid.values[v] = acc * inv_n;
    }
  });
  return grid;
}

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// Voxel centers whose magnitude reaches threshold * max magnitude.
template <typename T>
PointCloud grid_to_pointcloud(const VoxelGrid<T>& grid, double threshold) {
  if (!(threshold > 0.0) || !(threshold < 1.0)) throw UsageError("grid_to_pointcloud: threshold must lie in (0, 1)");
  double peak = 0.0;
  for (const auto& v : grid.values) peak = std::max(peak, static_cast<double>(std::abs(v)));
  PointCloud pc;
  if (peak == 0.0) return pc;
  const double cut = threshold * peak;
  for (std::size_t i = 0; i < grid.values.size(); ++i)
    if (static_cast<double>(std::abs(grid.values[i])) >= cut) pc.points.push_back(grid.spec.center(i));
  return pc;
}

template <typename T>
std::size_t argmax_abs(const VoxelGrid<T>& grid) {
  std::size_t best = 0;
  double peak = -1.0;
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    const double a = std::abs(grid.values[i]);
    if (a > peak) {
      peak = a;
      best = i;
    }
  }
  return best;
}

}  // namespace shsas
