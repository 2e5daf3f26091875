#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "shsas/backprojection.hpp"
#include "shsas/simulator.hpp"

using namespace shsas;

namespace {

constexpr double kFs = 100e3;
constexpr double kC = 343.0;

Aperture ring(std::size_t n, double radius = 0.3, double height = 0.3) {
  const std::vector<double> z{height};
  return make_circular_aperture(radius, n, z, Vec3::Zero(), 0.4);
}

// Gaussian-envelope carrier echo from a point at x0, on the bin-center grid.
std::vector<AnalyticSignal> point_echoes(const Aperture& ap, const Vec3& x0, std::size_t n = 512) {
  std::vector<AnalyticSignal> out;
  const double fc = 20e3, width = 4.0 / kFs;
  for (const auto& p : ap) {
    const double tau = ((x0 - p.tx).norm() + (x0 - p.rx).norm()) / kC;
    AnalyticSignal s{std::vector<cplx>(n), kFs, 0.5 / kFs};
    for (std::size_t k = 0; k < n; ++k) {
      const double dt = s.time(k) - tau;
      s.samples[k] = std::exp(-dt * dt / (width * width)) * std::polar(1.0, 2.0 * kPi * fc * dt);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::array<long, 3> ijk(const GridSpec& g, std::size_t lin) {
  return {static_cast<long>(lin % g.dims[0]), static_cast<long>((lin / g.dims[0]) % g.dims[1]),
          static_cast<long>(lin / (g.dims[0] * g.dims[1]))};
}

std::array<long, 3> nearest_voxel(const GridSpec& g, const Vec3& x) {
  const Vec3 q = (x - g.origin) / g.spacing;
  return {std::lround(q.x()), std::lround(q.y()), std::lround(q.z())};
}

long chebyshev(const std::array<long, 3>& a, const std::array<long, 3>& b) {
  return std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])});
}

}  // namespace

TEST(Grid, FromBoundsIsCubicAndCentered) {
  const Aabb box(Vec3(-0.1, -0.2, 0.0), Vec3(0.1, 0.2, 0.1));
  const auto g = grid_spec_from_bounds(box, 40);
  EXPECT_DOUBLE_EQ(g.spacing, 0.4 / 40);
  EXPECT_EQ(g.size(), 40u * 40u * 40u);
  const Vec3 mid = 0.5 * (g.center(0, 0, 0) + g.center(39, 39, 39));
  EXPECT_NEAR((mid - box.center()).norm(), 0.0, 1e-15);
  EXPECT_EQ(g.center(g.index(3, 5, 7)), g.center(3, 5, 7));
  EXPECT_THROW(grid_spec_from_bounds(box, 0), UsageError);
}

TEST(SampleAt, LinearBetweenBinsZeroOutside) {
  AnalyticSignal s{{cplx(1, 0), cplx(3, 2), cplx(0, 0)}, 10.0, 0.05};
  EXPECT_EQ(sample_at(s, 0.05), cplx(1, 0));
  EXPECT_NEAR(std::abs(sample_at(s, 0.1) - cplx(2, 1)), 0.0, 1e-15);
  EXPECT_EQ(sample_at(s, 0.0), cplx(0, 0));
  EXPECT_EQ(sample_at(s, 0.26), cplx(0, 0));
  EXPECT_EQ(sample_at(s, 0.12, Interpolation::nearest), cplx(3, 2));
}

TEST(Backproject, ZeroMeasurementsGiveZeroGrid) {
  const auto ap = ring(8);
  std::vector<AnalyticSignal> m(ap.size(), AnalyticSignal{std::vector<cplx>(256, 0.0), kFs, 0.5 / kFs});
  const auto g = backproject(m, ap, grid_spec_from_bounds(Aabb(Vec3::Constant(-0.05), Vec3::Constant(0.05)), 8));
  for (const auto& v : g.values) EXPECT_EQ(v, cplx(0.0, 0.0));
}

TEST(Backproject, LinearInMeasurements) {
  const auto ap = ring(12);
  auto m = point_echoes(ap, {0.01, 0.0, -0.01});
  const auto spec = grid_spec_from_bounds(Aabb(Vec3::Constant(-0.04), Vec3::Constant(0.04)), 10);
  const auto a = backproject(m, ap, spec);
  const cplx k(-0.7, 1.9);
  for (auto& s : m)
    for (auto& v : s.samples) v *= k;
  const auto b = backproject(m, ap, spec);
  double peak = 0.0;
  for (const auto& v : a.values) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(std::abs(b.values[i] - k * a.values[i]), 0.0, 1e-14 * peak);
}

TEST(Backproject, PoseOrderDoesNotMatter) {
  const auto ap = ring(10);
  const auto m = point_echoes(ap, {0.0, 0.01, 0.0});
  const auto spec = grid_spec_from_bounds(Aabb(Vec3::Constant(-0.03), Vec3::Constant(0.03)), 6);
  const auto a = backproject(m, ap, spec);
  Aperture ap2(ap.rbegin(), ap.rend());
  std::vector<AnalyticSignal> m2(m.rbegin(), m.rend());
  const auto b = backproject(m2, ap2, spec);
  EXPECT_EQ(a.values, b.values);
  KeyedRng rng(4);
  std::vector<std::size_t> perm(ap.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i-- > 1;) std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform() * (i + 1))]);
  Aperture ap3;
  std::vector<AnalyticSignal> m3;
  for (std::size_t i : perm) {
    ap3.push_back(ap[i]);
    m3.push_back(m[i]);
  }
  EXPECT_EQ(a.values, backproject(m3, ap3, spec).values);
  set_thread_count(3);
  const auto c = backproject(m, ap, spec);
  set_thread_count(1);
  EXPECT_EQ(a.values, c.values);
}

TEST(Backproject, MismatchedLengthsRejected) {
  const auto ap = ring(4);
  const auto m = point_echoes(ring(3), Vec3::Zero());
  EXPECT_THROW(backproject(m, ap, GridSpec{}), UsageError);
}

TEST(Backproject, ShiftingScattererShiftsArgmax) {
  const auto ap = ring(36);
  const auto spec = grid_spec_from_bounds(Aabb(Vec3::Constant(-0.06), Vec3::Constant(0.06)), 24);
  const std::array<long, 3> base{10, 13, 12};
  const Vec3 x0 = spec.center(10, 13, 12);
  const auto g0 = backproject(point_echoes(ap, x0), ap, spec);
  EXPECT_EQ(ijk(spec, argmax_abs(g0)), base);
  for (int axis = 0; axis < 3; ++axis) {
    Vec3 x1 = x0;
    x1[axis] += spec.spacing;
    auto want = base;
    want[axis] += 1;
    const auto g1 = backproject(point_echoes(ap, x1), ap, spec);
    EXPECT_EQ(ijk(spec, argmax_abs(g1)), want) << axis;
  }
}

TEST(Backproject, SimulatedPointScattererWithinOneVoxel) {
  // Small sphere seen by a steep ring, through the full simulate ->
  // analytic -> deconvolve chain.
  const Vec3 x0(0.012, -0.007, 0.004);
  const std::vector<double> z{0.35};
  const auto ap = make_circular_aperture(0.2, 36, z, x0, 0.3);
  Scene scene;
  scene.objects.push_back({make_icosphere(x0, 0.002, 3), 1.0});
  SimConfig sim;
  sim.n_bins = 400;
  sim.rays_per_pose = 40000;
  sim.snr_db = 20.0;
  const auto pulse = lfm_chirp(10e3, 20e3, 1e-3, kFs, 0.1);
  DeconvConfig dc;
  dc.iterations = 600;
  dc.lr = 1e-2;
  const Bvh bvh(scene);
  std::vector<AnalyticSignal> meas;
  for (std::size_t i = 0; i < ap.size(); ++i) {
    const auto h = trace_transient(bvh, scene, ap[i], sim, i);
    const auto y = render_measurement(h, pulse, sim.snr_db, i);
    meas.push_back(pulse_deconvolve(to_analytic(y, kFs, 0.5 / kFs), pulse, dc));
  }
  const auto spec = grid_spec_from_bounds(Aabb(Vec3::Constant(-0.05), Vec3::Constant(0.05)), 20);
  const auto g = backproject(meas, ap, spec);
  EXPECT_LE(chebyshev(ijk(spec, argmax_abs(g)), nearest_voxel(spec, x0)), 1);
}

TEST(PointCloudFromGrid, ThresholdNearOneKeepsArgmax) {
  VoxelGrid<cplx> g(grid_spec_from_bounds(Aabb(Vec3::Zero(), Vec3::Ones()), 4));
  KeyedRng rng(1);
  for (auto& v : g.values) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  const auto pc = grid_to_pointcloud(g, 1.0 - 1e-12);
  ASSERT_EQ(pc.size(), 1u);
  EXPECT_EQ(pc.points[0], g.spec.center(argmax_abs(g)));
}

TEST(PointCloudFromGrid, ZeroGridIsEmpty) {
  VoxelGrid<cplx> g(grid_spec_from_bounds(Aabb(Vec3::Zero(), Vec3::Ones()), 4));
  EXPECT_TRUE(grid_to_pointcloud(g, 0.5).empty());
  EXPECT_THROW(grid_to_pointcloud(g, 0.0), UsageError);
  EXPECT_THROW(grid_to_pointcloud(g, 1.0), UsageError);
}

TEST(PointCloudFromGrid, NestedSuperlevelSets) {
  VoxelGrid<double> g(grid_spec_from_bounds(Aabb(Vec3::Zero(), Vec3::Ones()), 10));
  KeyedRng rng(2);
  for (auto& v : g.values) v = rng.uniform(-1, 1);
  std::vector<Vec3> prev;
  for (double t = 0.05; t < 1.0; t += 0.05) {
    const auto pc = grid_to_pointcloud(g, t);
    if (t > 0.05) {
      EXPECT_LE(pc.size(), prev.size());
      for (const auto& p : pc.points) EXPECT_NE(std::find(prev.begin(), prev.end(), p), prev.end());
    }
    prev = pc.points;
  }
}
