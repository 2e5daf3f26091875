#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "shsas/renderer.hpp"
#include "test_support.hpp"

using namespace shsas;
using shsas::testing::check_gradient;
using shsas::testing::micro_grid;
using shsas::testing::random_field;

namespace {

SensorPose monostatic(const Vec3& at, const Vec3& look_at, double half) {
  SensorPose p;
  p.tx = p.rx = at;
  p.boresight = (look_at - at).normalized();
  p.beam_halfangle = half;
  return p;
}

// Compact isotropic blob of radius r around x0.
AnalyticField blob(const Vec3& x0, double r, cplx amp = 1.0) {
  return isotropic_field(0, [=](const Vec3& x) {
    const double q = (x - x0).squaredNorm() / (r * r);
    return q < 1.0 ? amp * (1.0 - q) * (1.0 - q) : cplx(0.0, 0.0);
  });
}

std::vector<std::size_t> all_bins(std::size_t n) {
  std::vector<std::size_t> b(n);
  std::iota(b.begin(), b.end(), 0);
  return b;
}

}  // namespace

TEST(Beam, OnBoresightIsOne) {
  const BeamPattern bp{BeamKind::cosine_power, 2.0, 0.3};
  EXPECT_EQ(beam_weight(bp, Vec3::UnitX(), Vec3::Zero(), {2.0, 0.0, 0.0}), 1.0);
}

TEST(Beam, OutsideHalfangleIsZero) {
  const BeamPattern bp{BeamKind::cosine_power, 2.0, 0.3};
  const Vec3 x(std::cos(0.31), std::sin(0.31), 0.0);
  EXPECT_EQ(beam_weight(bp, Vec3::UnitX(), Vec3::Zero(), x), 0.0);
  const Vec3 inside(std::cos(0.29), std::sin(0.29), 0.0);
  EXPECT_NEAR(beam_weight(bp, Vec3::UnitX(), Vec3::Zero(), inside), std::pow(std::cos(0.29), 2.0), 1e-15);
}

TEST(Beam, UniformFullSphereIsOne) {
  const BeamPattern bp{BeamKind::uniform, 0.0, kPi};
  KeyedRng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(beam_weight(bp, Vec3::UnitZ(), Vec3::Zero(), rng.unit_vector()), 1.0);
}

TEST(Lambertian, AlignedOpposedOrthogonal) {
  const Vec3 tx(0, 0, 5);
  EXPECT_NEAR(lambertian(Vec3::UnitZ(), Vec3::Zero(), tx), 1.0, 1e-15);
  EXPECT_EQ(lambertian(-Vec3::UnitZ(), Vec3::Zero(), tx), 0.0);
  EXPECT_NEAR(lambertian(Vec3::UnitX(), Vec3::Zero(), tx), 0.0, 1e-15);
  EXPECT_THROW(lambertian(Vec3::UnitX(), tx, tx), UsageError);
}

TEST(Transmission, EmptySpaceIsTransparent) {
  const auto f = isotropic_field(0, [](const Vec3&) { return cplx(0.0, 0.0); });
  std::vector<Vec3> pts;
  std::vector<double> l;
  for (int i = 0; i < 10; ++i) {
    pts.emplace_back(0.1 * i, 0, 0);
    l.push_back(0.1 * i);
  }
  for (double t : transmission(f, 20.0, pts, l)) EXPECT_EQ(t, 1.0);
}

TEST(Transmission, ConstantDensityClosedForm) {
  const cplx dc(0.03, 0.04);  // |dc| = 0.05
  const auto f = isotropic_field(1, [dc](const Vec3&) { return dc; });
  const double zeta = 20.0, rho = 0.05 * zeta;
  std::vector<Vec3> pts;
  std::vector<double> l{0.0, 0.013, 0.05, 0.07, 0.2, 0.31};
  for (double s : l) pts.emplace_back(s, 0, 0);
  const auto t = transmission(f, zeta, pts, l);
  EXPECT_NEAR(t.back(), std::exp(-rho * l.back()), 1e-10);
}

TEST(Transmission, NonIncreasing) {
  const auto g = micro_grid();
  const auto f = random_field(g, 2, 3);
  KeyedRng rng(4);
  std::vector<Vec3> pts;
  std::vector<double> l;
  double s = 0.0;
  for (int i = 0; i < 200; ++i) {
    s += rng.uniform(1e-4, 5e-3);
    l.push_back(s);
    pts.push_back(Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)));
  }
  const auto t = transmission(f, 20.0, pts, l);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LE(t[i], t[i - 1]);
  EXPECT_LT(t.back(), 1.0);
}

TEST(Render, ZeroFieldGivesZeroTransient) {
  const auto f = isotropic_field(2, [](const Vec3&) { return cplx(0.0, 0.0); });
  RenderConfig cfg;
  cfg.n_rays = 64;
  cfg.n_tof_bins = 256;
  const auto p = monostatic({0.3, 0, 0}, Vec3::Zero(), 0.3);
  const auto tr = render_trace(f, cfg, p);
  ASSERT_EQ(tr.size(), 256u);
  for (const auto& v : tr.samples) EXPECT_EQ(v, cplx(0.0, 0.0));

  const NeuralField zero(micro_grid(), 1, std::vector<double>(make_layout(micro_grid(), 1).total, 0.0));
  for (const auto& v : synthesize_novel_view(zero, cfg, p).samples) EXPECT_EQ(v, cplx(0.0, 0.0));
}

TEST(Render, PlantedScattererPeaksAtFloorBin) {
  RenderConfig cfg;
  cfg.n_rays = 20000;
  cfg.n_tof_bins = 256;
  cfg.zeta = 0.0;
  cfg.use_lambertian = false;
  const Vec3 x0(0.01, -0.02, 0.0);
  for (double frac : {0.3, 0.5, 0.75}) {
    const double l = (150.0 + frac) * cfg.c / cfg.fs;
    const Vec3 at = x0 + Vec3(0.2, 0.1, 0.15).normalized() * (l / 2.0);
    const auto p = monostatic(at, x0, 0.05);
    const auto tr = render_trace(blob(x0, 1e-3), cfg, p);
    std::size_t best = 0;
    for (std::size_t k = 1; k < tr.size(); ++k)
      if (std::abs(tr.samples[k]) > std::abs(tr.samples[best])) best = k;
    EXPECT_GT(std::abs(tr.samples[best]), 0.0);
    EXPECT_EQ(best, static_cast<std::size_t>(std::floor(l * cfg.fs / cfg.c))) << frac;
  }
}

TEST(Render, PlantedScattererBistatic) {
  RenderConfig cfg;
  cfg.n_rays = 20000;
  cfg.n_tof_bins = 256;
  cfg.zeta = 0.0;
  cfg.use_lambertian = false;
  const Vec3 x0(0.0, 0.0, 0.0);
  SensorPose p;
  p.tx = {0.25, 0.02, 0.1};
  p.rx = {0.25, -0.02, 0.1};
  p.boresight = (x0 - p.tx).normalized();
  p.beam_halfangle = 0.05;
  const double l = (x0 - p.tx).norm() + (x0 - p.rx).norm();
  const auto tr = render_trace(blob(x0, 1e-3), cfg, p);
  std::size_t best = 0;
  for (std::size_t k = 1; k < tr.size(); ++k)
    if (std::abs(tr.samples[k]) > std::abs(tr.samples[best])) best = k;
  EXPECT_EQ(best, static_cast<std::size_t>(std::floor(l * cfg.fs / cfg.c)));
}

TEST(Render, NarrowBeamMissesOffAxisScatterer) {
  RenderConfig cfg;
  cfg.n_rays = 2000;
  cfg.n_tof_bins = 256;
  const auto p = monostatic({0.3, 0, 0}, Vec3::Zero(), 1e-6);
  const auto tr = render_trace(blob({0.0, 0.05, 0.0}, 5e-3), cfg, p);
  for (const auto& v : tr.samples) EXPECT_EQ(v, cplx(0.0, 0.0));
}

TEST(Render, LinearInAmplitudeWithoutAttenuation) {
  RenderConfig cfg;
  cfg.n_rays = 500;
  cfg.n_tof_bins = 256;
  cfg.zeta = 0.0;
  cfg.use_lambertian = false;
  const auto p = monostatic({0.3, 0, 0}, Vec3::Zero(), 0.2);
  const cplx k(0.5, -2.0);
  const auto a = render_trace(blob(Vec3::Zero(), 0.02), cfg, p);
  const auto b = render_trace(blob(Vec3::Zero(), 0.02, k), cfg, p);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(std::abs(b.samples[i] - k * a.samples[i]), 0.0, 1e-15);
}

TEST(Render, NovelViewEqualsTransientBitExactly) {
  const auto g = micro_grid(0.3);
  const auto f = random_field(g, 3, 9);
  RenderConfig cfg;
  cfg.n_rays = 16;
  cfg.n_tof_bins = 200;
  cfg.seed = 77;
  const auto p = monostatic({0.3, 0.1, 0.2}, Vec3::Zero(), 0.4);
  const auto nv = synthesize_novel_view(f, cfg, p, 3);
  const auto st = synthesize_transient(f, cfg, p, all_bins(200), 3);
  ASSERT_EQ(nv.size(), st.size());
  for (std::size_t i = 0; i < st.size(); ++i) EXPECT_EQ(nv.samples[i], st[i]);
  EXPECT_DOUBLE_EQ(nv.t0, 0.5 / cfg.fs);
}

TEST(Render, SubsetOfBinsMatchesFullTrace) {
  const auto g = micro_grid(0.3);
  const auto f = random_field(g, 1, 10);
  RenderConfig cfg;
  cfg.n_rays = 16;
  cfg.n_tof_bins = 200;
  const auto p = monostatic({0.3, 0.0, 0.1}, Vec3::Zero(), 0.4);
  const auto full = synthesize_transient(f, cfg, p, all_bins(200));
  // Transmission couples bins along a ray, so only a contiguous tail
  // starting at bin 0 reproduces the full render exactly.
  const std::vector<std::size_t> head{0, 1, 2, 3, 4, 5};
  const auto part = synthesize_transient(f, cfg, p, head);
  for (std::size_t i = 0; i < head.size(); ++i) EXPECT_EQ(part[i], full[i]);
}

TEST(Render, BackwardMatchesFiniteDifferences) {
  const auto g = micro_grid(0.3);
  for (bool lambert : {false, true}) {
    auto f = random_field(g, 1, 5);
    RenderConfig cfg;
    cfg.n_rays = 8;
    cfg.zeta = 5.0;
    cfg.use_lambertian = lambert;
    SensorPose p;
    p.tx = {0.02, 0.5, 0.3};
    p.rx = {-0.02, 0.5, 0.3};
    p.boresight = (-p.tx).normalized();
    p.beam_halfangle = 0.4;
    std::vector<std::size_t> bins;
    for (std::size_t k = 160; k < 190; k += 3) bins.push_back(k);
    const std::vector<cplx> target(bins.size(), cplx(0.1, -0.05));
    auto loss = [&] {
      const auto rec = render_pose(f, cfg, p, bins, 7, 0);
      double s = 0.0;
      for (std::size_t i = 0; i < bins.size(); ++i) s += std::norm(rec.prediction[i] - target[i]);
      return s;
    };
    auto rec = render_pose(f, cfg, p, bins, 7, 0);
    std::vector<cplx> d(bins.size());
    for (std::size_t i = 0; i < bins.size(); ++i) d[i] = 2.0 * (rec.prediction[i] - target[i]);
    std::vector<double> grad(f.num_params(), 0.0);
    backward_pose(f, cfg, rec, d, grad);
    const auto probes = check_gradient(f.params(), grad, loss, 30, 4);
    ASSERT_FALSE(probes.empty());
    for (const auto& q : probes) EXPECT_LT(q.rel(), 1e-5) << "lambertian " << lambert << " param " << q.index;
  }
}

TEST(Render, ExactReceiveLegBackward) {
  const auto g = micro_grid(0.3);
  auto f = random_field(g, 0, 6);
  RenderConfig cfg;
  cfg.n_rays = 6;
  cfg.zeta = 5.0;
  cfg.use_lambertian = false;
  cfg.exact_rx_leg = true;
  cfg.rx_leg_steps = 8;
  cfg.bounds = Aabb(Vec3::Constant(-0.3), Vec3::Constant(0.3));
  SensorPose p;
  p.tx = {0.05, 0.4, 0.2};
  p.rx = {-0.05, 0.4, 0.2};
  p.boresight = (-p.tx).normalized();
  p.beam_halfangle = 0.4;
  std::vector<std::size_t> bins;
  for (std::size_t k = 100; k < 200; k += 5) bins.push_back(k);
  auto loss = [&] {
    const auto rec = render_pose(f, cfg, p, bins, 3, 0);
    double s = 0.0;
    for (const auto& v : rec.prediction) s += std::norm(v);
    return s;
  };
  auto rec = render_pose(f, cfg, p, bins, 3, 0);
  std::vector<cplx> d(bins.size());
  for (std::size_t i = 0; i < bins.size(); ++i) d[i] = 2.0 * rec.prediction[i];
  std::vector<double> grad(f.num_params(), 0.0);
  backward_pose(f, cfg, rec, d, grad);
  for (const auto& q : check_gradient(f.params(), grad, loss, 30, 8)) EXPECT_LT(q.rel(), 1e-5) << q.index;
}

TEST(Render, DeterministicForFixedSeed) {
  const auto g = micro_grid(0.3);
  const auto f = random_field(g, 2, 11);
  RenderConfig cfg;
  cfg.n_rays = 32;
  cfg.n_tof_bins = 200;
  cfg.seed = 5;
  const auto p = monostatic({0.3, 0.0, 0.1}, Vec3::Zero(), 0.4);
  const auto a = render_trace(f, cfg, p, 2);
  const auto b = render_trace(f, cfg, p, 2);
  EXPECT_EQ(a.samples, b.samples);
}
