#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "shsas/meshmetrics.hpp"
#include "shsas/trainer.hpp"
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

BatchItem item_for(const SensorPose& pose, std::vector<std::size_t> bins, std::vector<cplx> target, std::uint64_t idx = 0) {
  BatchItem it;
  it.pose = pose;
  it.pose_index = idx;
  it.bins = std::move(bins);
  it.target = std::move(target);
  return it;
}

}  // namespace

TEST(Loss, PerfectPredictionIsZero) {
  const auto f = random_field(micro_grid(0.3), 1, 3);
  RenderConfig rc;
  rc.n_rays = 8;
  TrainConfig tc;
  tc.lambdas = {1.0, 0.0, 0.0, 0.0, 0.0};
  const auto pose = monostatic({0.3, 0.05, 0.1}, Vec3::Zero(), 0.3);
  const std::vector<std::size_t> bins{170, 175, 180, 190};
  const auto pred = render_pose(f, rc, pose, bins, 11, 2).prediction;
  const std::vector<BatchItem> batch{item_for(pose, bins, pred, 2)};
  const auto l = compute_loss(f, rc, tc, batch, 11);
  EXPECT_EQ(l.tof, 0.0);
  EXPECT_EQ(l.total, 0.0);
}

TEST(Loss, ZeroFieldGivesMeasurementNorms) {
  const NeuralField f(micro_grid(0.3), 2, std::vector<double>(make_layout(micro_grid(0.3), 2).total, 0.0));
  RenderConfig rc;
  rc.n_rays = 6;
  TrainConfig tc;
  const auto p0 = monostatic({0.3, 0.0, 0.1}, Vec3::Zero(), 0.3);
  const auto p1 = monostatic({0.0, 0.3, 0.1}, Vec3::Zero(), 0.3);
  const std::vector<BatchItem> batch{item_for(p0, {170, 180}, {cplx(3, 4), cplx(0, 0)}, 0),
                                     item_for(p1, {160, 172, 185}, {cplx(1, 0), cplx(0, -2), cplx(2, 0)}, 1)};
  std::vector<double> grad(f.num_params(), 0.0);
  const auto l = compute_loss(f, rc, tc, batch, 5, grad);
  EXPECT_NEAR(l.tof, 5.0 + 3.0, 1e-12);
  EXPECT_EQ(l.sparsity, 0.0);
  EXPECT_EQ(l.tv_density, 0.0);
  EXPECT_EQ(l.tv_amplitude, 0.0);
  EXPECT_EQ(l.tv_phase, 0.0);
  EXPECT_NEAR(l.total, 8.0, 1e-12);
}

TEST(Loss, MicroInstanceMatchesScalarRecomputation) {
  // One monostatic pose, two bins, three rays, smooth isotropic field.
  auto amp = [](const Vec3& x) { return cplx(0.3 + 2.0 * x.y(), 0.1 - 1.5 * x.z()); };
  const auto f = isotropic_field(0, amp);
  RenderConfig rc;
  rc.n_rays = 3;
  rc.zeta = 4.0;
  rc.use_lambertian = false;
  TrainConfig tc;
  tc.lambdas = {1.0, 0.03, 0.0, 0.0, 0.0};
  tc.zeta = rc.zeta;
  const auto pose = monostatic({0.3, 0.02, -0.01}, Vec3::Zero(), 0.3);
  const std::vector<std::size_t> bins{172, 176};
  const std::vector<cplx> target{cplx(0.02, -0.01), cplx(-0.005, 0.03)};
  const std::uint64_t key = 99;
  const auto l = compute_loss(f, rc, tc, std::vector<BatchItem>{item_for(pose, bins, target, 4)}, key);

  const std::vector<double> tof{(bins[0] + 0.5) / rc.fs, (bins[1] + 0.5) / rc.fs};
  const auto rays = sample_ellipsoid_points(pose, tof, rc.c, rc.n_rays, key, 4);
  cplx pred[2] = {0.0, 0.0};
  double sparsity = 0.0;
  for (const auto& ray : rays) {
    const double cosang = ray.dir.dot(pose.boresight);
    const double beam = cosang * cosang;
    double optical = 0.0, prev_l = 0.0, prev_rho = 0.0;
    for (int b = 0; b < 2; ++b) {
      const double l_b = rc.c * tof[b] / 2.0;  // sphere radius for a monostatic pose
      const Vec3 x = pose.tx + l_b * ray.dir;
      const cplx a = amp(x);
      if (b > 0) optical += prev_rho * (l_b - prev_l);
      const double t = std::exp(-optical);
      pred[b] += beam * t * t * a / static_cast<double>(rc.n_rays);
      prev_rho = rc.zeta * std::abs(a);
      prev_l = l_b;
      sparsity += prev_rho;
    }
  }
  const double tof_loss = std::sqrt(std::norm(pred[0] - target[0]) + std::norm(pred[1] - target[1]));
  EXPECT_NEAR(l.tof, tof_loss, 1e-12);
  EXPECT_NEAR(l.sparsity, sparsity, 1e-12);
  EXPECT_NEAR(l.total, tof_loss + 0.03 * sparsity, 1e-12);
}

TEST(Loss, ConstantMagnitudeFieldHasOnlyPhaseVariation) {
  // |sigma_DC| constant, phase k . x: density and amplitude TV vanish and
  // each phase difference is bounded by |k| delta.
  const Vec3 k(30.0, -10.0, 5.0);
  const auto f = isotropic_field(0, [k](const Vec3& x) { return std::polar(0.2, k.dot(x)); });
  RenderConfig rc;
  rc.n_rays = 5;
  rc.use_lambertian = false;
  TrainConfig tc;
  tc.tv_delta = 2e-3;
  const auto pose = monostatic({0.3, 0.0, 0.0}, Vec3::Zero(), 0.3);
  const std::vector<std::size_t> bins{170, 174, 178};
  const auto l = compute_loss(f, rc, tc, std::vector<BatchItem>{item_for(pose, bins, {0.0, 0.0, 0.0})}, 3);
  EXPECT_NEAR(l.tv_density, 0.0, 1e-12);
  EXPECT_NEAR(l.tv_amplitude, 0.0, 1e-12);
  EXPECT_GT(l.tv_phase, 0.0);
  EXPECT_LE(l.tv_phase, 15.0 * k.norm() * tc.tv_delta);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  const auto g = micro_grid(0.3);
  for (int degree : {0, 2}) {
    auto f = random_field(g, degree, 21 + degree);
    RenderConfig rc;
    rc.n_rays = 4;
    rc.zeta = 3.0;
    rc.use_lambertian = degree > 0;
    TrainConfig tc;
    tc.lambdas = {1.0, 0.02, 0.01, 0.03, 0.005};
    tc.zeta = rc.zeta;
    SensorPose p;
    p.tx = {0.02, 0.5, 0.3};
    p.rx = {-0.02, 0.5, 0.3};
    p.boresight = (-p.tx).normalized();
    p.beam_halfangle = 0.4;
    std::vector<std::size_t> bins;
    std::vector<cplx> target;
    for (std::size_t b = 160; b < 190; b += 4) {
      bins.push_back(b);
      target.emplace_back(0.05, -0.02 * static_cast<double>(b % 3));
    }
    const std::vector<BatchItem> batch{item_for(p, bins, target, 1),
                                       item_for(monostatic({0.4, 0.1, 0.2}, Vec3::Zero(), 0.4), bins, target, 2)};
    std::vector<double> grad(f.num_params(), 0.0);
    compute_loss(f, rc, tc, batch, 8, grad);
    auto loss = [&] { return compute_loss(f, rc, tc, batch, 8).total; };
    const auto probes = check_gradient(f.params(), grad, loss, 8, 3 + degree);
    ASSERT_FALSE(probes.empty());
    for (const auto& q : probes) EXPECT_LT(q.rel(), 1e-4) << "degree " << degree << " param " << q.index;
  }
}

TEST(Loss, TermsNonNegativeAndErrors) {
  const auto f = random_field(micro_grid(0.3), 1, 4, 2.0);
  RenderConfig rc;
  rc.n_rays = 4;
  TrainConfig tc;
  const auto pose = monostatic({0.3, 0.0, 0.1}, Vec3::Zero(), 0.3);
  const auto l = compute_loss(f, rc, tc, std::vector<BatchItem>{item_for(pose, {170, 180}, {1.0, -1.0})}, 1);
  for (double t : l.terms()) EXPECT_GE(t, 0.0);
  EXPECT_THROW(compute_loss(f, rc, tc, std::span<const BatchItem>{}, 1), UsageError);
  EXPECT_THROW(compute_loss(f, rc, tc, std::vector<BatchItem>{item_for(pose, {170}, {1.0, 2.0})}, 1), UsageError);
  const auto nan_field = isotropic_field(0, [](const Vec3&) { return cplx(std::nan(""), 0.0); });
  try {
    compute_loss(nan_field, rc, tc, std::vector<BatchItem>{item_for(pose, {170, 180}, {1.0, -1.0})}, 1);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError&) {
  }
}

TEST(BinSampling, SortedUniqueInRangeAndMostlyActive) {
  AnalyticSignal s{std::vector<cplx>(400, 0.0), 100e3, 0.5 / 100e3};
  for (std::size_t k = 200; k < 210; ++k) s.samples[k] = 1.0;
  KeyedRng rng(3);
  const auto b = sample_bins(s, {100, 300}, 64, 0.01, 0.1, rng);
  ASSERT_FALSE(b.empty());
  EXPECT_TRUE(std::is_sorted(b.begin(), b.end()));
  EXPECT_EQ(std::adjacent_find(b.begin(), b.end()), b.end());
  std::size_t active = 0;
  for (auto k : b) {
    EXPECT_GE(k, 100u);
    EXPECT_LE(k, 300u);
    active += k >= 200 && k < 210;
  }
  EXPECT_EQ(active, 10u);  // 58 draws over 10 active bins hit every one
  KeyedRng empty_rng(1);
  EXPECT_TRUE(sample_bins(s, {5, 4}, 10, 0.01, 0.1, empty_rng).empty());
}

TEST(BinSampling, BoxRangeCoversEveryInteriorPoint) {
  const Aabb box(Vec3::Constant(-0.05), Vec3::Constant(0.05));
  SensorPose p;
  p.tx = {0.3, 0.01, 0.2};
  p.rx = {0.3, -0.01, 0.2};
  p.boresight = (-p.tx).normalized();
  const auto [lo, hi] = bins_touching_box(p, box, 343.0, 100e3, 2048);
  KeyedRng rng(2);
  for (int i = 0; i < 500; ++i) {
    const Vec3 x(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    const auto k = static_cast<std::size_t>(std::floor(((x - p.tx).norm() + (x - p.rx).norm()) * 100e3 / 343.0));
    EXPECT_GE(k, lo);
    EXPECT_LE(k, hi);
  }
}

namespace {

struct TinyProblem {
  HashGridConfig grid = micro_grid(0.05);
  Aperture aperture;
  std::vector<AnalyticSignal> meas;
  RenderConfig rc;
  TrainConfig tc;

  explicit TinyProblem(bool zero) {
    const std::vector<double> z{0.2};
    aperture = make_circular_aperture(0.2, 8, z, Vec3::Zero(), 0.3);
    rc.n_tof_bins = 300;
    rc.use_lambertian = false;
    for (std::size_t i = 0; i < aperture.size(); ++i) {
      AnalyticSignal s{std::vector<cplx>(300, 0.0), rc.fs, 0.5 / rc.fs};
      if (!zero) {
        const auto k = static_cast<std::size_t>(std::floor(2.0 * aperture[i].tx.norm() * rc.fs / rc.c));
        s.samples[k] = 1e-3;
      }
      meas.push_back(std::move(s));
    }
    tc.lr = 1e-2;
    tc.iterations = 40;
    tc.batch_poses = 2;
    tc.bins_per_pose = 8;
    tc.rays_per_bin = 16;
    tc.checkpoint_every = 10;
    tc.seed = 7;
    tc.probe_poses = 2;
    tc.probe_bins = 8;
  }
};

}  // namespace

TEST(Train, ZeroMeasurementsDriveDensityToZero) {
  TinyProblem tp(true);
  tp.tc.iterations = 300;
  tp.tc.lr = 1e-3;
  tp.tc.lambdas = TrainConfig{}.lambdas;
  set_thread_count(1);
  const auto res = train(tp.meas, tp.aperture, NeuralField(tp.grid, 0, 1), tp.rc, tp.tc);
  EXPECT_FALSE(res.report.diverged);
  const auto d = eval_density_grid(res.field, tp.tc.zeta,
                                   grid_spec_from_bounds(Aabb(tp.grid.bbox_min, tp.grid.bbox_max), 16));
  EXPECT_LE(grid_range(d).second, 1e-3);
  EXPECT_LE(res.report.final_probe_tof, res.report.initial_probe_tof);
}

TEST(Train, DeterministicReportAtOneThread) {
  set_thread_count(1);
  TinyProblem tp(false);
  const auto a = train(tp.meas, tp.aperture, NeuralField(tp.grid, 1, 3), tp.rc, tp.tc);
  const auto b = train(tp.meas, tp.aperture, NeuralField(tp.grid, 1, 3), tp.rc, tp.tc);
  EXPECT_EQ(a.field.params(), b.field.params());
  ASSERT_EQ(a.report.records.size(), b.report.records.size());
  EXPECT_EQ(a.report.records.size(), 5u);
  for (std::size_t i = 0; i < a.report.records.size(); ++i) {
    EXPECT_EQ(a.report.records[i].iteration, b.report.records[i].iteration);
    EXPECT_EQ(a.report.records[i].batch.terms(), b.report.records[i].batch.terms());
    EXPECT_EQ(a.report.records[i].probe.terms(), b.report.records[i].probe.terms());
  }
  EXPECT_DOUBLE_EQ(a.signal_scale, 1e-3);
}

TEST(Train, CheckpointsAndValidation) {
  TinyProblem tp(false);
  std::vector<int> seen;
  train(tp.meas, tp.aperture, NeuralField(tp.grid, 0, 2), tp.rc, tp.tc,
        [&](const NeuralField&, const TrainRecord& r) { seen.push_back(r.iteration); });
  EXPECT_EQ(seen, (std::vector<int>{0, 10, 20, 30, 40}));

  auto bad = tp.tc;
  bad.lambdas[2] = -1.0;
  EXPECT_THROW(train(tp.meas, tp.aperture, NeuralField(tp.grid, 0, 2), tp.rc, bad), UsageError);
  bad = tp.tc;
  bad.tv_delta = 0.0;
  EXPECT_THROW(train(tp.meas, tp.aperture, NeuralField(tp.grid, 0, 2), tp.rc, bad), UsageError);
  auto short_ap = tp.aperture;
  short_ap.pop_back();
  EXPECT_THROW(train(tp.meas, short_ap, NeuralField(tp.grid, 0, 2), tp.rc, tp.tc), UsageError);
}

TEST(Train, LearningRateDecay) {
  TrainConfig c;
  c.lr = 1e-2;
  c.iterations = 101;
  EXPECT_EQ(lr_at(c, 1), 1e-2);
  EXPECT_EQ(lr_at(c, 101), 1e-2);
  c.lr_decay = 0.01;
  EXPECT_DOUBLE_EQ(lr_at(c, 1), 1e-2);
  EXPECT_NEAR(lr_at(c, 51), 1e-3, 1e-15);
  EXPECT_NEAR(lr_at(c, 101), 1e-4, 1e-16);
  for (int it = 2; it <= 101; ++it) EXPECT_LT(lr_at(c, it), lr_at(c, it - 1));

  TinyProblem tp(false);
  auto bad = tp.tc;
  bad.lr_decay = 0.0;
  EXPECT_THROW(train(tp.meas, tp.aperture, NeuralField(tp.grid, 0, 2), tp.rc, bad), UsageError);
  bad.lr_decay = 1.5;
  EXPECT_THROW(train(tp.meas, tp.aperture, NeuralField(tp.grid, 0, 2), tp.rc, bad), UsageError);
}
