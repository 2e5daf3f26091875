#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "shsas/signal.hpp"
#include "shsas/simulator.hpp"

using namespace shsas;

namespace {

std::vector<cplx> naive_dft(const std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  std::vector<cplx> out(n);
  const double sgn = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      acc += a[j] * std::polar(1.0, sgn * 2.0 * kPi * static_cast<double>(j * k % n) / static_cast<double>(n));
    out[k] = acc;
  }
  return out;
}

std::vector<cplx> random_complex(std::size_t n, std::uint64_t seed) {
  KeyedRng rng(seed);
  std::vector<cplx> v(n);
  for (auto& x : v) x = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return v;
}

double rel_l2(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - b[i]);
    den += std::norm(b[i]);
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST(Dft, MatchesNaiveForPowerOfTwoAndOtherSizes) {
  for (std::size_t n : {1u, 2u, 8u, 64u, 12u, 17u, 100u, 243u}) {
    const auto x = random_complex(n, n);
    EXPECT_LT(rel_l2(dft(x), naive_dft(x, false)), 1e-12) << n;
    EXPECT_LT(rel_l2(dft(x, true), naive_dft(x, true)), 1e-12) << n;
    EXPECT_LT(rel_l2(idft(dft(x)), x), 1e-12) << n;
  }
}

TEST(Tukey, EndpointsAndFlatTop) {
  const auto rect = tukey_window(16, 0.0);
  for (double w : rect) EXPECT_EQ(w, 1.0);
  const auto hann = tukey_window(33, 1.0);
  EXPECT_NEAR(hann.front(), 0.0, 1e-15);
  EXPECT_NEAR(hann.back(), 0.0, 1e-15);
  EXPECT_NEAR(hann[16], 1.0, 1e-15);
  const auto w = tukey_window(101, 0.2);
  EXPECT_NEAR(w[0], 0.0, 1e-15);
  for (int i = 10; i <= 90; ++i) EXPECT_EQ(w[i], 1.0);
  for (int i = 0; i < 50; ++i) EXPECT_NEAR(w[i], w[100 - i], 1e-14);
}

TEST(Chirp, FirstSampleIsOneWithRectangularWindow) {
  const auto p = lfm_chirp(10e3, 20e3, 1e-3, 100e3, 0.0);
  ASSERT_EQ(p.size(), 100u);
  EXPECT_EQ(p.samples[0], 1.0);
}

TEST(Chirp, SweepsTenToThirtyKilohertz) {
  const double fs = 100e3, f0 = 10e3, b = 20e3, dur = 1e-3;
  const auto p = lfm_chirp(f0, b, dur, fs, 0.0);
  // Zero-padding keeps the Hilbert transform's wrap-around away from the
  // middle of the pulse.
  std::vector<double> padded(4096, 0.0);
  std::copy(p.samples.begin(), p.samples.end(), padded.begin() + 2000);
  const auto z = to_analytic(padded, fs);
  const std::size_t mid = 2000 + p.size() / 2;
  auto inst = [&](std::size_t k) {
    // Each one-sample step advances less than half a cycle below Nyquist.
    const double d1 = wrap_angle(std::arg(z.samples[k]) - std::arg(z.samples[k - 1]));
    const double d2 = wrap_angle(std::arg(z.samples[k + 1]) - std::arg(z.samples[k]));
    return (d1 + d2) / (4.0 * kPi) * fs;
  };
  const double tol = 0.01 * fs / static_cast<double>(p.size());
  EXPECT_NEAR(inst(mid), f0 + b / 2.0, tol);
  EXPECT_NEAR(inst(2000 + 15), f0 + b * 0.15, 0.05 * f0);
  EXPECT_NEAR(inst(2000 + 85), f0 + b * 0.85, 0.05 * f0);
}

TEST(Chirp, EnergyIsHalfTheSampleCount) {
  const double fs = 100e3, dur = 2e-3;
  const auto p = lfm_chirp(10e3, 20e3, dur, fs, 0.0);
  double e = 0.0;
  for (double v : p.samples) e += v * v;
  EXPECT_NEAR(e, dur * fs / 2.0, 0.02 * dur * fs / 2.0);
}

TEST(Chirp, RejectsBadArguments) {
  EXPECT_THROW(lfm_chirp(10e3, 20e3, 0.0, 100e3, 0.1), UsageError);
  EXPECT_THROW(lfm_chirp(10e3, 20e3, 1e-3, 50e3, 0.1), UsageError);
  EXPECT_THROW(lfm_chirp(10e3, 20e3, 1e-3, 100e3, 1.5), UsageError);
}

TEST(Analytic, CosineBecomesComplexExponential) {
  const std::size_t n = 1000;
  const double fs = 1000.0, f = 50.0;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::cos(2.0 * kPi * f * static_cast<double>(i) / fs);
  const auto z = to_analytic(x, fs);
  for (std::size_t i = 0; i < n; ++i) {
    const cplx want = std::polar(1.0, 2.0 * kPi * f * static_cast<double>(i) / fs);
    EXPECT_NEAR(std::abs(z.samples[i] - want), 0.0, 1e-9);
  }
}

TEST(Analytic, ZeroInZeroOut) {
  const std::vector<double> x(37, 0.0);
  for (const auto& v : to_analytic(x, 1.0).samples) EXPECT_EQ(v, cplx(0.0, 0.0));
}

TEST(Analytic, RealPartIsBitExact) {
  for (std::size_t n : {1u, 2u, 31u, 128u, 1000u}) {
    KeyedRng rng(n, 3);
    std::vector<double> x(n);
    for (auto& v : x) v = rng.uniform(-5, 5);
    const auto z = to_analytic(x, 1e5);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(z.samples[i].real(), x[i]);
  }
}

TEST(Analytic, Linearity) {
  KeyedRng rng(11);
  std::vector<double> a(64), b(64), s(64);
  for (std::size_t i = 0; i < 64; ++i) {
    a[i] = rng.uniform(-1, 1);
    b[i] = rng.uniform(-1, 1);
    s[i] = 2.0 * a[i] - 3.0 * b[i];
  }
  const auto za = to_analytic(a, 1.0), zb = to_analytic(b, 1.0), zs = to_analytic(s, 1.0);
  for (std::size_t i = 0; i < 64; ++i)
    EXPECT_NEAR(std::abs(zs.samples[i] - (2.0 * za.samples[i] - 3.0 * zb.samples[i])), 0.0, 1e-12);
}

TEST(Deconvolve, ImpulsePulseRecoversInput) {
  Pulse p{{1.0}, 1.0, 0.0, 0.0, 0.0};
  AnalyticSignal s{random_complex(64, 5), 1.0, 0.0};
  DeconvConfig cfg;
  cfg.lambda1 = cfg.lambda2 = 0.0;
  cfg.iterations = 3000;
  cfg.lr = 1e-2;
  const auto x = pulse_deconvolve(s, p, cfg);
  EXPECT_LE(rel_l2(x.samples, s.samples), 1e-3);
}

TEST(Deconvolve, ZeroInputStaysZero) {
  const auto p = lfm_chirp(10e3, 20e3, 1e-3, 100e3, 0.1);
  AnalyticSignal s{std::vector<cplx>(256, 0.0), 100e3, 0.0};
  const auto x = pulse_deconvolve(s, p);
  double e = 0.0;
  for (const auto& v : x.samples) e += std::norm(v);
  EXPECT_LE(std::sqrt(e), 1e-6);
}

TEST(Deconvolve, ObjectiveDecreases) {
  const auto p = lfm_chirp(10e3, 20e3, 1e-3, 100e3, 0.1);
  std::vector<double> h(256, 0.0);
  h[60] = 1.0;
  const auto s = to_analytic(render_measurement(h, p, std::nullopt, 0), 100e3);
  DeconvConfig cfg;
  cfg.iterations = 300;
  cfg.lr = 1e-2;
  const auto r = pulse_deconvolve_report(s, p, cfg);
  EXPECT_LT(r.final_objective, 0.1 * r.initial_objective);
}

TEST(Deconvolve, RecoversThreeSpikesAtTwentyDecibels) {
  const double fs = 100e3;
  const auto p = lfm_chirp(10e3, 20e3, 1e-3, fs, 0.1);
  const std::vector<std::size_t> truth{90, 170, 300};
  const std::vector<double> amp{1.0, -0.7, 0.5};
  std::vector<double> h(512, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) h[truth[i]] = amp[i];
  const auto s = to_analytic(render_measurement(h, p, 20.0, 7), fs);
  DeconvConfig cfg;
  cfg.iterations = 1500;
  cfg.lr = 1e-2;
  const auto x = pulse_deconvolve(s, p, cfg);

  // Three strongest local peaks, suppressing +-5 bins around each pick.
  std::vector<double> mag(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) mag[k] = std::abs(x.samples[k]);
  std::vector<std::size_t> picks;
  for (int n = 0; n < 3; ++n) {
    const auto it = std::max_element(mag.begin(), mag.end());
    const auto k = static_cast<std::size_t>(it - mag.begin());
    picks.push_back(k);
    for (std::size_t j = (k >= 5 ? k - 5 : 0); j < std::min(mag.size(), k + 6); ++j) mag[j] = -1.0;
  }
  for (std::size_t t : truth) {
    bool found = false;
    for (std::size_t k : picks) found |= (k + 2 >= t && k <= t + 2);
    EXPECT_TRUE(found) << "spike at " << t;
  }
}

TEST(Deconvolve, RejectsBadInput) {
  const auto p = lfm_chirp(10e3, 20e3, 1e-3, 100e3, 0.1);
  AnalyticSignal shortsig{std::vector<cplx>(10, 0.0), 100e3, 0.0};
  EXPECT_THROW(pulse_deconvolve(shortsig, p), UsageError);
  AnalyticSignal bad{std::vector<cplx>(200, 0.0), 100e3, 0.0};
  bad.samples[3] = {std::nan(""), 0.0};
  EXPECT_THROW(pulse_deconvolve(bad, p), DataError);
  DeconvConfig cfg;
  cfg.iterations = 0;
  EXPECT_THROW(pulse_deconvolve(AnalyticSignal{std::vector<cplx>(200, 0.0), 1, 0}, p, cfg), UsageError);
}
