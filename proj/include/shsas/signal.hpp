#pragma once

// Transmit waveforms, analytic-signal conversion and pulse deconvolution.

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include "shsas/adam.hpp"
#include "shsas/core.hpp"

namespace shsas {

struct Pulse {
  std::vector<double> samples;
  double fs = 0.0;
  double f0 = 0.0;
  double bandwidth = 0.0;
  double duration = 0.0;

  std::size_t size() const { return samples.size(); }
};

// Complex time series; sample k sits at time t0 + k / fs.
struct AnalyticSignal {
  std::vector<cplx> samples;
  double fs = 0.0;
  double t0 = 0.0;

  std::size_t size() const { return samples.size(); }
  double time(std::size_t k) const { return t0 + static_cast<double>(k) / fs; }
};

struct DeconvConfig {
  double lambda1 = 1e-4;  // sparsity
  double lambda2 = 1e-4;  // phase smoothness
  int iterations = 2000;
  double lr = 1e-3;
};

// ---------------------------------------------------------------------------
// Discrete Fourier transform. Power-of-two sizes use an iterative radix-2
// FFT; every other size goes through Bluestein's chirp-z identity.

namespace detail {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    std::vector<cplx> tw(half);
    for (std::size_t k = 0; k < half; ++k)
      tw[k] = std::polar(1.0, ang * static_cast<double>(k));
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + half] * tw[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

}  // namespace detail

// Unnormalized forward (inverse=false) or backward transform of any length.
inline std::vector<cplx> dft(std::vector<cplx> a, bool inverse = false) {
  const std::size_t n = a.size();
  if (n <= 1) return a;
  if (detail::is_pow2(n)) {
    detail::fft_pow2(a, inverse);
    return a;
  }
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cplx> w(n);
  const std::uint64_t two_n = 2 * static_cast<std::uint64_t>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t kk = (static_cast<std::uint64_t>(k) * k) % two_n;
    w[k] = std::polar(1.0, sign * kPi * static_cast<double>(kk) / static_cast<double>(n));
  }
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  std::vector<cplx> fa(m, 0.0), fb(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * w[k];
  fb[0] = std::conj(w[0]);
  for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(w[k]);
  detail::fft_pow2(fa, false);
  detail::fft_pow2(fb, false);
  for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
  detail::fft_pow2(fa, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * inv_m * w[k];
  return a;
}

inline std::vector<cplx> idft(std::vector<cplx> a) {
  const double inv = a.empty() ? 1.0 : 1.0 / static_cast<double>(a.size());
  a = dft(std::move(a), true);
  for (auto& v : a) v *= inv;
  return a;
}

// ---------------------------------------------------------------------------

// Tukey window: a cosine taper over fraction `ratio` of the length, flat in
// the middle. ratio 0 is rectangular, ratio 1 is a Hann window.
inline std::vector<double> tukey_window(std::size_t n, double ratio) {
  std::vector<double> w(n, 1.0);
  if (n < 2 || ratio <= 0.0) return w;
  ratio = std::min(ratio, 1.0);
  const double last = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / last;
    if (x < ratio / 2.0)
      w[i] = 0.5 * (1.0 + std::cos(2.0 * kPi / ratio * (x - ratio / 2.0)));
    else if (x > 1.0 - ratio / 2.0)
      w[i] = 0.5 * (1.0 + std::cos(2.0 * kPi / ratio * (x - 1.0 + ratio / 2.0)));
  }
  return w;
}

// Real linear-frequency-modulated chirp sweeping f0 .. f0 + bandwidth.
inline Pulse lfm_chirp(double f0, double bandwidth, double duration, double fs, double tukey_ratio) {
  if (!(duration > 0.0)) throw UsageError("lfm_chirp: duration must be positive");
  if (!(f0 > 0.0) || !(bandwidth > 0.0))
    throw UsageError("lfm_chirp: start frequency and bandwidth must be positive");
  if (!(fs >= 2.0 * (f0 + bandwidth)))
    throw UsageError("lfm_chirp: sample rate below Nyquist for f0 + bandwidth");
  if (tukey_ratio < 0.0 || tukey_ratio > 1.0)
    throw UsageError("lfm_chirp: tukey ratio must lie in [0, 1]");

  const auto n = static_cast<std::size_t>(std::llround(duration * fs));
  if (n == 0) throw UsageError("lfm_chirp: duration shorter than one sample");
  const double alpha = bandwidth / duration;
  const auto w = tukey_window(n, tukey_ratio);
  Pulse p{std::vector<double>(n), fs, f0, bandwidth, duration};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    p.samples[i] = w[i] * std::cos(2.0 * kPi * (f0 * t + 0.5 * alpha * t * t));
  }
  return p;
}

// x + j H(x), with H the discrete Hilbert transform from the one-sided
// spectrum. The real part is copied from the input unchanged.
inline AnalyticSignal to_analytic(std::span<const double> x, double fs, double t0 = 0.0) {
  if (x.empty()) throw UsageError("to_analytic: empty input");
  const std::size_t n = x.size();
  AnalyticSignal out{std::vector<cplx>(n), fs, t0};
  if (n == 1) {
    out.samples[0] = x[0];
    return out;
  }
  std::vector<cplx> spec(x.begin(), x.end());
  spec = dft(std::move(spec));
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < n; ++k) {
    if (k < (n + 1) / 2)
      spec[k] *= 2.0;
    else if (!(n % 2 == 0 && k == half))
      spec[k] = 0.0;
  }
  const auto z = idft(std::move(spec));
  for (std::size_t k = 0; k < n; ++k) out.samples[k] = cplx(x[k], z[k].imag());
  return out;
}

// Causal convolution of x with the pulse, truncated to len(x).
inline std::vector<cplx> convolve_pulse(std::span<const cplx> x, std::span<const double> p) {
  const std::size_t n = x.size();
  std::vector<cplx> y(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t mmax = std::min(p.size(), k + 1);
    double re = 0.0, im = 0.0;
    for (std::size_t m = 0; m < mmax; ++m) {
      re += p[m] * x[k - m].real();
      im += p[m] * x[k - m].imag();
    }
    y[k] = {re, im};
  }
  return y;
}

struct DeconvResult {
  AnalyticSignal signal;
  std::vector<double> objective_trace;  // normalized objective at checkpoints
  double initial_objective = 0.0;
  double final_objective = 0.0;
  double data_term = 0.0;      // ||x * p - s||^2 in input units
  double input_energy = 0.0;   // ||s||^2
};

namespace detail {

struct DeconvTerms {
  double data = 0.0;
  double sparsity = 0.0;
  double phase = 0.0;
};

inline constexpr double kPhaseFloor = 1e-12;

// Objective terms and (optionally) the gradient wrt interleaved re/im of x.
inline DeconvTerms deconv_objective(std::span<const cplx> x, std::span<const double> p,
                                    std::span<const cplx> s, double lambda1, double lambda2,
                                    std::vector<double>* grad) {
  const std::size_t n = x.size();
  DeconvTerms terms;
  auto r = convolve_pulse(x, p);
  for (std::size_t k = 0; k < n; ++k) {
    r[k] -= s[k];
    terms.data += std::norm(r[k]);
  }
  if (grad) {
    grad->assign(2 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t mmax = std::min(p.size(), n - i);
      double re = 0.0, im = 0.0;
      for (std::size_t m = 0; m < mmax; ++m) {
        re += p[m] * r[i + m].real();
        im += p[m] * r[i + m].imag();
      }
      (*grad)[2 * i] = 2.0 * re;
      (*grad)[2 * i + 1] = 2.0 * im;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::abs(x[i]);
    terms.sparsity += a;
    if (grad && lambda1 > 0.0 && a > 0.0) {
      (*grad)[2 * i] += lambda1 * x[i].real() / a;
      (*grad)[2 * i + 1] += lambda1 * x[i].imag() / a;
    }
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a0 = std::abs(x[i]);
    const double a1 = std::abs(x[i + 1]);
    if (a0 < kPhaseFloor || a1 < kPhaseFloor) continue;
    const double diff = wrap_angle(std::arg(x[i + 1]) - std::arg(x[i]));
    terms.phase += std::abs(diff);
    if (grad && lambda2 > 0.0 && diff != 0.0) {
      const double sgn = diff > 0.0 ? lambda2 : -lambda2;
      // d arg(z) / d re = -im/|z|^2, d arg(z) / d im = re/|z|^2
      (*grad)[2 * (i + 1)] += sgn * (-x[i + 1].imag() / (a1 * a1));
      (*grad)[2 * (i + 1) + 1] += sgn * (x[i + 1].real() / (a1 * a1));
      (*grad)[2 * i] -= sgn * (-x[i].imag() / (a0 * a0));
      (*grad)[2 * i + 1] -= sgn * (x[i].real() / (a0 * a0));
    }
  }
  return terms;
}

}  // namespace detail

// Recovers a temporally compact complex trace x with x * p ~= s by Adam on
// ||x * p - s||^2 + lambda1 ||x||_1 + lambda2 ||grad arg x||_1, with x
// parameterized directly per sample. The problem is solved on s scaled to
// unit peak magnitude and the result is scaled back.
inline DeconvResult pulse_deconvolve_report(const AnalyticSignal& s, const Pulse& p,
                                            const DeconvConfig& cfg) {
  if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0 || cfg.iterations < 1 || !(cfg.lr > 0.0))
    throw UsageError("pulse_deconvolve: invalid configuration");
  if (p.samples.empty()) throw UsageError("pulse_deconvolve: empty pulse");
  if (s.size() < p.size()) throw UsageError("pulse_deconvolve: signal shorter than pulse");
  for (const auto& v : s.samples)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw DataError("pulse_deconvolve: non-finite input sample");

  const std::size_t n = s.size();
  DeconvResult res;
  res.signal = AnalyticSignal{std::vector<cplx>(n, 0.0), s.fs, s.t0};
  double scale = 0.0;
  for (const auto& v : s.samples) {
    scale = std::max(scale, std::abs(v));
    res.input_energy += std::norm(v);
  }
  if (scale == 0.0) return res;

  std::vector<cplx> target(n);
  for (std::size_t k = 0; k < n; ++k) target[k] = s.samples[k] / scale;

  std::vector<double> params(2 * n, 0.0), grad;
  auto view = [&] {
    return std::span<const cplx>(reinterpret_cast<const cplx*>(params.data()), n);
  };
  AdamState adam(params.size(), cfg.lr);
  const int every = std::max(1, cfg.iterations / 20);
  auto total = [&](const detail::DeconvTerms& t) {
    return t.data + cfg.lambda1 * t.sparsity + cfg.lambda2 * t.phase;
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    const auto terms = detail::deconv_objective(view(), p.samples, target, cfg.lambda1, cfg.lambda2, &grad);
    const double obj = total(terms);
    if (!std::isfinite(obj))
      throw DivergenceError("pulse_deconvolve: objective diverged at iteration " + std::to_string(it));
    if (it == 0) res.initial_objective = obj;
    if (it % every == 0) res.objective_trace.push_back(obj);
    adam_step(adam, params, grad);
    for (double v : params)
      if (!std::isfinite(v))
        throw DivergenceError("pulse_deconvolve: non-finite iterate at iteration " + std::to_string(it));
  }
  const auto terms = detail::deconv_objective(view(), p.samples, target, cfg.lambda1, cfg.lambda2, nullptr);
  res.final_objective = total(terms);
  res.objective_trace.push_back(res.final_objective);
  res.data_term = terms.data * scale * scale;
  const auto x = view();
  for (std::size_t k = 0; k < n; ++k) res.signal.samples[k] = x[k] * scale;
  return res;
}

inline AnalyticSignal pulse_deconvolve(const AnalyticSignal& s, const Pulse& p, const DeconvConfig& cfg = {}) {
  return pulse_deconvolve_report(s, p, cfg).signal;
}

}  // namespace shsas
