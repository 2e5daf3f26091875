#pragma once

// Time-resolved forward model. For every requested ToF bin a fan of TX rays
// is intersected with the bin's constant-ToF ellipsoid; each hit adds
//   (1/n_rays) b_T b_R T(o_T,x) T(x,o_R) sigma_s(x, dir(x - o_R)) g(x)
// to the bin. Transmission accumulates front-to-back along the ray's sample
// chain. render_pose keeps everything backward_pose needs to produce exact
// parameter gradients.

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shsas/core.hpp"
#include "shsas/geometry.hpp"
#include "shsas/neuralfield.hpp"
#include "shsas/shbasis.hpp"
#include "shsas/signal.hpp"

namespace shsas {

using Aabb = Eigen::AlignedBox3d;

enum class BeamKind { cosine_power, uniform };

struct BeamPattern {
  BeamKind kind = BeamKind::cosine_power;
  double exponent = 2.0;
  double halfangle = kPi / 6.0;
};

inline double beam_weight(const BeamPattern& bp, const Vec3& boresight, const Vec3& origin, const Vec3& x) {
  const Vec3 v = x - origin;
  const double n = v.norm();
  if (!(n > 0.0)) throw UsageError("beam_weight: point coincides with the beam origin");
  const double cos_psi = std::clamp(boresight.dot(v) / n, -1.0, 1.0);
  if (std::acos(cos_psi) > bp.halfangle) return 0.0;
  if (bp.kind == BeamKind::uniform) return 1.0;
  return std::pow(std::max(0.0, cos_psi), bp.exponent);
}

inline double lambertian(const Vec3& n, const Vec3& x, const Vec3& tx) {
  const Vec3 v = tx - x;
  const double len = v.norm();
  if (!(len > 0.0)) throw UsageError("lambertian: point coincides with the transmitter");
  return std::max(0.0, n.dot(v) / len);
}

struct RenderConfig {
  std::size_t n_rays = 64;
  std::size_t n_tof_bins = 2048;
  double zeta = 20.0;
  double normal_step = 1e-3;
  double c = 343.0;
  double fs = 100e3;
  BeamPattern tx_beam{BeamKind::cosine_power, 2.0, kPi / 6.0};
  BeamPattern rx_beam{BeamKind::uniform, 0.0, kPi};
  bool use_lambertian = true;
  bool exact_rx_leg = false;
  int rx_leg_steps = 16;
  std::uint64_t seed = 0;
  // Samples outside this box are treated as empty space.
  std::optional<Aabb> bounds;
};

// Bin k integrates travel times in [k, k+1) / fs; its ellipsoid is taken at
// the bin center.
inline double bin_time(std::size_t k, double fs) { return (static_cast<double>(k) + 0.5) / fs; }

inline void validate(const RenderConfig& cfg) {
  if (cfg.n_rays < 1 || cfg.n_tof_bins < 1 || !(cfg.c > 0.0) || !(cfg.fs > 0.0) || cfg.zeta < 0.0 ||
      !(cfg.normal_step > 0.0) || cfg.rx_leg_steps < 1)
    throw UsageError("RenderConfig: invalid settings");
}

// The TX cut-off follows the pose's beam; RX keeps its configured pattern.
inline BeamPattern tx_pattern(const RenderConfig& cfg, const SensorPose& pose) {
  BeamPattern bp = cfg.tx_beam;
  bp.halfangle = pose.beam_halfangle;
  return bp;
}

template <typename Field>
struct QueryRecord {
  typename Field::Tape tape{};
  std::array<double, kMaxOutputs> raw{};
  std::array<double, kMaxOutputs> dout{};
};

template <typename Field>
struct SampleRecord {
  std::size_t slot = 0;  // index into the requested bin list
  double l = 0.0;
  Vec3 x;
  QueryRecord<Field> main;
  std::array<double, 16> basis{};
  cplx sigma = 0.0;
  cplx dc = 0.0;
  double rho = 0.0;
  double beam = 0.0;
  double trans_tx = 1.0;
  double trans_rx = 1.0;
  double g = 1.0;
  bool g_active = false;
  Vec3 grad_mag = Vec3::Zero();
  Vec3 to_tx = Vec3::Zero();
  std::vector<QueryRecord<Field>> fd;  // +x, -x, +y, -y, +z, -z
  std::vector<QueryRecord<Field>> rx_leg;
  double rx_step = 0.0;
};

template <typename Field>
struct RayRecord {
  std::vector<SampleRecord<Field>> samples;
};

template <typename Field>
struct PoseRecord {
  std::vector<RayRecord<Field>> rays;
  std::vector<cplx> prediction;
  double inv_rays = 0.0;
  // Additional queries whose output gradients the caller fills in (e.g.
  // regularizer probes); backward_pose pushes them through the field too.
  std::vector<QueryRecord<Field>> extras;
};

namespace detail {

// d|dc| / d(raw outputs) pushed into dout with weight `scale`.
inline void add_dc_magnitude_grad(std::span<double> dout, cplx dc, int nc, double scale) {
  const double a = std::abs(dc);
  if (!(a > 0.0) || scale == 0.0) return;
  dout[0] += scale * (dc.real() / a) * kInvSqrt4Pi;
  dout[static_cast<std::size_t>(nc)] += scale * (dc.imag() / a) * kInvSqrt4Pi;
}

inline bool inside(const std::optional<Aabb>& box, const Vec3& x) { return !box || box->contains(x); }

}  // namespace detail

template <typename Field>
PoseRecord<Field> render_pose(const Field& field, const RenderConfig& cfg, const SensorPose& pose,
                              std::span<const std::size_t> bins, std::uint64_t seed, std::uint64_t pose_index,
                              bool record = true) {
  validate(cfg);
  const int nc = sh_count(field.degree());
  const auto nout = static_cast<std::size_t>(2 * nc);
  std::vector<double> tof(bins.size());
  for (std::size_t i = 0; i < bins.size(); ++i) tof[i] = bin_time(bins[i], cfg.fs);

  PoseRecord<Field> rec;
  rec.prediction.assign(bins.size(), 0.0);
  rec.inv_rays = 1.0 / static_cast<double>(cfg.n_rays);
  const BeamPattern txb = tx_pattern(cfg, pose);
  const double h = cfg.normal_step;

  auto rays = sample_ellipsoid_points(pose, tof, cfg.c, cfg.n_rays, seed, pose_index);
  rec.rays.resize(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    auto& out = rec.rays[r].samples;
    out.reserve(rays[r].samples.size());
    for (const auto& s : rays[r].samples) {
      if (!detail::inside(cfg.bounds, s.point)) continue;
      const Vec3 from_rx = s.point - pose.rx;
      if (!(from_rx.norm() > 0.0)) continue;
      SampleRecord<Field> sr;
      sr.slot = s.bin;
      sr.l = s.l;
      sr.x = s.point;
      field.query(sr.x, std::span<double>(sr.main.raw.data(), nout), &sr.main.tape);
      sr.dc = dc_from_raw(sr.main.raw, field.degree());
      sr.rho = std::abs(sr.dc) * cfg.zeta;
      sr.basis = sh_basis_unit(field.degree(), from_rx.normalized());
      cplx sig = 0.0;
      for (int k = 0; k < nc; ++k) sig += cplx(sr.main.raw[k], sr.main.raw[k + nc]) * sr.basis[k];
      sr.sigma = sig;
      sr.beam = beam_weight(txb, pose.boresight, pose.tx, sr.x) * beam_weight(cfg.rx_beam, pose.boresight, pose.rx, sr.x);

      if (cfg.use_lambertian) {
        sr.fd.resize(6);
        std::array<double, 6> mag{};
        for (int q = 0; q < 6; ++q) {
          Vec3 p = sr.x;
          p[q / 2] += (q % 2 == 0) ? h : -h;
          field.query(p, std::span<double>(sr.fd[q].raw.data(), nout), &sr.fd[q].tape);
          mag[q] = std::abs(dc_from_raw(sr.fd[q].raw, field.degree()));
        }
        for (int a = 0; a < 3; ++a) sr.grad_mag[a] = (mag[2 * a] - mag[2 * a + 1]) / (2.0 * h);
        const double gn = sr.grad_mag.norm();
        sr.to_tx = (pose.tx - sr.x).normalized();
        if (gn >= kFlatGradient) {
          const double dot = -sr.grad_mag.dot(sr.to_tx) / gn;
          sr.g = std::max(0.0, dot);
          sr.g_active = dot > 0.0;
        } else {
          sr.g = 1.0;
        }
      }

      if (cfg.exact_rx_leg) {
        const Vec3 seg = pose.rx - sr.x;
        const int steps = cfg.rx_leg_steps;
        sr.rx_step = seg.norm() / steps;
        sr.rx_leg.resize(static_cast<std::size_t>(steps));
        double optical = 0.0;
        for (int k = 0; k < steps; ++k) {
          const Vec3 p = sr.x + seg * ((k + 0.5) / steps);
          auto& q = sr.rx_leg[static_cast<std::size_t>(k)];
          if (!detail::inside(cfg.bounds, p)) continue;
          field.query(p, std::span<double>(q.raw.data(), nout), &q.tape);
          optical += std::abs(dc_from_raw(q.raw, field.degree())) * cfg.zeta * sr.rx_step;
        }
        sr.trans_rx = std::exp(-optical);
      }
      out.push_back(std::move(sr));
    }

    double optical = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto& sr = out[i];
      sr.trans_tx = std::exp(-optical);
      if (!cfg.exact_rx_leg) sr.trans_rx = sr.trans_tx;
      if (i + 1 < out.size()) optical += sr.rho * std::abs(out[i + 1].l - sr.l);
      const double w = rec.inv_rays * sr.beam * sr.trans_tx * sr.trans_rx * sr.g;
      rec.prediction[sr.slot] += w * sr.sigma;
    }
    if (!record) std::vector<SampleRecord<Field>>().swap(out);
  }
  for (const auto& v : rec.prediction)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw DivergenceError("render: non-finite field output for pose " + std::to_string(pose_index));
  return rec;
}

// Back-propagates d(loss)/d(prediction) (as d/dRe + j d/dIm per bin), plus any
// gradients already stored in the records' dout, into grad.
template <typename Field>
void backward_pose(const Field& field, const RenderConfig& cfg, PoseRecord<Field>& rec,
                   std::span<const cplx> dpred, std::span<double> grad) {
  const int nc = sh_count(field.degree());
  const auto nout = static_cast<std::size_t>(2 * nc);
  const double h = cfg.normal_step;
  for (auto& ray : rec.rays) {
    auto& ss = ray.samples;
    const std::size_t n = ss.size();
    std::vector<double> d_optical(n, 0.0);  // dL / d(optical depth before sample i)
    for (std::size_t i = 0; i < n; ++i) {
      auto& sr = ss[i];
      const cplx gpred = dpred[sr.slot];
      const double a = rec.inv_rays * sr.beam;
      if (a == 0.0 || (gpred.real() == 0.0 && gpred.imag() == 0.0)) continue;
      const double w = a * sr.trans_tx * sr.trans_rx * sr.g;
      for (int k = 0; k < nc; ++k) {
        sr.main.dout[k] += w * sr.basis[k] * gpred.real();
        sr.main.dout[k + nc] += w * sr.basis[k] * gpred.imag();
      }
      const double q = gpred.real() * sr.sigma.real() + gpred.imag() * sr.sigma.imag();
      const double d_ttx = q * a * sr.trans_rx * sr.g;
      const double d_trx = q * a * sr.trans_tx * sr.g;
      const double d_g = q * a * sr.trans_tx * sr.trans_rx;
      if (cfg.exact_rx_leg) {
        d_optical[i] += -sr.trans_tx * d_ttx;
        const double d_opt_rx = -sr.trans_rx * d_trx;
        for (auto& qr : sr.rx_leg)
          detail::add_dc_magnitude_grad(qr.dout, dc_from_raw(qr.raw, field.degree()), nc,
                                        d_opt_rx * cfg.zeta * sr.rx_step);
      } else {
        d_optical[i] += -sr.trans_tx * (d_ttx + d_trx);
      }
      if (cfg.use_lambertian && sr.g_active && d_g != 0.0) {
        const double gn = sr.grad_mag.norm();
        const Vec3 ghat = sr.grad_mag / gn;
        const Vec3 dG = -(sr.to_tx - ghat.dot(sr.to_tx) * ghat) / gn * d_g;
        for (int ax = 0; ax < 3; ++ax) {
          const double dm = dG[ax] / (2.0 * h);
          detail::add_dc_magnitude_grad(sr.fd[2 * ax].dout, dc_from_raw(sr.fd[2 * ax].raw, field.degree()), nc, dm);
          detail::add_dc_magnitude_grad(sr.fd[2 * ax + 1].dout, dc_from_raw(sr.fd[2 * ax + 1].raw, field.degree()),
                                        nc, -dm);
        }
      }
    }
    // optical(i) = sum_{j<i} rho_j |l_{j+1} - l_j|
    double suffix = 0.0;
    for (std::size_t j = n; j-- > 0;) {
      if (j + 1 < n) {
        suffix += d_optical[j + 1];
        const double drho = suffix * std::abs(ss[j + 1].l - ss[j].l);
        detail::add_dc_magnitude_grad(ss[j].main.dout, ss[j].dc, nc, drho * cfg.zeta);
      }
    }
    for (auto& sr : ss) {
      field.backward(sr.main.tape, std::span<const double>(sr.main.dout.data(), nout), grad);
      for (auto& q : sr.fd) field.backward(q.tape, std::span<const double>(q.dout.data(), nout), grad);
      for (auto& q : sr.rx_leg) field.backward(q.tape, std::span<const double>(q.dout.data(), nout), grad);
    }
  }
  for (auto& q : rec.extras) field.backward(q.tape, std::span<const double>(q.dout.data(), nout), grad);
}

// Synthesized complex transient at the requested bins.
template <typename Field>
std::vector<cplx> synthesize_transient(const Field& field, const RenderConfig& cfg, const SensorPose& pose,
                                       std::span<const std::size_t> bins, std::uint64_t pose_index = 0) {
  return render_pose(field, cfg, pose, bins, cfg.seed, pose_index, false).prediction;
}

// Full trace over bins [0, n_tof_bins), as an analytic signal on the bin grid.
template <typename Field>
AnalyticSignal render_trace(const Field& field, const RenderConfig& cfg, const SensorPose& pose,
                            std::uint64_t pose_index = 0) {
  std::vector<std::size_t> bins(cfg.n_tof_bins);
  for (std::size_t k = 0; k < bins.size(); ++k) bins[k] = k;
  AnalyticSignal out;
  out.fs = cfg.fs;
  out.t0 = bin_time(0, cfg.fs);
  out.samples = synthesize_transient(field, cfg, pose, bins, pose_index);
  return out;
}

// Transient at a pose that need not belong to the training aperture. Same
// computation as render_trace.
template <typename Field>
AnalyticSignal synthesize_novel_view(const Field& field, const RenderConfig& cfg, const SensorPose& pose,
                                     std::uint64_t pose_index = 0) {
  return render_trace(field, cfg, pose, pose_index);
}

// T(origin, x_i) = prod_{j<i} exp(-rho_j |l_{j+1} - l_j|) over ordered samples.
template <typename Field>
std::vector<double> transmission(const Field& field, double zeta, std::span<const Vec3> points,
                                 std::span<const double> l) {
  if (points.size() != l.size()) throw UsageError("transmission: points and arclengths differ in length");
  for (std::size_t i = 1; i < l.size(); ++i)
    if (!(l[i] > l[i - 1])) throw UsageError("transmission: arclengths must increase strictly");
  std::vector<double> t(points.size(), 1.0);
  double optical = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    t[i] = std::exp(-optical);
    if (i + 1 < points.size()) optical += density(field, points[i], zeta) * std::abs(l[i + 1] - l[i]);
  }
  return t;
}

}  // namespace shsas
