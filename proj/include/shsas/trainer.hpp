#pragma once

// Analysis-by-synthesis fitting of a neural field to deconvolved transients.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "shsas/adam.hpp"
#include "shsas/core.hpp"
#include "shsas/geometry.hpp"
#include "shsas/neuralfield.hpp"
#include "shsas/renderer.hpp"
#include "shsas/signal.hpp"

namespace shsas {

struct TrainConfig {
  // tof, sparsity, density TV, amplitude TV, phase TV
  std::array<double, 5> lambdas{1.0, 1e-5, 1e-5, 1e-5, 1e-5};
  double lr = 1e-3;
  // Final lr as a fraction of lr; exponential in between.
  double lr_decay = 1.0;
  int iterations = 500;
  std::size_t batch_poses = 4;
  std::size_t bins_per_pose = 32;
  std::size_t rays_per_bin = 32;
  double tv_delta = 2e-3;
  double zeta = 20.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 50;
  double active_threshold = 0.01;  // of the trace max
  double uniform_fraction = 0.1;
  std::size_t probe_poses = 8;
  std::size_t probe_bins = 64;
  // Targets are divided by this before fitting; 0 picks the largest
  // measured magnitude.
  double signal_scale = 0.0;
};

inline void validate(const TrainConfig& cfg) {
  for (double l : cfg.lambdas)
    if (!(l >= 0.0)) throw UsageError("train: lambdas must be non-negative");
  if (cfg.iterations < 1) throw UsageError("train: iterations must be >= 1");
  if (!(cfg.tv_delta > 0.0)) throw UsageError("train: tv_delta must be positive");
  if (!(cfg.lr > 0.0)) throw UsageError("train: lr must be positive");
  if (!(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) throw UsageError("train: lr_decay must lie in (0, 1]");
  if (!(cfg.zeta >= 0.0)) throw UsageError("train: zeta must be non-negative");
  if (cfg.batch_poses < 1 || cfg.bins_per_pose < 1 || cfg.rays_per_bin < 1)
    throw UsageError("train: batch_poses, bins_per_pose and rays_per_bin must be >= 1");
  if (cfg.checkpoint_every < 1) throw UsageError("train: checkpoint_every must be >= 1");
  if (!(cfg.uniform_fraction >= 0.0 && cfg.uniform_fraction <= 1.0))
    throw UsageError("train: uniform_fraction must lie in [0, 1]");
  if (!(cfg.signal_scale >= 0.0)) throw UsageError("train: signal_scale must be non-negative");
}

struct LossBreakdown {
  double tof = 0.0;
  double sparsity = 0.0;
  double tv_density = 0.0;
  double tv_amplitude = 0.0;
  double tv_phase = 0.0;
  double total = 0.0;

  static constexpr std::array<const char*, 5> kNames{"tof", "sparsity", "tv_density", "tv_amplitude", "tv_phase"};

  std::array<double, 5> terms() const { return {tof, sparsity, tv_density, tv_amplitude, tv_phase}; }

  LossBreakdown& operator+=(const LossBreakdown& o) {
    tof += o.tof;
    sparsity += o.sparsity;
    tv_density += o.tv_density;
    tv_amplitude += o.tv_amplitude;
    tv_phase += o.tv_phase;
    total += o.total;
    return *this;
  }
};

// One pose of a batch: measured values at the sampled bins.
struct BatchItem {
  SensorPose pose;
  std::uint64_t pose_index = 0;
  std::vector<std::size_t> bins;  // ascending
  std::vector<cplx> target;
};

namespace detail {

template <typename Field>
LossBreakdown item_loss(const Field& field, const RenderConfig& rcfg, const TrainConfig& cfg, const BatchItem& item,
                        std::uint64_t key, std::span<double> grad) {
  const int nc = sh_count(field.degree());
  const auto nout = static_cast<std::size_t>(2 * nc);
  const auto& lam = cfg.lambdas;
  const bool want_grad = !grad.empty();
  auto rec = render_pose(field, rcfg, item.pose, item.bins, key, item.pose_index);

  LossBreakdown out;
  std::vector<cplx> dpred(item.bins.size(), 0.0);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < item.bins.size(); ++i) norm2 += std::norm(rec.prediction[i] - item.target[i]);
  out.tof = std::sqrt(norm2);
  if (out.tof > 0.0)
    for (std::size_t i = 0; i < item.bins.size(); ++i) dpred[i] = lam[0] * (rec.prediction[i] - item.target[i]) / out.tof;

  const bool tv = lam[2] > 0.0 || lam[3] > 0.0 || lam[4] > 0.0;
  for (std::size_t r = 0; r < rec.rays.size(); ++r) {
    auto& samples = rec.rays[r].samples;
    for (std::size_t s = 0; s < samples.size(); ++s) {
      auto& sr = samples[s];
      out.sparsity += sr.rho;
      if (want_grad) add_dc_magnitude_grad(sr.main.dout, sr.dc, nc, lam[1] * rcfg.zeta);
      if (!tv) continue;

      KeyedRng rng(key ^ 0x7476ULL, item.pose_index, r, s);
      const Vec3 xp = sr.x + cfg.tv_delta * rng.unit_vector();
      QueryRecord<Field> q;
      field.query(xp, std::span<double>(q.raw.data(), nout), want_grad ? &q.tape : nullptr);
      const cplx dcp = dc_from_raw(q.raw, field.degree());
      const double a0 = std::abs(sr.dc), a1 = std::abs(dcp);

      const double drho = rcfg.zeta * (a1 - a0);
      out.tv_density += std::abs(drho);
      const double da = a1 - a0;
      out.tv_amplitude += std::abs(da);
      // d|.|/da chain shared by density and amplitude differences
      const double sgn_rho = drho > 0.0 ? 1.0 : (drho < 0.0 ? -1.0 : 0.0);
      const double sgn_a = da > 0.0 ? 1.0 : (da < 0.0 ? -1.0 : 0.0);
      const double dmag = lam[2] * rcfg.zeta * sgn_rho + lam[3] * sgn_a;
      if (want_grad && dmag != 0.0) {
        add_dc_magnitude_grad(q.dout, dcp, nc, dmag);
        add_dc_magnitude_grad(sr.main.dout, sr.dc, nc, -dmag);
      }

      if (a0 > 0.0 && a1 > 0.0) {
        const double dphi = wrap_angle(std::arg(dcp) - std::arg(sr.dc));
        out.tv_phase += std::abs(dphi);
        const double sp = dphi > 0.0 ? 1.0 : (dphi < 0.0 ? -1.0 : 0.0);
        if (want_grad && lam[4] > 0.0 && sp != 0.0) {
          // arg(re + j im) depends on the raw DC channels only through their ratio
          auto push = [&](std::span<double> dout, std::span<const double> raw, double w) {
            const double re = raw[0], im = raw[static_cast<std::size_t>(nc)];
            const double m2 = re * re + im * im;
            dout[0] += w * (-im / m2);
            dout[static_cast<std::size_t>(nc)] += w * (re / m2);
          };
          push(q.dout, q.raw, lam[4] * sp);
          push(sr.main.dout, sr.main.raw, -lam[4] * sp);
        }
      }
      if (want_grad) rec.extras.push_back(std::move(q));
    }
  }
  out.total = lam[0] * out.tof + lam[1] * out.sparsity + lam[2] * out.tv_density + lam[3] * out.tv_amplitude +
              lam[4] * out.tv_phase;
  if (want_grad) backward_pose(field, rcfg, rec, dpred, grad);
  return out;
}

}  // namespace detail

// Five-term loss over a batch; accumulates d(total)/d(params) into grad when
// grad is non-empty. Items run in parallel with per-chunk gradient buffers
// merged in chunk order.
template <typename Field>
LossBreakdown compute_loss(const Field& field, const RenderConfig& rcfg, const TrainConfig& cfg,
                           std::span<const BatchItem> batch, std::uint64_t key, std::span<double> grad = {}) {
  if (batch.empty()) throw UsageError("compute_loss: empty batch");
  if (!grad.empty() && grad.size() != field.num_params())
    throw UsageError("compute_loss: gradient buffer has " + std::to_string(grad.size()) + " entries, field has " +
                     std::to_string(field.num_params()));
  for (const auto& it : batch)
    if (it.bins.size() != it.target.size()) throw UsageError("compute_loss: bins and targets differ in length");

  const std::size_t chunks = parallel_chunks(batch.size());
  std::vector<LossBreakdown> partial(chunks);
  std::vector<std::vector<double>> grads(grad.empty() || chunks == 1 ? 0 : chunks);
  parallel_for(batch.size(), [&](std::size_t begin, std::size_t end, std::size_t c) {
    std::span<double> g = grad;
    if (!grads.empty()) {
      grads[c].assign(grad.size(), 0.0);
      g = grads[c];
    }
    for (std::size_t i = begin; i < end; ++i) partial[c] += detail::item_loss(field, rcfg, cfg, batch[i], key, g);
  });
  LossBreakdown total;
  for (const auto& p : partial) total += p;
  for (const auto& g : grads)
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];

  const auto t = total.terms();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i]))
      throw DivergenceError(std::string("loss term ") + LossBreakdown::kNames[i] + " is not finite");
  return total;
}

// Bins [first, last] whose ellipsoid shell can meet the box.
inline std::pair<std::size_t, std::size_t> bins_touching_box(const SensorPose& pose, const Aabb& box, double c,
                                                             double fs, std::size_t n_bins) {
  auto dist_to_box = [&](const Vec3& p) { return (p - p.cwiseMax(box.min()).cwiseMin(box.max())).norm(); };
  const double pmin = dist_to_box(pose.tx) + dist_to_box(pose.rx);
  double pmax = 0.0;
  for (int k = 0; k < 8; ++k) {
    const Vec3 corner = box.corner(static_cast<Aabb::CornerType>(k));
    pmax = std::max(pmax, (corner - pose.tx).norm() + (corner - pose.rx).norm());
  }
  const double bin_len = c / fs;
  const auto first = static_cast<std::size_t>(std::max(0.0, std::floor(pmin / bin_len)));
  const auto last = static_cast<std::size_t>(std::max(0.0, std::floor(pmax / bin_len)));
  if (n_bins == 0 || first >= n_bins) return {1, 0};
  return {first, std::min(last, n_bins - 1)};
}

// Mostly bins above active_threshold of the trace max, plus uniform_fraction
// drawn from all bins in range. Sorted, without duplicates.
inline std::vector<std::size_t> sample_bins(const AnalyticSignal& s, std::pair<std::size_t, std::size_t> range,
                                            std::size_t count, double active_threshold, double uniform_fraction,
                                            KeyedRng& rng) {
  std::vector<std::size_t> out;
  if (range.first > range.second || count == 0) return out;
  std::vector<std::size_t> active;
  double peak = 0.0;
  for (std::size_t k = range.first; k <= range.second; ++k) peak = std::max(peak, std::abs(s.samples[k]));
  for (std::size_t k = range.first; k <= range.second; ++k)
    if (peak > 0.0 && std::abs(s.samples[k]) > active_threshold * peak) active.push_back(k);
  const std::size_t span_len = range.second - range.first + 1;
  auto n_uniform = static_cast<std::size_t>(std::llround(uniform_fraction * static_cast<double>(count)));
  if (active.empty()) n_uniform = count;
  n_uniform = std::min(n_uniform, count);
  for (std::size_t i = 0; i < count; ++i) {
    if (i < count - n_uniform) {
      out.push_back(active[static_cast<std::size_t>(rng.uniform() * static_cast<double>(active.size()))]);
    } else {
      out.push_back(range.first + static_cast<std::size_t>(rng.uniform() * static_cast<double>(span_len)));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct TrainRecord {
  int iteration = 0;
  double wall_time_s = 0.0;
  LossBreakdown batch;
  LossBreakdown probe;
};

struct TrainReport {
  std::vector<TrainRecord> records;
  double initial_probe_tof = 0.0;
  double final_probe_tof = 0.0;
  int iterations_run = 0;
  bool diverged = false;
  std::string message;
};

struct TrainResult {
  NeuralField field;
  TrainReport report;
  double signal_scale = 1.0;  // field outputs are in units of this
};

inline double peak_magnitude(std::span<const AnalyticSignal> ms) {
  double m = 0.0;
  for (const auto& s : ms)
    for (const auto& v : s.samples) m = std::max(m, std::abs(v));
  return m;
}

using CheckpointFn = std::function<void(const NeuralField&, const TrainRecord&)>;

namespace detail {

inline void check_training_data(std::span<const AnalyticSignal> ms, std::span<const SensorPose> ap,
                                const RenderConfig& rcfg) {
  if (ms.size() != ap.size())
    throw UsageError("train: " + std::to_string(ms.size()) + " measurements for " + std::to_string(ap.size()) +
                     " poses");
  if (ms.empty()) throw DataError("train: no measurements");
  for (std::size_t i = 0; i < ms.size(); ++i) {
    validate(ap[i]);
    if (ms[i].size() != ms[0].size()) throw DataError("train: measurements differ in length");
    if (std::abs(ms[i].fs - rcfg.fs) > 1e-9 * rcfg.fs)
      throw DataError("train: measurement sample rate does not match render config");
  }
}

}  // namespace detail

// Builds the batch for one pose at iteration key.
inline BatchItem make_batch_item(const AnalyticSignal& s, const SensorPose& pose, std::size_t pose_index,
                                 const Aabb& box, const RenderConfig& rcfg, const TrainConfig& cfg, std::uint64_t key) {
  BatchItem it;
  it.pose = pose;
  it.pose_index = pose_index;
  KeyedRng rng(cfg.seed ^ 0x62696e73ULL, key, pose_index);
  const auto range = bins_touching_box(pose, box, rcfg.c, rcfg.fs, s.size());
  it.bins = sample_bins(s, range, cfg.bins_per_pose, cfg.active_threshold, cfg.uniform_fraction, rng);
  it.target.reserve(it.bins.size());
  for (auto k : it.bins) it.target.push_back(s.samples[k]);
  return it;
}

// Fixed poses and bins used to track L_ToF over training.
inline std::vector<BatchItem> make_probe_batch(std::span<const AnalyticSignal> ms, std::span<const SensorPose> ap,
                                               const Aabb& box, const RenderConfig& rcfg, const TrainConfig& cfg) {
  std::vector<BatchItem> probe;
  const std::size_t n = std::min(cfg.probe_poses, ap.size());
  TrainConfig pc = cfg;
  pc.bins_per_pose = cfg.probe_bins;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = i * ap.size() / std::max<std::size_t>(n, 1);
    auto it = make_batch_item(ms[p], ap[p], p, box, rcfg, pc, std::numeric_limits<std::uint64_t>::max());
    if (!it.bins.empty()) probe.push_back(std::move(it));
  }
  return probe;
}

inline double lr_at(const TrainConfig& cfg, int it) {
  if (cfg.lr_decay == 1.0 || cfg.iterations < 2) return cfg.lr;
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(it - 1) / static_cast<double>(cfg.iterations - 1));
}

inline Aabb field_box(const HashGridConfig& hc) { return Aabb(hc.bbox_min, hc.bbox_max); }

// Adam on the five-term loss. Each iteration draws batch_poses distinct poses
// and bins_per_pose bins for each, renders rays_per_bin rays per pose and takes
// one step. On divergence the field is rolled back to the last checkpoint.
inline TrainResult train(std::span<const AnalyticSignal> measurements, std::span<const SensorPose> aperture,
                         NeuralField init, RenderConfig rcfg, const TrainConfig& cfg, const CheckpointFn& on_checkpoint = {}) {
  validate(cfg);
  detail::check_training_data(measurements, aperture, rcfg);
  rcfg.zeta = cfg.zeta;
  rcfg.n_rays = cfg.rays_per_bin;
  validate(rcfg);
  const Aabb box = field_box(init.config());
  if (!rcfg.bounds) rcfg.bounds = box;

  double scale = cfg.signal_scale > 0.0 ? cfg.signal_scale : peak_magnitude(measurements);
  if (!(scale > 0.0)) scale = 1.0;
  std::vector<AnalyticSignal> scaled(measurements.begin(), measurements.end());
  for (auto& s : scaled)
    for (auto& v : s.samples) v /= scale;
  measurements = scaled;

  TrainResult res{std::move(init), {}, scale};
  NeuralField& field = res.field;
  auto& rep = res.report;
  AdamState adam(field.num_params(), cfg.lr);
  std::vector<double> grad(field.num_params());
  std::vector<double> good = field.params();

  TrainConfig probe_cfg = cfg;
  const auto probe = make_probe_batch(measurements, aperture, box, rcfg, cfg);
  const std::uint64_t probe_key = detail::splitmix64(cfg.seed ^ 0x70726f6265ULL);
  auto probe_loss = [&] {
    return probe.empty() ? LossBreakdown{} : compute_loss(field, rcfg, probe_cfg, probe, probe_key);
  };

  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count(); };

  const std::size_t n_poses = aperture.size();
  const std::size_t batch_n = std::min(cfg.batch_poses, n_poses);
  std::vector<std::size_t> order(n_poses);
  LossBreakdown last_batch;
  try {
    TrainRecord first;
    first.iteration = 0;
    first.probe = probe_loss();
    first.wall_time_s = elapsed();
    rep.initial_probe_tof = first.probe.tof;
    rep.final_probe_tof = first.probe.tof;
    rep.records.push_back(first);
    if (on_checkpoint) on_checkpoint(field, first);

    for (int it = 1; it <= cfg.iterations; ++it) {
      const auto key = static_cast<std::uint64_t>(it);
      KeyedRng prng(cfg.seed ^ 0x706f736573ULL, key);
      for (std::size_t i = 0; i < n_poses; ++i) order[i] = i;
      for (std::size_t i = 0; i < batch_n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(prng.uniform() * static_cast<double>(n_poses - i));
        std::swap(order[i], order[j]);
      }
      std::vector<BatchItem> batch;
      for (std::size_t i = 0; i < batch_n; ++i) {
        const std::size_t p = order[i];
        auto item = make_batch_item(measurements[p], aperture[p], p, box, rcfg, cfg, key);
        if (!item.bins.empty()) batch.push_back(std::move(item));
      }
      if (batch.empty()) continue;
      std::fill(grad.begin(), grad.end(), 0.0);
      adam.lr = lr_at(cfg, it);
      last_batch = compute_loss(field, rcfg, cfg, batch, detail::splitmix64(cfg.seed + key), grad);
      adam_step(adam, field.params(), grad);
      rep.iterations_run = it;

      if (it % cfg.checkpoint_every == 0 || it == cfg.iterations) {
        for (double p : field.params())
          if (!std::isfinite(p)) throw DivergenceError("train: non-finite parameter at iteration " + std::to_string(it));
        TrainRecord r;
        r.iteration = it;
        r.batch = last_batch;
        r.probe = probe_loss();
        r.wall_time_s = elapsed();
        rep.final_probe_tof = r.probe.tof;
        rep.records.push_back(r);
        good = field.params();
        if (on_checkpoint) on_checkpoint(field, r);
      }
    }
  } catch (const DivergenceError& e) {
    field.params() = good;
    rep.diverged = true;
    rep.message = e.what();
  }
  return res;
}

}  // namespace shsas
