#pragma once

// Pipeline stages behind the CLI: each takes the resolved RunConfig and the
// previous stage's artifact.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "shsas/backprojection.hpp"
#include "shsas/config.hpp"
#include "shsas/io.hpp"
#include "shsas/meshmetrics.hpp"
#include "shsas/simulator.hpp"
#include "shsas/trainer.hpp"

namespace shsas {

inline void require_real(const TransientContainer& tc, const std::string& stage) {
  if (tc.is_complex)
    throw DataError(stage + ": expected a real (simulated or measured) container, got a complex one; deconvolve output "
                            "cannot be fed back into " + stage);
}

inline void require_complex(const TransientContainer& tc, const std::string& stage) {
  if (!tc.is_complex)
    throw DataError(stage + ": expected a complex (deconvolved) container, got a real one; run deconvolve first");
}

inline std::uint64_t measurement_seed(std::uint64_t seed, std::size_t pose) {
  return detail::splitmix64(detail::splitmix64(seed) + pose);
}

// Real transients for every pose of the configured aperture.
inline TransientContainer simulate(const RunConfig& cfg, const Scene& scene) {
  const auto& s = cfg.simulator;
  const SimConfig sim = s.sim_config();
  validate(sim);
  const Pulse pulse = s.pulse.make(s.fs);
  TransientContainer tc;
  tc.fs = s.fs;
  tc.c = s.c;
  tc.n_bins = s.n_bins;
  tc.poses = s.aperture.make();
  tc.traces.assign(tc.poses.size(), {});
  const Bvh bvh(scene);
  parallel_for(tc.poses.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const auto h = trace_transient(bvh, scene, tc.poses[i], sim, i);
      const auto y = render_measurement(h, pulse, sim.snr_db, measurement_seed(sim.seed, i));
      tc.traces[i].reserve(y.size());
      for (double v : y) tc.traces[i].emplace_back(v, 0.0);
    }
  });
  return tc;
}

// Real container -> complex container of deconvolved analytic traces.
inline TransientContainer deconvolve(const RunConfig& cfg, const TransientContainer& in) {
  require_real(in, "deconvolve");
  const Pulse pulse = cfg.simulator.pulse.make(in.fs);
  TransientContainer out = in;
  out.is_complex = true;
  const auto real = in.real_traces();
  parallel_for(in.traces.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i)
      out.traces[i] = pulse_deconvolve(to_analytic(real[i], in.fs, 0.5 / in.fs), pulse, cfg.deconv).samples;
  });
  return out;
}

// Poses kept for reconstruction (train.view_fraction of the aperture).
inline TransientContainer select_views(const RunConfig& cfg, const TransientContainer& in) {
  if (cfg.view_fraction >= 1.0) return in;
  TransientContainer out = in;
  out.poses.clear();
  out.traces.clear();
  for (std::size_t i : subsample_indices(in.poses.size(), cfg.view_fraction, cfg.view_seed)) {
    out.poses.push_back(in.poses[i]);
    out.traces.push_back(in.traces[i]);
  }
  return out;
}

inline Aabb scene_box(const RunConfig& cfg) { return Aabb(cfg.field.bbox_min, cfg.field.bbox_max); }

inline VoxelGrid<cplx> backproject(const RunConfig& cfg, const TransientContainer& in) {
  require_complex(in, "backproject");
  const auto views = select_views(cfg, in);
  return backproject(views.signals(), views.poses,
                     grid_spec_from_bounds(scene_box(cfg), cfg.backprojection.grid_resolution),
                     cfg.backprojection_config());
}

inline Checkpoint make_checkpoint(const RunConfig& cfg, const NeuralField& f, double signal_scale) {
  Checkpoint ck;
  ck.grid = f.config();
  ck.degree = f.degree();
  ck.zeta = cfg.train.zeta;
  ck.signal_scale = signal_scale;
  ck.params = f.params();
  return ck;
}

// Same normalization train() picks for this container.
inline double training_signal_scale(const RunConfig& cfg, const TransientContainer& in) {
  if (cfg.train.signal_scale > 0.0) return cfg.train.signal_scale;
  const double m = peak_magnitude(select_views(cfg, in).signals());
  return m > 0.0 ? m : 1.0;
}

inline TrainResult train(const RunConfig& cfg, const TransientContainer& in, const CheckpointFn& on_checkpoint = {}) {
  require_complex(in, "train");
  const auto views = select_views(cfg, in);
  RenderConfig rc = cfg.render_config();
  rc.fs = in.fs;
  rc.c = in.c;
  rc.n_tof_bins = in.n_bins;
  const auto signals = views.signals();
  return train(signals, views.poses, NeuralField(cfg.field.grid(), cfg.field.degree, cfg.field.seed), rc, cfg.train,
               on_checkpoint);
}

struct Extraction {
  double iso_fraction = 0.0;
  TriMesh mesh;
  PointCloud cloud;
};

inline VoxelGrid<double> density_grid(const RunConfig& cfg, const Checkpoint& ck) {
  const auto f = ck.field();
  return eval_density_grid(f, ck.zeta, grid_spec_from_bounds(field_box(f.config()), cfg.extract.grid_resolution));
}

template <typename T>
VoxelGrid<double> magnitude_grid(const VoxelGrid<T>& g) {
  VoxelGrid<double> m(g.spec);
  for (std::size_t i = 0; i < g.values.size(); ++i) m.values[i] = static_cast<double>(std::abs(g.values[i]));
  return m;
}

// Marching-cubes surface of |grid| at fraction * max, resampled to a cloud.
// Empty when the level set is empty.
template <typename T>
PointCloud surface_cloud(const VoxelGrid<T>& grid, double fraction, std::size_t n_samples, std::uint64_t seed) {
  const auto m = magnitude_grid(grid);
  const auto mesh = to_trimesh(marching_cubes(m, fraction * grid_range(m).second), "surface");
  if (mesh.faces.empty()) return {};
  return mesh_to_pointcloud(mesh, n_samples, seed);
}

// Marching-cubes mesh per iso fraction of the grid maximum, plus a cloud
// sampled from that mesh.
inline std::vector<Extraction> extract(const RunConfig& cfg, const VoxelGrid<double>& grid) {
  const double peak = grid_range(grid).second;
  std::vector<Extraction> out;
  for (double f : cfg.extract.iso_fractions) {
    Extraction e;
    e.iso_fraction = f;
    e.mesh = to_trimesh(marching_cubes(grid, f * peak), "iso_" + std::to_string(f));
    if (!e.mesh.faces.empty()) e.cloud = mesh_to_pointcloud(e.mesh, cfg.extract.mesh_samples, cfg.metrics.seed);
    out.push_back(std::move(e));
  }
  return out;
}

inline MetricReport evaluate(const RunConfig& cfg, const PointCloud& pred, const PointCloud& ref) {
  if (ref.empty()) throw DataError("evaluate: empty reference cloud");
  double voxel = cfg.metrics.voxel_size;
  if (!(voxel > 0.0)) {
    Aabb box;
    box.setEmpty();
    for (const auto& p : ref.points) box.extend(p);
    voxel = std::max(box.diagonal().norm() / 64.0, 1e-9);
  }
  const double tau = cfg.metrics.tau > 0.0 ? cfg.metrics.tau : 2.0 * voxel;
  const auto mode = cfg.metrics.chamfer == "absolute" ? ChamferMode::absolute : ChamferMode::squared;
  return evaluate_clouds(pred, ref, tau, voxel, mode);
}

// Cloud from a .ply file, or surface samples from an .obj file.
inline PointCloud load_cloud(const RunConfig& cfg, const std::string& path) {
  const auto ext = path.size() >= 4 ? path.substr(path.size() - 4) : std::string();
  if (ext == ".ply") return read_ply(path);
  if (ext == ".obj") {
    const auto meshes = read_obj(path);
    TriMesh all;
    all.name = path;
    for (const auto& m : meshes) {
      const int base = static_cast<int>(all.vertices.size());
      all.vertices.insert(all.vertices.end(), m.vertices.begin(), m.vertices.end());
      for (const auto& f : m.faces) all.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
    }
    return mesh_to_pointcloud(all, cfg.metrics.n_samples, cfg.metrics.seed);
  }
  throw UsageError("evaluate: '" + path + "' is neither .ply nor .obj");
}

struct ViewErrors {
  double l1_real = 0.0, l1_imag = 0.0, l1_abs = 0.0;
  double mse_real = 0.0, mse_imag = 0.0, mse_abs = 0.0;
};

// L1 sums and mean squared errors of pred against truth, channel by channel.
inline ViewErrors view_errors(std::span<const cplx> pred, std::span<const cplx> truth) {
  if (pred.size() != truth.size()) throw UsageError("view_errors: traces differ in length");
  ViewErrors e;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double dr = pred[k].real() - truth[k].real();
    const double di = pred[k].imag() - truth[k].imag();
    const double da = std::abs(pred[k]) - std::abs(truth[k]);
    e.l1_real += std::abs(dr);
    e.l1_imag += std::abs(di);
    e.l1_abs += std::abs(da);
    e.mse_real += dr * dr;
    e.mse_imag += di * di;
    e.mse_abs += da * da;
  }
  const double n = std::max<double>(1.0, static_cast<double>(pred.size()));
  e.mse_real /= n;
  e.mse_imag /= n;
  e.mse_abs /= n;
  return e;
}

inline ViewErrors& operator+=(ViewErrors& a, const ViewErrors& b) {
  a.l1_real += b.l1_real;
  a.l1_imag += b.l1_imag;
  a.l1_abs += b.l1_abs;
  a.mse_real += b.mse_real;
  a.mse_imag += b.mse_imag;
  a.mse_abs += b.mse_abs;
  return a;
}

inline nlohmann::json to_json(const ViewErrors& e) {
  return {{"l1_real", e.l1_real},   {"l1_imag", e.l1_imag},   {"l1_abs", e.l1_abs},
          {"mse_real", e.mse_real}, {"mse_imag", e.mse_imag}, {"mse_abs", e.mse_abs}};
}

// True when no direction in the TX beam cone can reach the box.
inline bool beam_misses_box(const SensorPose& pose, const Aabb& box) {
  const Vec3 to_center = box.center() - pose.tx;
  const double d = to_center.norm();
  const double r = 0.5 * box.diagonal().norm();
  if (d <= r) return false;
  const double angle = std::acos(std::clamp(to_center.dot(pose.boresight) / d, -1.0, 1.0));
  return angle - std::asin(r / d) > pose.beam_halfangle;
}

// Render config for synthesizing full traces from a checkpoint.
inline RenderConfig novel_view_config(const RunConfig& cfg, const Checkpoint& ck, double fs, double c,
                                      std::size_t n_bins) {
  RenderConfig rc = cfg.render_config();
  rc.n_rays = cfg.render.novel_view_rays;
  rc.zeta = ck.zeta;
  rc.fs = fs;
  rc.c = c;
  rc.n_tof_bins = n_bins;
  rc.bounds = field_box(ck.grid);
  return rc;
}

// Complex transients at the container's poses, in physical units.
inline TransientContainer novel_view(const RunConfig& cfg, const Checkpoint& ck, const TransientContainer& poses,
                                     std::vector<std::string>* warnings = nullptr) {
  const auto f = ck.field();
  const RenderConfig rc = novel_view_config(cfg, ck, poses.fs, poses.c, poses.n_bins);
  TransientContainer out;
  out.fs = poses.fs;
  out.c = poses.c;
  out.n_bins = poses.n_bins;
  out.is_complex = true;
  out.poses = poses.poses;
  out.traces.assign(poses.poses.size(), {});
  for (std::size_t i = 0; i < poses.poses.size(); ++i) {
    validate(poses.poses[i]);
    if (warnings && beam_misses_box(poses.poses[i], rc.bounds.value()))
      warnings->push_back("pose " + std::to_string(i) + " does not see the field's bounding box");
  }
  parallel_for(poses.poses.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      out.traces[i] = synthesize_novel_view(f, rc, poses.poses[i], i).samples;
      for (auto& v : out.traces[i]) v *= ck.signal_scale;
    }
  });
  return out;
}

}  // namespace shsas
