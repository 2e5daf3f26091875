#pragma once

// Run configuration shared by the CLI stages. JSON in, JSON out; unknown keys
// are rejected.

#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "shsas/backprojection.hpp"
#include "shsas/core.hpp"
#include "shsas/neuralfield.hpp"
#include "shsas/renderer.hpp"
#include "shsas/signal.hpp"
#include "shsas/simulator.hpp"
#include "shsas/trainer.hpp"

namespace shsas {

struct PulseSettings {
  double f0 = 10e3;
  double bandwidth = 20e3;
  double duration = 1e-3;
  double tukey_ratio = 0.1;

  Pulse make(double fs) const { return lfm_chirp(f0, bandwidth, duration, fs, tukey_ratio); }
};

struct ApertureSettings {
  double radius = 0.5;
  std::size_t n_azimuth = 120;
  std::vector<double> heights{0.2};
  Vec3 look_at = Vec3::Zero();
  double beam_halfangle = 0.3;
  double tx_rx_offset = 0.0;

  Aperture make() const {
    return make_circular_aperture(radius, n_azimuth, heights, look_at, beam_halfangle, tx_rx_offset);
  }
};

struct SimulatorSettings {
  std::size_t n_bins = 512;
  double fs = 100e3;
  double c = 343.0;
  std::size_t rays_per_pose = 16384;
  std::optional<double> snr_db = 20.0;
  std::uint64_t seed = 0;
  double spreading_exponent = 2.0;
  double beam_exponent = 2.0;
  PulseSettings pulse;
  ApertureSettings aperture;

  SimConfig sim_config() const {
    SimConfig s;
    s.n_bins = n_bins;
    s.fs = fs;
    s.c = c;
    s.rays_per_pose = rays_per_pose;
    s.snr_db = snr_db;
    s.seed = seed;
    s.spreading_exponent = spreading_exponent;
    s.tx_beam.exponent = beam_exponent;
    return s;
  }
};

struct RenderSettings {
  double normal_step = 1e-3;
  bool lambertian = true;
  bool exact_rx_leg = false;
  int rx_leg_steps = 16;
  std::size_t novel_view_rays = 256;
  std::uint64_t seed = 0;
};

struct FieldSettings {
  int degree = 3;
  int n_levels = 16;
  int base_res = 16;
  int max_res = 4096;
  int features_per_level = 2;
  int table_size_log2 = 19;
  Vec3 bbox_min = Vec3::Constant(-0.125);
  Vec3 bbox_max = Vec3::Constant(0.125);
  std::uint64_t seed = 0;

  HashGridConfig grid() const {
    HashGridConfig g;
    g.n_levels = n_levels;
    g.base_res = base_res;
    g.max_res = max_res;
    g.features_per_level = features_per_level;
    g.table_size_log2 = table_size_log2;
    g.bbox_min = bbox_min;
    g.bbox_max = bbox_max;
    return g;
  }
};

struct BackprojectSettings {
  std::size_t grid_resolution = 64;
  std::string interpolation = "linear";
  double threshold = 0.5;
};

struct ExtractSettings {
  std::size_t grid_resolution = 64;
  std::vector<double> iso_fractions{0.2, 0.4, 0.6};
  std::size_t mesh_samples = 20000;
};

struct MetricSettings {
  std::string chamfer = "squared";
  double tau = 0.0;         // 0: twice the voxel size
  double voxel_size = 0.0;  // 0: reference bounding-box diagonal / 64
  std::size_t n_samples = 20000;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string profile = "simulated";
  SimulatorSettings simulator;
  DeconvConfig deconv;
  RenderSettings render;
  FieldSettings field;
  TrainConfig train;
  double view_fraction = 1.0;
  std::uint64_t view_seed = 0;
  BackprojectSettings backprojection;
  ExtractSettings extract;
  MetricSettings metrics;

  RenderConfig render_config() const {
    RenderConfig r;
    r.n_rays = train.rays_per_bin;
    r.n_tof_bins = simulator.n_bins;
    r.zeta = train.zeta;
    r.normal_step = render.normal_step;
    r.c = simulator.c;
    r.fs = simulator.fs;
    r.tx_beam.exponent = simulator.beam_exponent;
    r.use_lambertian = render.lambertian;
    r.exact_rx_leg = render.exact_rx_leg;
    r.rx_leg_steps = render.rx_leg_steps;
    r.seed = render.seed;
    r.bounds = Aabb(field.bbox_min, field.bbox_max);
    return r;
  }

  BackprojectionConfig backprojection_config() const {
    BackprojectionConfig b;
    b.c = simulator.c;
    b.tx_beam.exponent = simulator.beam_exponent;
    if (backprojection.interpolation == "nearest")
      b.interpolation = Interpolation::nearest;
    else if (backprojection.interpolation != "linear")
      throw UsageError("config: backprojection.interpolation must be linear or nearest");
    return b;
  }
};

inline const std::vector<std::string>& profile_names() {
  static const std::vector<std::string> names{"simulated", "airsas-like"};
  return names;
}

// Simulated data trains without the priors; the AirSAS-like profile turns
// them on and uses a wider, lower-SNR setup.
inline RunConfig profile_defaults(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "simulated") {
    c.train.lambdas = {1.0, 0.0, 0.0, 0.0, 0.0};
  } else if (name == "airsas-like") {
    c.train.lambdas = {1.0, 1e-5, 1e-5, 1e-5, 1e-5};
    c.simulator.snr_db = 10.0;
    c.simulator.aperture.heights = {0.1, 0.2, 0.3};
    c.simulator.aperture.beam_halfangle = 0.5;
  } else {
    throw UsageError("config: unknown profile '" + name + "' (simulated, airsas-like)");
  }
  return c;
}

namespace detail {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: '" + path_ + "' must be an object");
  }
  ~Section() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config: '" + path_ + "." + key + "' has the wrong type");
    }
  }
  void get(const char* key, Vec3& out) {
    std::vector<double> v{out.x(), out.y(), out.z()};
    get(key, v);
    if (v.size() != 3) throw UsageError("config: '" + path_ + "." + key + "' must have three entries");
    out = Vec3(v[0], v[1], v[2]);
  }
  void get(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0.0;
    get(key, v);
    out = v;
  }
  Section sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }
  // Throws on keys nobody asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw UsageError("config: unknown key '" + path_ + "." + it.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// Overlays j onto base.
inline RunConfig apply_json(RunConfig c, const nlohmann::json& j) {
  detail::Section root(j, "config");
  root.get("profile", c.profile);
  {
    auto s = root.sub("simulator");
    auto& v = c.simulator;
    s.get("n_bins", v.n_bins);
    s.get("fs", v.fs);
    s.get("c", v.c);
    s.get("rays_per_pose", v.rays_per_pose);
    s.get("snr_db", v.snr_db);
    s.get("seed", v.seed);
    s.get("spreading_exponent", v.spreading_exponent);
    s.get("beam_exponent", v.beam_exponent);
    auto p = s.sub("pulse");
    p.get("f0", v.pulse.f0);
    p.get("bandwidth", v.pulse.bandwidth);
    p.get("duration", v.pulse.duration);
    p.get("tukey_ratio", v.pulse.tukey_ratio);
    p.finish();
    auto a = s.sub("aperture");
    a.get("radius", v.aperture.radius);
    a.get("n_azimuth", v.aperture.n_azimuth);
    a.get("heights", v.aperture.heights);
    a.get("look_at", v.aperture.look_at);
    a.get("beam_halfangle", v.aperture.beam_halfangle);
    a.get("tx_rx_offset", v.aperture.tx_rx_offset);
    a.finish();
    s.finish();
  }
  {
    auto s = root.sub("deconv");
    s.get("lambda1", c.deconv.lambda1);
    s.get("lambda2", c.deconv.lambda2);
    s.get("iterations", c.deconv.iterations);
    s.get("lr", c.deconv.lr);
    s.finish();
  }
  {
    auto s = root.sub("render");
    s.get("normal_step", c.render.normal_step);
    s.get("lambertian", c.render.lambertian);
    s.get("exact_rx_leg", c.render.exact_rx_leg);
    s.get("rx_leg_steps", c.render.rx_leg_steps);
    s.get("novel_view_rays", c.render.novel_view_rays);
    s.get("seed", c.render.seed);
    s.finish();
  }
  {
    auto s = root.sub("field");
    auto& f = c.field;
    s.get("degree", f.degree);
    s.get("n_levels", f.n_levels);
    s.get("base_res", f.base_res);
    s.get("max_res", f.max_res);
    s.get("features_per_level", f.features_per_level);
    s.get("table_size_log2", f.table_size_log2);
    s.get("bbox_min", f.bbox_min);
    s.get("bbox_max", f.bbox_max);
    s.get("seed", f.seed);
    s.finish();
  }
  {
    auto s = root.sub("train");
    auto& t = c.train;
    s.get("lambdas", t.lambdas);
    s.get("lr", t.lr);
    s.get("lr_decay", t.lr_decay);
    s.get("iterations", t.iterations);
    s.get("batch_poses", t.batch_poses);
    s.get("bins_per_pose", t.bins_per_pose);
    s.get("rays_per_bin", t.rays_per_bin);
    s.get("tv_delta", t.tv_delta);
    s.get("zeta", t.zeta);
    s.get("seed", t.seed);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("active_threshold", t.active_threshold);
    s.get("uniform_fraction", t.uniform_fraction);
    s.get("probe_poses", t.probe_poses);
    s.get("probe_bins", t.probe_bins);
    s.get("view_fraction", c.view_fraction);
    s.get("view_seed", c.view_seed);
    s.finish();
  }
  {
    auto s = root.sub("backprojection");
    s.get("grid_resolution", c.backprojection.grid_resolution);
    s.get("interpolation", c.backprojection.interpolation);
    s.get("threshold", c.backprojection.threshold);
    s.finish();
  }
  {
    auto s = root.sub("extract");
    s.get("grid_resolution", c.extract.grid_resolution);
    s.get("iso_fractions", c.extract.iso_fractions);
    s.get("mesh_samples", c.extract.mesh_samples);
    s.finish();
  }
  {
    auto s = root.sub("metrics");
    s.get("chamfer", c.metrics.chamfer);
    s.get("tau", c.metrics.tau);
    s.get("voxel_size", c.metrics.voxel_size);
    s.get("n_samples", c.metrics.n_samples);
    s.get("seed", c.metrics.seed);
    s.finish();
  }
  root.finish();
  return c;
}

// Profile defaults (from j's "profile", else `profile`) overlaid with j.
inline RunConfig load_config(const nlohmann::json& j, const std::string& profile = "simulated") {
  std::string name = profile;
  if (j.is_object() && j.contains("profile")) {
    if (!j.at("profile").is_string()) throw UsageError("config: 'profile' must be a string");
    name = j.at("profile").get<std::string>();
  }
  RunConfig c = apply_json(profile_defaults(name), j);
  validate(c.train);
  if (c.metrics.chamfer != "squared" && c.metrics.chamfer != "absolute")
    throw UsageError("config: metrics.chamfer must be squared or absolute");
  if (!(c.view_fraction > 0.0 && c.view_fraction <= 1.0)) throw UsageError("config: train.view_fraction must lie in (0, 1]");
  for (double f : c.extract.iso_fractions)
    if (!(f > 0.0 && f < 1.0)) throw UsageError("config: extract.iso_fractions must lie in (0, 1)");
  check_degree(c.field.degree);
  validate(c.field.grid());
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  auto vec = [](const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); };
  const auto& s = c.simulator;
  nlohmann::json j;
  j["profile"] = c.profile;
  j["simulator"] = {{"n_bins", s.n_bins},
                    {"fs", s.fs},
                    {"c", s.c},
                    {"rays_per_pose", s.rays_per_pose},
                    {"snr_db", s.snr_db ? nlohmann::json(*s.snr_db) : nlohmann::json(nullptr)},
                    {"seed", s.seed},
                    {"spreading_exponent", s.spreading_exponent},
                    {"beam_exponent", s.beam_exponent},
                    {"pulse",
                     {{"f0", s.pulse.f0},
                      {"bandwidth", s.pulse.bandwidth},
                      {"duration", s.pulse.duration},
                      {"tukey_ratio", s.pulse.tukey_ratio}}},
                    {"aperture",
                     {{"radius", s.aperture.radius},
                      {"n_azimuth", s.aperture.n_azimuth},
                      {"heights", s.aperture.heights},
                      {"look_at", vec(s.aperture.look_at)},
                      {"beam_halfangle", s.aperture.beam_halfangle},
                      {"tx_rx_offset", s.aperture.tx_rx_offset}}}};
  j["deconv"] = {{"lambda1", c.deconv.lambda1},
                 {"lambda2", c.deconv.lambda2},
                 {"iterations", c.deconv.iterations},
                 {"lr", c.deconv.lr}};
  j["render"] = {{"normal_step", c.render.normal_step},   {"lambertian", c.render.lambertian},
                 {"exact_rx_leg", c.render.exact_rx_leg}, {"rx_leg_steps", c.render.rx_leg_steps},
                 {"novel_view_rays", c.render.novel_view_rays}, {"seed", c.render.seed}};
  const auto& f = c.field;
  j["field"] = {{"degree", f.degree},
                {"n_levels", f.n_levels},
                {"base_res", f.base_res},
                {"max_res", f.max_res},
                {"features_per_level", f.features_per_level},
                {"table_size_log2", f.table_size_log2},
                {"bbox_min", vec(f.bbox_min)},
                {"bbox_max", vec(f.bbox_max)},
                {"seed", f.seed}};
  const auto& t = c.train;
  j["train"] = {{"lambdas", t.lambdas},
                {"lr", t.lr},
                {"lr_decay", t.lr_decay},
                {"iterations", t.iterations},
                {"batch_poses", t.batch_poses},
                {"bins_per_pose", t.bins_per_pose},
                {"rays_per_bin", t.rays_per_bin},
                {"tv_delta", t.tv_delta},
                {"zeta", t.zeta},
                {"seed", t.seed},
                {"checkpoint_every", t.checkpoint_every},
                {"active_threshold", t.active_threshold},
                {"uniform_fraction", t.uniform_fraction},
                {"probe_poses", t.probe_poses},
                {"probe_bins", t.probe_bins},
                {"view_fraction", c.view_fraction},
                {"view_seed", c.view_seed}};
  j["backprojection"] = {{"grid_resolution", c.backprojection.grid_resolution},
                         {"interpolation", c.backprojection.interpolation},
                         {"threshold", c.backprojection.threshold}};
  j["extract"] = {{"grid_resolution", c.extract.grid_resolution},
                  {"iso_fractions", c.extract.iso_fractions},
                  {"mesh_samples", c.extract.mesh_samples}};
  j["metrics"] = {{"chamfer", c.metrics.chamfer},
                  {"tau", c.metrics.tau},
                  {"voxel_size", c.metrics.voxel_size},
                  {"n_samples", c.metrics.n_samples},
                  {"seed", c.metrics.seed}};
  return j;
}

}  // namespace shsas
