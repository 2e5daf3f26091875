// shsas: simulate, deconvolve, reconstruct and evaluate sonar scenes.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "shsas/pipeline.hpp"

using namespace shsas;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kDiverged = 4 };

struct Globals {
  std::string config_path;
  std::string profile = "simulated";
  std::vector<std::string> sets;
  int threads = 0;
  bool dump_config = false;
};

// "a.b.c=value"; value is parsed as JSON when possible, else kept as a string.
void apply_set(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::stringstream ss(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->contains(keys[i])) (*node)[keys[i]] = json::object();
    node = &(*node)[keys[i]];
  }
  (*node)[keys.back()] = value;
}

json read_json(const std::string& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw UsageError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) { io::write_file(path, text); }

std::string fraction_tag(double f) {
  std::ostringstream os;
  os << f;
  return os.str();
}

void configure_threads(int requested) {
  int n = requested;
  if (n <= 0)
    if (const char* env = std::getenv("SHSAS_THREADS")) {
      try {
        n = std::stoi(env);
      } catch (...) {
        throw UsageError("SHSAS_THREADS must be an integer");
      }
    }
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  set_thread_count(n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SH-SAS toolkit: simulate, deconvolve, backproject, train, extract, evaluate, novel-view"};
  app.set_version_flag("--version", "shsas 1.0");
  Globals g;
  json overrides = json::object();
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--profile", g.profile, "Profile defaults (simulated, airsas-like)");
  app.add_option("--set", g.sets, "Override a config key, e.g. --set train.iterations=200");
  app.add_option("--threads", g.threads, "Thread cap (default: SHSAS_THREADS, else all cores)");
  app.add_flag("--dump-config", g.dump_config, "Print the resolved config and exit");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Render real transients of an OBJ scene");
  std::string scene_path, refl_path, out_path;
  sim->add_option("--scene", scene_path, "Scene OBJ")->required()->check(CLI::ExistingFile);
  sim->add_option("--reflectivity", refl_path, "JSON {object name: reflectivity}")->check(CLI::ExistingFile);
  sim->add_option("--out", out_path, "Output .sast")->required();
  sim->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { overrides["simulator"]["seed"] = v; },
                                          "Simulation seed");
  sim->add_option_function<double>("--snr-db", [&](double v) { overrides["simulator"]["snr_db"] = v; }, "Noise SNR (dB)");
  sim->add_flag_function("--no-noise", [&](std::int64_t) { overrides["simulator"]["snr_db"] = nullptr; },
                         "Noise-free measurements");
  sim->add_option_function<std::size_t>("--rays", [&](std::size_t v) { overrides["simulator"]["rays_per_pose"] = v; },
                                        "Rays per pose");

  // deconvolve
  auto* dec = app.add_subcommand("deconvolve", "Pulse-deconvolve a real container into analytic traces");
  std::string in_path;
  dec->add_option("--in", in_path, "Real .sast")->required()->check(CLI::ExistingFile);
  dec->add_option("--out", out_path, "Complex .sast")->required();
  dec->add_option_function<int>("--iterations", [&](int v) { overrides["deconv"]["iterations"] = v; }, "Adam steps");

  // backproject
  auto* bp = app.add_subcommand("backproject", "Delay-and-sum image of a deconvolved container");
  std::string cloud_path;
  bp->add_option("--in", in_path, "Complex .sast")->required()->check(CLI::ExistingFile);
  bp->add_option("--out", out_path, "Output .shsg grid")->required();
  bp->add_option("--cloud", cloud_path, "Also write the thresholded voxel cloud (.ply)");
  bp->add_option_function<double>("--threshold", [&](double v) { overrides["backprojection"]["threshold"] = v; },
                                   "Cloud threshold as a fraction of the peak");
  bp->add_option_function<std::size_t>(
      "--resolution", [&](std::size_t v) { overrides["backprojection"]["grid_resolution"] = v; }, "Voxels per axis");

  // train
  auto* tr = app.add_subcommand("train", "Fit the neural field to a deconvolved container");
  std::string report_path;
  bool record_timing = false;
  tr->add_option("--in", in_path, "Complex .sast")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out_path, "Output .shsf checkpoint (rewritten at every checkpoint)")->required();
  tr->add_option("--report", report_path, "Loss report, one JSON object per line");
  tr->add_flag("--record-timing", record_timing, "Include wall-clock times in the report");
  tr->add_option_function<int>("--iterations", [&](int v) { overrides["train"]["iterations"] = v; }, "Adam steps");
  tr->add_option_function<double>("--lr", [&](double v) { overrides["train"]["lr"] = v; }, "Learning rate");
  tr->add_option_function<int>("--degree", [&](int v) { overrides["field"]["degree"] = v; }, "SH degree L");
  tr->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) {
    overrides["train"]["seed"] = v;
    overrides["field"]["seed"] = v;
  }, "Training and init seed");

  // extract
  auto* ex = app.add_subcommand("extract", "Density grid, meshes and clouds from a checkpoint");
  std::string ck_path, prefix;
  ex->add_option("--checkpoint", ck_path, "Trained .shsf")->required()->check(CLI::ExistingFile);
  ex->add_option("--out-prefix", prefix, "Writes PREFIX.shsg, PREFIX_iso<f>.obj and PREFIX_iso<f>.ply")->required();
  ex->add_option_function<std::vector<double>>(
      "--iso", [&](const std::vector<double>& v) { overrides["extract"]["iso_fractions"] = v; },
      "Iso levels as fractions of the density maximum");
  ex->add_option_function<std::size_t>(
      "--resolution", [&](std::size_t v) { overrides["extract"]["grid_resolution"] = v; }, "Voxels per axis");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Chamfer, IoU, precision, recall and F1 between two shapes");
  std::string pred_path, ref_path;
  ev->add_option("--pred", pred_path, "Reconstruction (.ply cloud or .obj mesh)")->required()->check(CLI::ExistingFile);
  ev->add_option("--ref", ref_path, "Reference (.ply cloud or .obj mesh)")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out_path, "Write the report here as well as to stdout");

  // novel-view
  auto* nv = app.add_subcommand("novel-view", "Synthesize complex transients at given poses");
  std::string poses_path;
  std::vector<double> pose_numbers;
  nv->add_option("--checkpoint", ck_path, "Trained .shsf")->required()->check(CLI::ExistingFile);
  nv->add_option("--poses", poses_path,
                 "Container supplying poses, fs, c and bin count; a complex container also serves as ground truth")
      ->required()
      ->check(CLI::ExistingFile);
  nv->add_option("--pose", pose_numbers, "Single pose instead: tx ty tz rx ry rz bx by bz halfangle")->expected(10);
  nv->add_option("--out", out_path, "Output complex .sast")->required();
  nv->add_option("--report", report_path, "Error report against the ground truth (JSON)");
  nv->add_option_function<std::size_t>("--rays", [&](std::size_t v) { overrides["render"]["novel_view_rays"] = v; },
                                       "Rays per pose");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    configure_threads(g.threads);
    json j = g.config_path.empty() ? json::object() : read_json(g.config_path);
    for (const auto& s : g.sets) apply_set(j, s);
    j.merge_patch(overrides);
    const RunConfig cfg = load_config(j, g.profile);
    if (g.dump_config) {
      std::cout << to_json(cfg).dump(2) << "\n";
      return kOk;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return kUsage;
    }

    if (sim->parsed()) {
      const Scene scene = load_scene(scene_path, refl_path);
      write_sast(out_path, simulate(cfg, scene));
    } else if (dec->parsed()) {
      write_sast(out_path, deconvolve(cfg, read_sast(in_path)));
    } else if (bp->parsed()) {
      const auto grid = backproject(cfg, read_sast(in_path));
      write_shsg(out_path, grid);
      if (!cloud_path.empty()) write_ply(cloud_path, grid_to_pointcloud(grid, cfg.backprojection.threshold));
    } else if (tr->parsed()) {
      const auto data = read_sast(in_path);
      const double scale = training_signal_scale(cfg, data);
      const auto res = train(cfg, data, [&](const NeuralField& f, const TrainRecord&) {
        write_shsf(out_path, make_checkpoint(cfg, f, scale));
      });
      write_shsf(out_path, make_checkpoint(cfg, res.field, res.signal_scale));
      if (!report_path.empty()) write_text(report_path, format_train_report(res.report, record_timing));
      if (res.report.diverged) {
        std::cerr << "shsas: training diverged (" << res.report.message << "); kept the last good checkpoint\n";
        return kDiverged;
      }
    } else if (ex->parsed()) {
      const auto ck = read_shsf(ck_path);
      const auto grid = density_grid(cfg, ck);
      write_shsg(prefix + ".shsg", grid);
      for (const auto& e : extract(cfg, grid)) {
        const std::string tag = prefix + "_iso" + fraction_tag(e.iso_fraction);
        write_obj(tag + ".obj", std::vector<TriMesh>{e.mesh});
        write_ply(tag + ".ply", e.cloud);
        std::cout << tag << ": " << e.mesh.vertices.size() << " vertices, " << e.mesh.faces.size() << " faces, "
                  << e.cloud.size() << " cloud points\n";
      }
    } else if (ev->parsed()) {
      const auto report = to_json(evaluate(cfg, load_cloud(cfg, pred_path), load_cloud(cfg, ref_path))).dump(2);
      std::cout << report << "\n";
      if (!out_path.empty()) write_text(out_path, report + "\n");
    } else if (nv->parsed()) {
      const auto ck = read_shsf(ck_path);
      auto poses = read_sast(poses_path);
      if (!pose_numbers.empty()) {
        SensorPose p;
        p.tx = {pose_numbers[0], pose_numbers[1], pose_numbers[2]};
        p.rx = {pose_numbers[3], pose_numbers[4], pose_numbers[5]};
        p.boresight = Vec3(pose_numbers[6], pose_numbers[7], pose_numbers[8]).normalized();
        p.beam_halfangle = pose_numbers[9];
        poses.poses = {p};
        poses.traces = {std::vector<cplx>(poses.n_bins, 0.0)};
        poses.is_complex = false;
      }
      std::vector<std::string> warnings;
      const auto pred = novel_view(cfg, ck, poses, &warnings);
      for (const auto& w : warnings) std::cerr << "shsas: warning: " << w << "\n";
      write_sast(out_path, pred);
      if (!report_path.empty()) {
        if (!poses.is_complex) throw UsageError("novel-view: --report needs a complex ground-truth container in --poses");
        ViewErrors total, zero;
        json per_pose = json::array();
        for (std::size_t i = 0; i < pred.traces.size(); ++i) {
          const auto e = view_errors(pred.traces[i], poses.traces[i]);
          total += e;
          zero += view_errors(std::vector<cplx>(poses.n_bins, 0.0), poses.traces[i]);
          per_pose.push_back(to_json(e));
        }
        const json rep = {{"total", to_json(total)}, {"zero_baseline", to_json(zero)}, {"per_pose", per_pose}};
        write_text(report_path, rep.dump(2) + "\n");
        std::cout << json{{"total", to_json(total)}, {"zero_baseline", to_json(zero)}}.dump(2) << "\n";
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "shsas: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "shsas: " << e.what() << "\n";
    return kData;
  } catch (const DivergenceError& e) {
    std::cerr << "shsas: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "shsas: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
