#pragma once

// File formats: SAST transients, SHSG grids, SHSF checkpoints, OBJ, PLY and
// JSON reports.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "shsas/backprojection.hpp"
#include "shsas/core.hpp"
#include "shsas/meshmetrics.hpp"
#include "shsas/neuralfield.hpp"
#include "shsas/simulator.hpp"
#include "shsas/trainer.hpp"

namespace shsas {

namespace io {

// Little-endian byte buffer.
class Writer {
 public:
  template <typename T>
  void put(T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    const auto u = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
  void bytes(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string what) : buf_(std::move(data)), what_(std::move(what)) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(T));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i));
    pos_ += sizeof(T);
    return std::bit_cast<T>(u);
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size())
      throw DataError(what_ + ": truncated header, need " + std::to_string(pos_ + n) + " bytes, file has " +
                      std::to_string(buf_.size()));
  }
  // Payload must fill the rest of the file exactly.
  void expect_remaining(std::uint64_t n) const {
    const std::uint64_t expected = pos_ + n;
    if (expected != buf_.size())
      throw DataError(what_ + ": expected " + std::to_string(expected) + " bytes, got " + std::to_string(buf_.size()));
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw DataError("write to '" + path + "' failed");
}

inline void check_magic(Reader& r, const char* magic, const std::string& what) {
  const std::string m = r.take(4);
  if (m != magic) throw DataError(what + ": bad magic, expected " + magic);
}

}  // namespace io

// ---- transient container ----

inline constexpr std::uint32_t kSastVersion = 1;

struct TransientContainer {
  double fs = 1e5;
  double c = 343.0;
  std::size_t n_bins = 0;
  bool is_complex = false;
  std::vector<SensorPose> poses;
  std::vector<std::vector<cplx>> traces;  // imaginary parts are zero for real data

  // Analytic signals on the bin grid, sample k at time (k + 0.5) / fs.
  std::vector<AnalyticSignal> signals() const {
    std::vector<AnalyticSignal> out(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) out[i] = AnalyticSignal{traces[i], fs, 0.5 / fs};
    return out;
  }
  std::vector<std::vector<double>> real_traces() const {
    std::vector<std::vector<double>> out(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i)
      for (const auto& v : traces[i]) out[i].push_back(v.real());
    return out;
  }
};

inline std::string encode_sast(const TransientContainer& tc) {
  if (tc.poses.size() != tc.traces.size()) throw UsageError("SAST: pose and trace counts differ");
  io::Writer w;
  w.bytes("SAST", 4);
  w.put(kSastVersion);
  w.put(tc.fs);
  w.put(tc.c);
  w.put(static_cast<std::uint32_t>(tc.poses.size()));
  w.put(static_cast<std::uint32_t>(tc.n_bins));
  w.put(static_cast<std::uint8_t>(tc.is_complex ? 1 : 0));
  for (const auto& p : tc.poses) {
    for (const Vec3* v : {&p.tx, &p.rx, &p.boresight})
      for (int a = 0; a < 3; ++a) w.put((*v)[a]);
    w.put(p.beam_halfangle);
  }
  for (const auto& t : tc.traces) {
    if (t.size() != tc.n_bins) throw UsageError("SAST: trace length differs from n_bins");
    for (const auto& v : t) {
      w.put(static_cast<float>(v.real()));
      if (tc.is_complex) w.put(static_cast<float>(v.imag()));
    }
  }
  return w.data();
}

inline TransientContainer decode_sast(std::string data, const std::string& what = "SAST") {
  io::Reader r(std::move(data), what);
  io::check_magic(r, "SAST", what);
  const auto version = r.get<std::uint32_t>();
  if (version != kSastVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  TransientContainer tc;
  tc.fs = r.get<double>();
  tc.c = r.get<double>();
  const auto n_poses = r.get<std::uint32_t>();
  tc.n_bins = r.get<std::uint32_t>();
  const auto flag = r.get<std::uint8_t>();
  if (flag > 1) throw DataError(what + ": complex flag must be 0 or 1");
  tc.is_complex = flag == 1;
  const std::uint64_t pose_bytes = static_cast<std::uint64_t>(n_poses) * 10 * 8;
  const std::uint64_t payload =
      static_cast<std::uint64_t>(n_poses) * tc.n_bins * (tc.is_complex ? 2 : 1) * sizeof(float);
  r.expect_remaining(pose_bytes + payload);
  tc.poses.resize(n_poses);
  for (auto& p : tc.poses) {
    for (Vec3* v : {&p.tx, &p.rx, &p.boresight})
      for (int a = 0; a < 3; ++a) (*v)[a] = r.get<double>();
    p.beam_halfangle = r.get<double>();
  }
  tc.traces.assign(n_poses, std::vector<cplx>(tc.n_bins));
  for (auto& t : tc.traces)
    for (auto& v : t) {
      const float re = r.get<float>();
      const float im = tc.is_complex ? r.get<float>() : 0.0f;
      v = cplx(re, im);
    }
  return tc;
}

inline void write_sast(const std::string& path, const TransientContainer& tc) { io::write_file(path, encode_sast(tc)); }
inline TransientContainer read_sast(const std::string& path) { return decode_sast(io::read_file(path), path); }

// ---- voxel grid ----

template <typename T>
std::string encode_shsg(const VoxelGrid<T>& g) {
  io::Writer w;
  w.bytes("SHSG", 4);
  for (auto d : g.spec.dims) w.put(static_cast<std::uint32_t>(d));
  for (int a = 0; a < 3; ++a) w.put(g.spec.origin[a]);
  w.put(g.spec.spacing);
  for (const auto& v : g.values) {
    const cplx c(v);
    w.put(static_cast<float>(c.real()));
    w.put(static_cast<float>(c.imag()));
  }
  return w.data();
}

inline VoxelGrid<cplx> decode_shsg(std::string data, const std::string& what = "SHSG") {
  io::Reader r(std::move(data), what);
  io::check_magic(r, "SHSG", what);
  GridSpec s;
  for (auto& d : s.dims) d = r.get<std::uint32_t>();
  for (int a = 0; a < 3; ++a) s.origin[a] = r.get<double>();
  s.spacing = r.get<double>();
  r.expect_remaining(static_cast<std::uint64_t>(s.size()) * 2 * sizeof(float));
  if (!(s.spacing > 0.0)) throw DataError(what + ": spacing must be positive");
  VoxelGrid<cplx> g(s);
  for (auto& v : g.values) {
    const float re = r.get<float>();
    const float im = r.get<float>();
    v = cplx(re, im);
  }
  return g;
}

template <typename T>
void write_shsg(const std::string& path, const VoxelGrid<T>& g) {
  io::write_file(path, encode_shsg(g));
}
inline VoxelGrid<cplx> read_shsg(const std::string& path) { return decode_shsg(io::read_file(path), path); }

// ---- checkpoint ----

inline constexpr std::uint32_t kShsfVersion = 1;

struct Checkpoint {
  HashGridConfig grid;
  int degree = 3;
  double zeta = 20.0;
  double signal_scale = 1.0;
  std::vector<double> params;

  NeuralField field() const { return NeuralField(grid, degree, params); }
};

inline std::string encode_shsf(const Checkpoint& ck) {
  io::Writer w;
  w.bytes("SHSF", 4);
  w.put(kShsfVersion);
  const auto& g = ck.grid;
  w.put(static_cast<std::uint32_t>(g.n_levels));
  w.put(static_cast<std::uint32_t>(g.base_res));
  w.put(static_cast<std::uint32_t>(g.max_res));
  w.put(static_cast<std::uint32_t>(g.features_per_level));
  w.put(static_cast<std::uint32_t>(g.table_size_log2));
  for (int a = 0; a < 3; ++a) w.put(g.bbox_min[a]);
  for (int a = 0; a < 3; ++a) w.put(g.bbox_max[a]);
  w.put(static_cast<std::uint32_t>(ck.degree));
  w.put(ck.zeta);
  w.put(ck.signal_scale);
  w.put(static_cast<std::uint64_t>(ck.params.size()));
  for (double p : ck.params) w.put(p);
  return w.data();
}

inline Checkpoint decode_shsf(std::string data, const std::string& what = "SHSF") {
  io::Reader r(std::move(data), what);
  io::check_magic(r, "SHSF", what);
  const auto version = r.get<std::uint32_t>();
  if (version != kShsfVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  auto& g = ck.grid;
  g.n_levels = static_cast<int>(r.get<std::uint32_t>());
  g.base_res = static_cast<int>(r.get<std::uint32_t>());
  g.max_res = static_cast<int>(r.get<std::uint32_t>());
  g.features_per_level = static_cast<int>(r.get<std::uint32_t>());
  g.table_size_log2 = static_cast<int>(r.get<std::uint32_t>());
  for (int a = 0; a < 3; ++a) g.bbox_min[a] = r.get<double>();
  for (int a = 0; a < 3; ++a) g.bbox_max[a] = r.get<double>();
  ck.degree = static_cast<int>(r.get<std::uint32_t>());
  ck.zeta = r.get<double>();
  ck.signal_scale = r.get<double>();
  const auto n = r.get<std::uint64_t>();
  r.expect_remaining(n * 8);
  try {
    validate(g);
    check_degree(ck.degree);
  } catch (const UsageError& e) {
    throw DataError(what + ": " + e.what());
  }
  ck.params.resize(n);
  for (auto& p : ck.params) p = r.get<double>();
  if (n != make_layout(g, ck.degree).total)
    throw DataError(what + ": parameter count " + std::to_string(n) + " does not match the stored configuration");
  return ck;
}

inline void write_shsf(const std::string& path, const Checkpoint& ck) { io::write_file(path, encode_shsf(ck)); }
inline Checkpoint read_shsf(const std::string& path) { return decode_shsf(io::read_file(path), path); }

// ---- OBJ ----

// Objects start at 'o' (or 'g') lines; polygons are fan-triangulated.
inline std::vector<TriMesh> parse_obj(const std::string& text, const std::string& what = "OBJ") {
  std::vector<Vec3> verts;
  std::vector<TriMesh> meshes;
  std::vector<std::map<int, int>> remap;
  auto current = [&]() -> TriMesh& {
    if (meshes.empty()) {
      meshes.emplace_back();
      meshes.back().name = "object";
      remap.emplace_back();
    }
    return meshes.back();
  };
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    auto fail = [&](const std::string& msg) {
      throw DataError(what + ":" + std::to_string(lineno) + ": " + msg);
    };
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) fail("vertex needs three coordinates");
      if (!v.allFinite()) fail("non-finite vertex");
      verts.push_back(v);
    } else if (tag == "o" || tag == "g") {
      std::string name;
      std::getline(ls >> std::ws, name);
      if (!meshes.empty() && meshes.back().faces.empty()) {
        meshes.back().name = name.empty() ? "object" : name;
        continue;
      }
      meshes.emplace_back();
      meshes.back().name = name.empty() ? "object" + std::to_string(meshes.size() - 1) : name;
      remap.emplace_back();
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        int i = 0;
        try {
          i = std::stoi(tok.substr(0, tok.find('/')));
        } catch (...) {
          fail("bad face index '" + tok + "'");
        }
        if (i < 0) i = static_cast<int>(verts.size()) + i + 1;
        if (i < 1 || i > static_cast<int>(verts.size())) fail("face index " + tok + " out of range");
        idx.push_back(i - 1);
      }
      if (idx.size() < 3) fail("face needs at least three vertices");
      TriMesh& m = current();
      auto& rm = remap.back();
      auto local = [&](int g) {
        auto [it, fresh] = rm.emplace(g, static_cast<int>(m.vertices.size()));
        if (fresh) m.vertices.push_back(verts[static_cast<std::size_t>(g)]);
        return it->second;
      };
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) m.faces.push_back({local(idx[0]), local(idx[k]), local(idx[k + 1])});
    }
  }
  std::vector<TriMesh> out;
  for (auto& m : meshes)
    if (!m.faces.empty()) out.push_back(std::move(m));
  return out;
}

inline std::string format_obj(std::span<const TriMesh> meshes) {
  std::ostringstream os;
  os.precision(17);
  int base = 1;
  for (const auto& m : meshes) {
    os << "o " << m.name << "\n";
    for (const auto& v : m.vertices) os << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
    for (const auto& f : m.faces) os << "f " << f[0] + base << " " << f[1] + base << " " << f[2] + base << "\n";
    base += static_cast<int>(m.vertices.size());
  }
  return os.str();
}

inline void write_obj(const std::string& path, std::span<const TriMesh> meshes) {
  io::write_file(path, format_obj(meshes));
}

inline std::vector<TriMesh> read_obj(const std::string& path) { return parse_obj(io::read_file(path), path); }

// Scene from OBJ plus an optional {"object name": reflectivity} sidecar;
// objects missing from the sidecar get reflectivity 1.
inline Scene load_scene(const std::string& obj_path, const std::string& sidecar_path = "") {
  Scene scene;
  nlohmann::json refl = nlohmann::json::object();
  if (!sidecar_path.empty()) {
    try {
      refl = nlohmann::json::parse(io::read_file(sidecar_path));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(sidecar_path + ": " + e.what());
    }
    if (!refl.is_object()) throw DataError(sidecar_path + ": expected an object of reflectivities");
  }
  for (auto& m : read_obj(obj_path)) {
    double r = 1.0;
    if (refl.contains(m.name)) {
      if (!refl[m.name].is_number()) throw DataError(sidecar_path + ": reflectivity of '" + m.name + "' is not a number");
      r = refl[m.name].get<double>();
    }
    compute_face_normals(m);
    scene.objects.push_back({std::move(m), r});
  }
  validate(scene);
  return scene;
}

// ---- PLY ----

inline std::string format_ply(const PointCloud& pc) {
  std::ostringstream os;
  os.precision(17);
  os << "ply\nformat ascii 1.0\nelement vertex " << pc.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const auto& p : pc.points) os << p.x() << " " << p.y() << " " << p.z() << "\n";
  return os.str();
}

inline void write_ply(const std::string& path, const PointCloud& pc) { io::write_file(path, format_ply(pc)); }

// ASCII PLY vertices; x, y, z must be the first three vertex properties.
inline PointCloud parse_ply(const std::string& text, const std::string& what = "PLY") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw DataError(what + ": not a PLY file");
  std::size_t n = 0;
  int props = 0;
  bool in_vertex = false, ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string f;
      ls >> f;
      ascii = f == "ascii";
    } else if (tag == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ls >> n;
    } else if (tag == "property" && in_vertex) {
      ++props;
    } else if (tag == "end_header") {
      break;
    }
  }
  if (!ascii) throw DataError(what + ": only ASCII PLY is supported");
  if (props < 3) throw DataError(what + ": vertex element needs x, y, z");
  PointCloud pc;
  pc.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw DataError(what + ": expected " + std::to_string(n) + " vertices, got " + std::to_string(i));
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z()) || !p.allFinite())
      throw DataError(what + ": bad vertex line " + std::to_string(i));
    pc.points.push_back(p);
  }
  return pc;
}

inline PointCloud read_ply(const std::string& path) { return parse_ply(io::read_file(path), path); }

// ---- JSON reports ----

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"chamfer", r.chamfer}, {"iou", r.iou},         {"precision", r.precision},   {"recall", r.recall},
          {"f1", r.f1},           {"threshold_tau", r.tau}, {"voxel_size", r.voxel_size}, {"n_pred", r.n_pred},
          {"n_ref", r.n_ref}};
}

inline nlohmann::json to_json(const LossBreakdown& b) {
  return {{"tof", b.tof},
          {"sparsity", b.sparsity},
          {"tv_density", b.tv_density},
          {"tv_amplitude", b.tv_amplitude},
          {"tv_phase", b.tv_phase},
          {"total", b.total}};
}

// One JSON object per checkpoint. Wall time is omitted unless requested so
// reports stay byte-identical across reruns.
inline std::string format_train_report(const TrainReport& rep, bool with_timing) {
  std::string out;
  for (const auto& r : rep.records) {
    nlohmann::json j = {{"iteration", r.iteration}, {"batch", to_json(r.batch)}, {"probe", to_json(r.probe)}};
    if (with_timing) j["wall_time_s"] = r.wall_time_s;
    out += j.dump() + "\n";
  }
  nlohmann::json summary = {{"summary", true},
                            {"iterations_run", rep.iterations_run},
                            {"initial_probe_tof", rep.initial_probe_tof},
                            {"final_probe_tof", rep.final_probe_tof},
                            {"diverged", rep.diverged}};
  if (rep.diverged) summary["message"] = rep.message;
  out += summary.dump() + "\n";
  return out;
}

}  // namespace shsas
