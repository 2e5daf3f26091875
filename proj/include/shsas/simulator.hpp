#pragma once

// Ground-truth transient simulator: one-bounce geometric acoustics over
// triangle meshes. Each TX ray deposits its return into the travel-time bin
// k = floor(l * fs / c) of its round-trip path length l.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "shsas/core.hpp"
#include "shsas/geometry.hpp"
#include "shsas/renderer.hpp"
#include "shsas/signal.hpp"

namespace shsas {

struct TriMesh {
  std::string name;
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec3> normals;  // per face, unit

  std::size_t size() const { return faces.size(); }
};

// Recomputes unit face normals from the winding order.
inline void compute_face_normals(TriMesh& m) {
  m.normals.resize(m.faces.size());
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const auto& t = m.faces[f];
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || static_cast<std::size_t>(t[k]) >= m.vertices.size())
        throw DataError("TriMesh '" + m.name + "': face index out of range");
    const Vec3 e1 = m.vertices[t[1]] - m.vertices[t[0]];
    const Vec3 e2 = m.vertices[t[2]] - m.vertices[t[0]];
    const Vec3 n = e1.cross(e2);
    if (!(0.5 * n.norm() > 1e-12)) throw DataError("TriMesh '" + m.name + "': degenerate triangle " + std::to_string(f));
    m.normals[f] = n.normalized();
  }
}

inline double triangle_area(const TriMesh& m, std::size_t f) {
  const auto& t = m.faces[f];
  return 0.5 * (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]).norm();
}

struct SceneObject {
  TriMesh mesh;
  double reflectivity = 1.0;
};

struct Scene {
  std::vector<SceneObject> objects;

  Aabb bounds() const {
    Aabb box;
    box.setEmpty();
    for (const auto& o : objects)
      for (const auto& v : o.mesh.vertices) box.extend(v);
    return box;
  }
};

inline void validate(const Scene& scene) {
  for (const auto& o : scene.objects)
    if (o.reflectivity < 0.0 || o.reflectivity > 1.0)
      throw DataError("Scene: reflectivity of '" + o.mesh.name + "' outside [0, 1]");
}

// ---------------------------------------------------------------------------
// Bounding volume hierarchy with median splits on the widest centroid axis.

class Bvh {
 public:
  struct Hit {
    double t = 0.0;
    std::size_t object = 0;
    std::size_t face = 0;
  };

  explicit Bvh(const Scene& scene) : scene_(&scene) {
    for (std::size_t o = 0; o < scene.objects.size(); ++o)
      for (std::size_t f = 0; f < scene.objects[o].mesh.size(); ++f) prims_.push_back({o, f});
    if (prims_.empty()) return;
    nodes_.emplace_back();
    build_into(0, 0, prims_.size());
  }

  std::optional<Hit> intersect(const Vec3& origin, const Vec3& dir) const {
    if (nodes_.empty()) return std::nullopt;
    const Vec3 inv = dir.cwiseInverse();
    std::optional<Hit> best;
    double tmax = std::numeric_limits<double>::infinity();
    std::array<std::size_t, 128> stack{};
    std::size_t sp = 0;
    stack[sp++] = 0;
    while (sp) {
      const Node& n = nodes_[stack[--sp]];
      if (!slab(n.box, origin, inv, tmax)) continue;
      if (n.count) {
        for (std::size_t i = n.start; i < n.start + n.count; ++i) {
          const auto [o, f] = prims_[i];
          const double t = triangle(o, f, origin, dir);
          if (t > 1e-9 && t < tmax) {
            tmax = t;
            best = Hit{t, o, f};
          }
        }
      } else {
        stack[sp++] = n.left;
        stack[sp++] = n.left + 1;
      }
    }
    return best;
  }

 private:
  struct Node {
    Aabb box;
    std::size_t left = 0;  // children at left, left + 1
    std::size_t start = 0;
    std::size_t count = 0;
  };
  struct Prim {
    std::size_t object;
    std::size_t face;
  };

  const Vec3& vert(const Prim& p, int k) const {
    const auto& m = scene_->objects[p.object].mesh;
    return m.vertices[m.faces[p.face][k]];
  }

  Vec3 centroid(const Prim& p) const { return (vert(p, 0) + vert(p, 1) + vert(p, 2)) / 3.0; }

  void build_into(std::size_t slot, std::size_t begin, std::size_t end) {
    Aabb box, cbox;
    box.setEmpty();
    cbox.setEmpty();
    for (std::size_t i = begin; i < end; ++i) {
      for (int k = 0; k < 3; ++k) box.extend(vert(prims_[i], k));
      cbox.extend(centroid(prims_[i]));
    }
    nodes_[slot].box = box;
    if (end - begin <= 4) {
      nodes_[slot].start = begin;
      nodes_[slot].count = end - begin;
      return;
    }
    int axis = 0;
    cbox.sizes().maxCoeff(&axis);
    const std::size_t mid = (begin + end) / 2;
    std::nth_element(prims_.begin() + static_cast<std::ptrdiff_t>(begin), prims_.begin() + static_cast<std::ptrdiff_t>(mid),
                     prims_.begin() + static_cast<std::ptrdiff_t>(end), [&](const Prim& a, const Prim& b) {
                       const double ca = centroid(a)[axis], cb = centroid(b)[axis];
                       if (ca != cb) return ca < cb;
                       return std::tie(a.object, a.face) < std::tie(b.object, b.face);
                     });
    const std::size_t left = nodes_.size();
    nodes_.resize(left + 2);
    nodes_[slot].left = left;
    build_into(left, begin, mid);
    build_into(left + 1, mid, end);
  }

  static bool slab(const Aabb& box, const Vec3& o, const Vec3& inv, double tmax) {
    double t0 = 0.0, t1 = tmax;
    for (int a = 0; a < 3; ++a) {
      double ta = (box.min()[a] - o[a]) * inv[a];
      double tb = (box.max()[a] - o[a]) * inv[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    return true;
  }

  // Moller-Trumbore; returns a negative value on a miss.
  double triangle(std::size_t o, std::size_t f, const Vec3& orig, const Vec3& dir) const {
    const Prim p{o, f};
    const Vec3& v0 = vert(p, 0);
    const Vec3 e1 = vert(p, 1) - v0;
    const Vec3 e2 = vert(p, 2) - v0;
    const Vec3 pv = dir.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-15) return -1.0;
    const double inv = 1.0 / det;
    const Vec3 tv = orig - v0;
    const double u = tv.dot(pv) * inv;
    if (u < 0.0 || u > 1.0) return -1.0;
    const Vec3 qv = tv.cross(e1);
    const double v = dir.dot(qv) * inv;
    if (v < 0.0 || u + v > 1.0) return -1.0;
    return e2.dot(qv) * inv;
  }

  const Scene* scene_;
  std::vector<Prim> prims_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------

struct SimConfig {
  std::size_t n_bins = 2048;
  double fs = 100e3;
  double c = 343.0;
  std::size_t rays_per_pose = 4096;
  std::optional<double> snr_db = 20.0;
  std::uint64_t seed = 0;
  double spreading_exponent = 2.0;
  BeamPattern tx_beam{BeamKind::cosine_power, 2.0, kPi / 6.0};
};

inline void validate(const SimConfig& cfg) {
  if (cfg.n_bins < 1 || !(cfg.fs > 0.0) || !(cfg.c > 0.0) || cfg.rays_per_pose < 1)
    throw UsageError("SimConfig: invalid settings");
}

// Travel-time histogram of one pose. Each ray's deposit is
// reflectivity * lambertian * b_T / l^p, averaged over rays_per_pose.
inline std::vector<double> trace_transient(const Bvh& bvh, const Scene& scene, const SensorPose& pose,
                                           const SimConfig& cfg, std::uint64_t pose_index = 0) {
  validate(cfg);
  std::vector<double> hist(cfg.n_bins, 0.0);
  BeamPattern bp = cfg.tx_beam;
  bp.halfangle = pose.beam_halfangle;
  const double inv_rays = 1.0 / static_cast<double>(cfg.rays_per_pose);
  for (std::size_t r = 0; r < cfg.rays_per_pose; ++r) {
    KeyedRng rng(cfg.seed, pose_index, r);
    const Vec3 dir = sample_cone(pose.boresight, pose.beam_halfangle, rng);
    const auto hit = bvh.intersect(pose.tx, dir);
    if (!hit) continue;
    const Vec3 x = pose.tx + hit->t * dir;
    const double path = (x - pose.tx).norm() + (x - pose.rx).norm();
    const double kf = std::floor(path * cfg.fs / cfg.c);
    if (kf < 0.0 || kf >= static_cast<double>(cfg.n_bins)) continue;
    const auto& obj = scene.objects[hit->object];
    const double g = lambertian(obj.mesh.normals[hit->face], x, pose.tx);
    const double b = beam_weight(bp, pose.boresight, pose.tx, x);
    hist[static_cast<std::size_t>(kf)] += obj.reflectivity * g * b * std::pow(path, -cfg.spreading_exponent) * inv_rays;
  }
  return hist;
}

inline std::vector<double> trace_transient(const Scene& scene, const SensorPose& pose, const SimConfig& cfg,
                                           std::uint64_t pose_index = 0) {
  const Bvh bvh(scene);
  return trace_transient(bvh, scene, pose, cfg, pose_index);
}

inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

// (hist * p)[k] truncated to len(hist), plus white Gaussian noise with
// sigma = rms(clean) * 10^(-snr/20) when an SNR is given.
inline std::vector<double> render_measurement(std::span<const double> hist, const Pulse& p,
                                              std::optional<double> snr_db, std::uint64_t seed) {
  if (hist.empty()) throw UsageError("render_measurement: empty histogram");
  const std::size_t n = hist.size();
  std::vector<double> y(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const double h = hist[j];
    if (h == 0.0) continue;
    const std::size_t mmax = std::min(p.size(), n - j);
    for (std::size_t m = 0; m < mmax; ++m) y[j + m] += h * p.samples[m];
  }
  if (snr_db) {
    const double sigma = rms(y) * std::pow(10.0, -*snr_db / 20.0);
    if (sigma > 0.0) {
      std::mt19937_64 gen(detail::splitmix64(seed ^ 0x6e6f697365ULL));
      std::normal_distribution<double> noise(0.0, sigma);
      for (auto& v : y) v += noise(gen);
    }
  }
  return y;
}

using Aperture = std::vector<SensorPose>;

// Rings of n_azimuth poses around the vertical axis through look_at, one per
// height (absolute z). TX and RX sit +-tx_rx_offset/2 along the ring tangent.
inline Aperture make_circular_aperture(double radius, std::size_t n_azimuth, std::span<const double> heights,
                                       const Vec3& look_at, double beam_halfangle = kPi / 6.0,
                                       double tx_rx_offset = 0.0) {
  if (n_azimuth < 1 || !(radius > 0.0)) throw UsageError("make_circular_aperture: need radius > 0 and n_azimuth >= 1");
  Aperture ap;
  ap.reserve(n_azimuth * heights.size());
  for (double z : heights) {
    for (std::size_t i = 0; i < n_azimuth; ++i) {
      const double phi = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n_azimuth);
      const Vec3 radial(std::cos(phi), std::sin(phi), 0.0);
      const Vec3 tangent(-std::sin(phi), std::cos(phi), 0.0);
      const Vec3 mid(look_at.x() + radius * radial.x(), look_at.y() + radius * radial.y(), z);
      SensorPose p;
      p.tx = mid - 0.5 * tx_rx_offset * tangent;
      p.rx = mid + 0.5 * tx_rx_offset * tangent;
      p.boresight = (look_at - mid).normalized();
      p.beam_halfangle = beam_halfangle;
      ap.push_back(p);
    }
  }
  return ap;
}

// Sorted indices of a uniformly random subset of size round(fraction * n).
inline std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw UsageError("subsample_aperture: fraction must lie in (0, 1]");
  const auto keep = std::min(n, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  KeyedRng rng(seed, 0x5b5a3b1eULL);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - i));
    std::swap(idx[i], idx[std::min(j, n - 1)]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Aperture subsample_aperture(const Aperture& ap, double fraction, std::uint64_t seed) {
  Aperture out;
  for (std::size_t i : subsample_indices(ap.size(), fraction, seed)) out.push_back(ap[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Procedural meshes for synthetic scenes.

inline TriMesh make_icosphere(const Vec3& center, double radius, int subdivisions, std::string name = "sphere") {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::vector<std::array<int, 3>> nf;
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = mid.find(key); it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = static_cast<int>(v.size()) - 1;
    };
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      nf.push_back({tri[0], a, c});
      nf.push_back({tri[1], b, a});
      nf.push_back({tri[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  TriMesh m;
  m.name = std::move(name);
  for (const auto& p : v) m.vertices.push_back(center + radius * p);
  m.faces = std::move(f);
  compute_face_normals(m);
  return m;
}

// Axis-aligned box with outward normals.
inline TriMesh make_box(const Vec3& lo, const Vec3& hi, std::string name = "box") {
  TriMesh m;
  m.name = std::move(name);
  for (int k = 0; k < 8; ++k)
    m.vertices.emplace_back((k & 1) ? hi.x() : lo.x(), (k & 2) ? hi.y() : lo.y(), (k & 4) ? hi.z() : lo.z());
  m.faces = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
             {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  compute_face_normals(m);
  return m;
}

// Square plate of side `size` centered at `center`, facing `normal`. Its
// back side returns nothing (one-sided Lambertian facet).
inline TriMesh make_plate(const Vec3& center, const Vec3& normal, double size, int divisions = 1,
                          std::string name = "plate") {
  const Vec3 n = normal.normalized();
  const Mat3 f = frame_from_axis(n);
  const Vec3 u = f.col(1), w = f.col(2);
  TriMesh m;
  m.name = std::move(name);
  const int k = std::max(1, divisions);
  for (int j = 0; j <= k; ++j)
    for (int i = 0; i <= k; ++i)
      m.vertices.push_back(center + size * ((i / double(k) - 0.5) * u + (j / double(k) - 0.5) * w));
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < k; ++i) {
      const int a = j * (k + 1) + i, b = a + 1, c = a + (k + 1), d = c + 1;
      m.faces.push_back({a, b, d});
      m.faces.push_back({a, d, c});
    }
  compute_face_normals(m);
  // u x w = n, so the winding above already faces +n.
  return m;
}

}  // namespace shsas
