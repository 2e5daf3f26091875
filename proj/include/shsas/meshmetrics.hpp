#pragma once

// Density grids, marching cubes and point-cloud metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "shsas/backprojection.hpp"
#include "shsas/core.hpp"
#include "shsas/detail/mc_tables.hpp"
#include "shsas/neuralfield.hpp"
#include "shsas/simulator.hpp"

namespace shsas {

// rho = zeta |sigma_DC| sampled at voxel centers.
template <typename Field>
VoxelGrid<double> eval_density_grid(const Field& field, double zeta, const GridSpec& spec) {
  VoxelGrid<double> grid(spec);
  const auto nout = static_cast<std::size_t>(field.outputs());
  parallel_for(spec.size(), [&](std::size_t begin, std::size_t end, std::size_t) {
    std::array<double, kMaxOutputs> raw{};
    for (std::size_t v = begin; v < end; ++v) {
      field.query(spec.center(v), std::span<double>(raw.data(), nout), nullptr);
      grid.values[v] = zeta * std::abs(dc_from_raw(raw, field.degree()));
    }
  });
  return grid;
}

template <typename T>
std::pair<double, double> grid_range(const VoxelGrid<T>& grid) {
  if (grid.values.empty()) return {0.0, 0.0};
  double lo = std::abs(grid.values[0]), hi = lo;
  for (const auto& v : grid.values) {
    lo = std::min<double>(lo, std::abs(v));
    hi = std::max<double>(hi, std::abs(v));
  }
  return {lo, hi};
}

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  bool empty() const { return faces.empty(); }
};

namespace detail {

inline constexpr int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                             {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
inline constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6},
                                            {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// lower corner offset and axis of each edge, for sharing vertices between cells
inline constexpr int kEdgeAxis[12] = {0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2};

}  // namespace detail

// Isosurface of a real grid. Corners below iso count as inside. Returns an
// empty mesh when iso is not strictly between the grid's min and max.
inline Mesh marching_cubes(const VoxelGrid<double>& grid, double iso) {
  Mesh mesh;
  if (grid.values.empty()) return mesh;
  const auto [lo, hi] = std::minmax_element(grid.values.begin(), grid.values.end());
  if (!(iso > *lo && iso < *hi)) return mesh;
  const auto& s = grid.spec;
  const std::size_t nx = s.dims[0], ny = s.dims[1], nz = s.dims[2];
  if (nx < 2 || ny < 2 || nz < 2) return mesh;
  std::unordered_map<std::uint64_t, int> edge_vertex;

  auto value = [&](std::size_t i, std::size_t j, std::size_t k) { return grid.values[s.index(i, j, k)]; };

  for (std::size_t k = 0; k + 1 < nz; ++k)
    for (std::size_t j = 0; j + 1 < ny; ++j)
      for (std::size_t i = 0; i + 1 < nx; ++i) {
        std::array<double, 8> v{};
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          v[c] = value(i + detail::kCornerOffset[c][0], j + detail::kCornerOffset[c][1], k + detail::kCornerOffset[c][2]);
          if (v[c] < iso) cube |= 1 << c;
        }
        if (detail::kMcEdgeTable[cube] == 0) continue;
        std::array<int, 12> ids{};
        for (int e = 0; e < 12; ++e) {
          if (!(detail::kMcEdgeTable[cube] & (1 << e))) continue;
          const int a = detail::kEdgeCorners[e][0], b = detail::kEdgeCorners[e][1];
          const std::size_t gi = i + detail::kCornerOffset[a][0];
          const std::size_t gj = j + detail::kCornerOffset[a][1];
          const std::size_t gk = k + detail::kCornerOffset[a][2];
          const std::uint64_t key = 3 * static_cast<std::uint64_t>(s.index(gi, gj, gk)) + detail::kEdgeAxis[e];
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) {
            ids[e] = it->second;
            continue;
          }
          // a is always the lower corner along the edge axis
          const Vec3 pa = s.center(gi, gj, gk);
          Vec3 pb = pa;
          pb[detail::kEdgeAxis[e]] += s.spacing;
          const double dv = v[b] - v[a];
          const double t = dv != 0.0 ? std::clamp((iso - v[a]) / dv, 0.0, 1.0) : 0.5;
          ids[e] = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(pa + t * (pb - pa));
          edge_vertex.emplace(key, ids[e]);
        }
        for (int t = 0; detail::kMcTriTable[cube][t] != -1; t += 3)
          mesh.faces.push_back({ids[detail::kMcTriTable[cube][t]], ids[detail::kMcTriTable[cube][t + 1]],
                                ids[detail::kMcTriTable[cube][t + 2]]});
      }
  return mesh;
}

inline TriMesh to_trimesh(const Mesh& m, std::string name = "mesh") {
  TriMesh t;
  t.name = std::move(name);
  t.vertices = m.vertices;
  t.faces = m.faces;
  return t;
}

// Exact nearest-neighbour queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> pts) : pts_(pts.begin(), pts.end()), idx_(pts.size()) {
    std::iota(idx_.begin(), idx_.end(), 0);
    if (!idx_.empty()) build(0, idx_.size(), 0);
  }

  bool empty() const { return pts_.empty(); }

  // squared distance to the nearest point
  double nearest_sq(const Vec3& q) const {
    if (pts_.empty()) throw UsageError("KdTree: query on empty point set");
    double best = std::numeric_limits<double>::infinity();
    search(0, idx_.size(), 0, q, best);
    return best;
  }

 private:
  static constexpr std::size_t kLeaf = 8;

  void build(std::size_t begin, std::size_t end, int depth) {
    if (end - begin <= kLeaf) return;
    const int axis = depth % 3;
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(begin), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                     idx_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    build(begin, mid, depth + 1);
    build(mid + 1, end, depth + 1);
  }

  void search(std::size_t begin, std::size_t end, int depth, const Vec3& q, double& best) const {
    if (end - begin <= kLeaf) {
      for (std::size_t i = begin; i < end; ++i) best = std::min(best, (pts_[idx_[i]] - q).squaredNorm());
      return;
    }
    const int axis = depth % 3;
    const std::size_t mid = begin + (end - begin) / 2;
    const Vec3& p = pts_[idx_[mid]];
    best = std::min(best, (p - q).squaredNorm());
    const double diff = q[axis] - p[axis];
    if (diff < 0.0) {
      search(begin, mid, depth + 1, q, best);
      if (diff * diff < best) search(mid + 1, end, depth + 1, q, best);
    } else {
      search(mid + 1, end, depth + 1, q, best);
      if (diff * diff < best) search(begin, mid, depth + 1, q, best);
    }
  }

  std::vector<Vec3> pts_;
  std::vector<std::size_t> idx_;
};

inline std::vector<double> nearest_distances_sq(const PointCloud& from, const KdTree& to) {
  std::vector<double> d(from.size());
  parallel_for(from.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) d[i] = to.nearest_sq(from.points[i]);
  });
  return d;
}

enum class ChamferMode { squared, absolute };

// Symmetric Chamfer distance: mean nearest distance A->B plus B->A.
inline double chamfer(const PointCloud& a, const PointCloud& b, ChamferMode mode = ChamferMode::squared) {
  if (a.empty() || b.empty()) throw DataError("chamfer: empty point cloud");
  const KdTree ta(a.points), tb(b.points);
  auto mean = [&](const std::vector<double>& d) {
    double s = 0.0;
    for (double v : d) s += mode == ChamferMode::squared ? v : std::sqrt(v);
    return s / static_cast<double>(d.size());
  };
  return mean(nearest_distances_sq(a, tb)) + mean(nearest_distances_sq(b, ta));
}

struct MetricReport {
  double chamfer = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double tau = 0.0;
  double voxel_size = 0.0;
  std::size_t n_pred = 0;
  std::size_t n_ref = 0;
};

namespace detail {

struct VoxelKeyHash {
  std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
    std::uint64_t h = 0;
    for (auto v : k) h = splitmix64(h ^ static_cast<std::uint64_t>(v));
    return static_cast<std::size_t>(h);
  }
};

using VoxelSet = std::unordered_set<std::array<std::int64_t, 3>, VoxelKeyHash>;

inline VoxelSet voxelize(const PointCloud& pc, double voxel) {
  VoxelSet s;
  for (const auto& p : pc.points)
    s.insert({static_cast<std::int64_t>(std::floor(p.x() / voxel)), static_cast<std::int64_t>(std::floor(p.y() / voxel)),
              static_cast<std::int64_t>(std::floor(p.z() / voxel))});
  return s;
}

}  // namespace detail

// Voxel IoU at `voxel` size, and precision / recall / F1 at distance tau.
// pred is the reconstruction, ref the ground truth.
inline MetricReport iou_precision_f1(const PointCloud& pred, const PointCloud& ref, double tau, double voxel) {
  if (!(tau > 0.0) || !(voxel > 0.0)) throw UsageError("metrics: tau and voxel size must be positive");
  if (pred.empty() || ref.empty()) throw DataError("metrics: empty point cloud");
  MetricReport r;
  r.tau = tau;
  r.voxel_size = voxel;
  r.n_pred = pred.size();
  r.n_ref = ref.size();
  const auto va = detail::voxelize(pred, voxel), vb = detail::voxelize(ref, voxel);
  std::size_t inter = 0;
  for (const auto& k : va) inter += vb.count(k);
  const std::size_t uni = va.size() + vb.size() - inter;
  r.iou = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;

  const KdTree tp(pred.points), tr(ref.points);
  const double t2 = tau * tau;
  auto frac = [&](const std::vector<double>& d) {
    std::size_t n = 0;
    for (double v : d) n += v <= t2;
    return static_cast<double>(n) / static_cast<double>(d.size());
  };
  r.precision = frac(nearest_distances_sq(pred, tr));
  r.recall = frac(nearest_distances_sq(ref, tp));
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

inline MetricReport evaluate_clouds(const PointCloud& pred, const PointCloud& ref, double tau, double voxel,
                                    ChamferMode mode = ChamferMode::squared) {
  MetricReport r = iou_precision_f1(pred, ref, tau, voxel);
  r.chamfer = chamfer(pred, ref, mode);
  return r;
}

// Area-weighted uniform samples on the surface.
inline PointCloud mesh_to_pointcloud(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.faces.empty()) throw DataError("mesh_to_pointcloud: mesh '" + mesh.name + "' has no faces");
  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (int v : mesh.faces[f])
      if (v < 0 || static_cast<std::size_t>(v) >= mesh.vertices.size())
        throw DataError("mesh_to_pointcloud: face " + std::to_string(f) + " index out of range");
    total += triangle_area(mesh, f);
    cum[f] = total;
  }
  if (!(total > 0.0)) throw DataError("mesh_to_pointcloud: mesh '" + mesh.name + "' has zero area");
  PointCloud pc;
  pc.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    KeyedRng rng(seed, i, 0x6d657368);
    const double u = rng.uniform() * total;
    auto f = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    f = std::min(f, cum.size() - 1);
    const auto& tri = mesh.faces[f];
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    pc.points[i] = (1.0 - r1) * mesh.vertices[tri[0]] + r1 * (1.0 - r2) * mesh.vertices[tri[1]] +
                   r1 * r2 * mesh.vertices[tri[2]];
  }
  return pc;
}

inline PointCloud scene_to_pointcloud(const Scene& scene, std::size_t n, std::uint64_t seed) {
  TriMesh all;
  all.name = "scene";
  for (const auto& o : scene.objects) {
    const int base = static_cast<int>(all.vertices.size());
    all.vertices.insert(all.vertices.end(), o.mesh.vertices.begin(), o.mesh.vertices.end());
    for (const auto& f : o.mesh.faces) all.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
  }
  return mesh_to_pointcloud(all, n, seed);
}

}  // namespace shsas
