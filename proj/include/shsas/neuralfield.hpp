#pragma once

// Multi-resolution hash encoding followed by a 2x32 ReLU MLP that emits the
// real and imaginary channels of degree-L spherical-harmonic coefficients.
// Forward queries can record a tape that the matching backward pass turns
// into exact parameter gradients.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shsas/adam.hpp"
#include "shsas/core.hpp"
#include "shsas/shbasis.hpp"

namespace shsas {

inline constexpr int kMaxLevels = 16;
inline constexpr int kMaxFeatures = 4;
inline constexpr int kHiddenWidth = 32;
inline constexpr int kMaxOutputs = 2 * sh_count(kMaxShDegree);

struct HashGridConfig {
  int n_levels = 16;
  int base_res = 16;
  int max_res = 4096;
  int features_per_level = 2;
  int table_size_log2 = 19;
  Vec3 bbox_min = Vec3::Constant(-1.0);
  Vec3 bbox_max = Vec3::Constant(1.0);

  double growth() const {
    return std::exp(std::log(static_cast<double>(max_res) / base_res) / (n_levels - 1));
  }
  std::size_t table_size() const { return std::size_t{1} << table_size_log2; }
};

inline void validate(const HashGridConfig& cfg) {
  if (cfg.n_levels < 2 || cfg.n_levels > kMaxLevels)
    throw UsageError("HashGridConfig: n_levels must lie in [2, 16]");
  if (cfg.base_res < 1 || cfg.base_res >= cfg.max_res)
    throw UsageError("HashGridConfig: base_res must be positive and below max_res");
  const int f = cfg.features_per_level;
  if (f != 1 && f != 2 && f != 4) throw UsageError("HashGridConfig: features_per_level must be 1, 2 or 4");
  if (cfg.table_size_log2 < 14 || cfg.table_size_log2 > 22)
    throw UsageError("HashGridConfig: table_size_log2 must lie in [14, 22]");
  if (!((cfg.bbox_max - cfg.bbox_min).minCoeff() > 0.0))
    throw UsageError("HashGridConfig: empty bounding box");
}

// floor(base_res * growth^level). The relative nudge keeps exact powers
// (e.g. the top level landing on max_res) from flooring one short.
inline int level_resolution(const HashGridConfig& cfg, int level) {
  if (level < 0 || level >= cfg.n_levels)
    throw UsageError("level_resolution: level " + std::to_string(level) + " out of range");
  const double r = cfg.base_res * std::pow(cfg.growth(), level);
  return static_cast<int>(std::floor(r * (1.0 + 1e-12)));
}

inline constexpr std::uint32_t kHashPrime1 = 1u;
inline constexpr std::uint32_t kHashPrime2 = 2654435761u;
inline constexpr std::uint32_t kHashPrime3 = 805459861u;

// Where each parameter group lives inside the flat parameter vector.
struct FieldLayout {
  std::array<std::size_t, kMaxLevels> level_offset{};
  std::array<std::size_t, kMaxLevels> level_entries{};
  std::array<int, kMaxLevels> level_res{};
  std::array<bool, kMaxLevels> level_dense{};
  std::size_t tables_end = 0;
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, w3 = 0, b3 = 0;
  std::size_t total = 0;
  int in_dim = 0;
  int out_dim = 0;
};

inline FieldLayout make_layout(const HashGridConfig& cfg, int degree) {
  validate(cfg);
  check_degree(degree);
  FieldLayout lay;
  std::size_t off = 0;
  const std::size_t t = cfg.table_size();
  for (int l = 0; l < cfg.n_levels; ++l) {
    const int n = level_resolution(cfg, l);
    const auto side = static_cast<std::size_t>(n) + 1;
    const std::size_t dense = side * side * side;
    lay.level_res[l] = n;
    lay.level_dense[l] = dense <= t;
    lay.level_entries[l] = std::min(dense, t);
    lay.level_offset[l] = off;
    off += lay.level_entries[l] * static_cast<std::size_t>(cfg.features_per_level);
  }
  lay.tables_end = off;
  lay.in_dim = cfg.n_levels * cfg.features_per_level;
  lay.out_dim = 2 * sh_count(degree);
  const auto in = static_cast<std::size_t>(lay.in_dim);
  const auto h = static_cast<std::size_t>(kHiddenWidth);
  const auto out = static_cast<std::size_t>(lay.out_dim);
  lay.w1 = off;
  lay.b1 = lay.w1 + h * in;
  lay.w2 = lay.b1 + h;
  lay.b2 = lay.w2 + h * h;
  lay.w3 = lay.b2 + h;
  lay.b3 = lay.w3 + out * h;
  lay.total = lay.b3 + out;
  return lay;
}

// Scratch record of one forward query.
struct FieldTape {
  std::array<std::array<std::uint32_t, 8>, kMaxLevels> corner{};
  std::array<std::array<double, 8>, kMaxLevels> weight{};
  std::array<double, kMaxLevels * kMaxFeatures> features{};
  std::array<double, kHiddenWidth> h1{};
  std::array<double, kHiddenWidth> h2{};
  bool clamped = false;
};

class NeuralField {
 public:
  using Tape = FieldTape;

  NeuralField() = default;

  // Tables uniform in [-1e-4, 1e-4]; hidden weights uniform with bound
  // sqrt(6 / fan_in); output layer and biases zero, so the initial field is
  // exactly zero.
  NeuralField(const HashGridConfig& cfg, int degree, std::uint64_t seed)
      : cfg_(cfg), degree_(degree), layout_(make_layout(cfg, degree)), params_(layout_.total, 0.0) {
    KeyedRng rng(seed, 0x5eedf1e1dULL);
    for (std::size_t i = 0; i < layout_.tables_end; ++i) params_[i] = rng.uniform(-1e-4, 1e-4);
    auto fill = [&](std::size_t off, std::size_t count, int fan_in) {
      const double bound = std::sqrt(6.0 / fan_in);
      for (std::size_t i = 0; i < count; ++i) params_[off + i] = rng.uniform(-bound, bound);
    };
    const auto h = static_cast<std::size_t>(kHiddenWidth);
    fill(layout_.w1, h * layout_.in_dim, layout_.in_dim);
    fill(layout_.w2, h * h, kHiddenWidth);
  }

  // Wraps an existing parameter vector (e.g. loaded from a checkpoint).
  NeuralField(const HashGridConfig& cfg, int degree, std::vector<double> params)
      : cfg_(cfg), degree_(degree), layout_(make_layout(cfg, degree)), params_(std::move(params)) {
    if (params_.size() != layout_.total)
      throw DataError("NeuralField: parameter count " + std::to_string(params_.size()) + " does not match layout " +
                      std::to_string(layout_.total));
  }

  const HashGridConfig& config() const { return cfg_; }
  const FieldLayout& layout() const { return layout_; }
  int degree() const { return degree_; }
  int outputs() const { return layout_.out_dim; }
  std::size_t num_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Concatenated per-level interpolated features; returns false when x was
  // outside the bounding box and got clamped.
  bool hash_encode(const Vec3& x, std::span<double> features, Tape* tape = nullptr) const {
    const Vec3 ext = cfg_.bbox_max - cfg_.bbox_min;
    Vec3 p = (x - cfg_.bbox_min).cwiseQuotient(ext);
    const bool inside = (p.array() >= 0.0).all() && (p.array() <= 1.0).all();
    p = p.cwiseMax(0.0).cwiseMin(1.0);
    const int nf = cfg_.features_per_level;
    const std::size_t tsize = cfg_.table_size();
    for (int l = 0; l < cfg_.n_levels; ++l) {
      const int n = layout_.level_res[l];
      std::array<int, 3> i0{};
      std::array<double, 3> fr{};
      for (int a = 0; a < 3; ++a) {
        const double pos = p[a] * n;
        int c = static_cast<int>(std::floor(pos));
        c = std::clamp(c, 0, n - 1);
        i0[a] = c;
        fr[a] = pos - c;
      }
      std::array<std::uint32_t, 8> idx{};
      std::array<double, 8> w{};
      const auto side = static_cast<std::uint32_t>(n + 1);
      for (int k = 0; k < 8; ++k) {
        const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
        const auto ci = static_cast<std::uint32_t>(i0[0] + dx);
        const auto cj = static_cast<std::uint32_t>(i0[1] + dy);
        const auto ck = static_cast<std::uint32_t>(i0[2] + dz);
        if (layout_.level_dense[l])
          idx[k] = ci + side * (cj + side * ck);
        else
          idx[k] = static_cast<std::uint32_t>((ci * kHashPrime1 ^ cj * kHashPrime2 ^ ck * kHashPrime3) % tsize);
        w[k] = (dx ? fr[0] : 1.0 - fr[0]) * (dy ? fr[1] : 1.0 - fr[1]) * (dz ? fr[2] : 1.0 - fr[2]);
      }
      const double* table = params_.data() + layout_.level_offset[l];
      for (int f = 0; f < nf; ++f) {
        double acc = 0.0;
        for (int k = 0; k < 8; ++k) acc += w[k] * table[static_cast<std::size_t>(idx[k]) * nf + f];
        features[static_cast<std::size_t>(l * nf + f)] = acc;
      }
      if (tape) {
        tape->corner[l] = idx;
        tape->weight[l] = w;
      }
    }
    if (tape) tape->clamped = !inside;
    return inside;
  }

  // Writes the 2(L+1)^2 raw outputs: real channels first, then imaginary.
  void query(const Vec3& x, std::span<double> out, Tape* tape = nullptr) const {
    Tape local;
    Tape& t = tape ? *tape : local;
    const int in = layout_.in_dim;
    hash_encode(x, std::span<double>(t.features.data(), static_cast<std::size_t>(in)), &t);
    const double* w1 = params_.data() + layout_.w1;
    const double* b1 = params_.data() + layout_.b1;
    const double* w2 = params_.data() + layout_.w2;
    const double* b2 = params_.data() + layout_.b2;
    const double* w3 = params_.data() + layout_.w3;
    const double* b3 = params_.data() + layout_.b3;
    for (int j = 0; j < kHiddenWidth; ++j) {
      double acc = b1[j];
      const double* row = w1 + static_cast<std::size_t>(j) * in;
      for (int i = 0; i < in; ++i) acc += row[i] * t.features[i];
      t.h1[j] = acc > 0.0 ? acc : 0.0;
    }
    for (int j = 0; j < kHiddenWidth; ++j) {
      double acc = b2[j];
      const double* row = w2 + static_cast<std::size_t>(j) * kHiddenWidth;
      for (int i = 0; i < kHiddenWidth; ++i) acc += row[i] * t.h1[i];
      t.h2[j] = acc > 0.0 ? acc : 0.0;
    }
    for (int o = 0; o < layout_.out_dim; ++o) {
      double acc = b3[o];
      const double* row = w3 + static_cast<std::size_t>(o) * kHiddenWidth;
      for (int i = 0; i < kHiddenWidth; ++i) acc += row[i] * t.h2[i];
      out[o] = acc;
    }
  }

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(outputs).
  void backward(const Tape& t, std::span<const double> dout, std::span<double> grad) const {
    const int in = layout_.in_dim;
    const double* w2 = params_.data() + layout_.w2;
    const double* w3 = params_.data() + layout_.w3;
    const double* w1 = params_.data() + layout_.w1;
    double* gw1 = grad.data() + layout_.w1;
    double* gb1 = grad.data() + layout_.b1;
    double* gw2 = grad.data() + layout_.w2;
    double* gb2 = grad.data() + layout_.b2;
    double* gw3 = grad.data() + layout_.w3;
    double* gb3 = grad.data() + layout_.b3;

    std::array<double, kHiddenWidth> dh2{}, dh1{};
    for (int o = 0; o < layout_.out_dim; ++o) {
      const double g = dout[o];
      if (g == 0.0) continue;
      gb3[o] += g;
      double* grow = gw3 + static_cast<std::size_t>(o) * kHiddenWidth;
      const double* row = w3 + static_cast<std::size_t>(o) * kHiddenWidth;
      for (int i = 0; i < kHiddenWidth; ++i) {
        grow[i] += g * t.h2[i];
        dh2[i] += g * row[i];
      }
    }
    for (int j = 0; j < kHiddenWidth; ++j) {
      if (t.h2[j] <= 0.0) continue;
      const double g = dh2[j];
      gb2[j] += g;
      double* grow = gw2 + static_cast<std::size_t>(j) * kHiddenWidth;
      const double* row = w2 + static_cast<std::size_t>(j) * kHiddenWidth;
      for (int i = 0; i < kHiddenWidth; ++i) {
        grow[i] += g * t.h1[i];
        dh1[i] += g * row[i];
      }
    }
    std::array<double, kMaxLevels * kMaxFeatures> dfeat{};
    for (int j = 0; j < kHiddenWidth; ++j) {
      if (t.h1[j] <= 0.0) continue;
      const double g = dh1[j];
      gb1[j] += g;
      double* grow = gw1 + static_cast<std::size_t>(j) * in;
      const double* row = w1 + static_cast<std::size_t>(j) * in;
      for (int i = 0; i < in; ++i) {
        grow[i] += g * t.features[i];
        dfeat[i] += g * row[i];
      }
    }
    const int nf = cfg_.features_per_level;
    for (int l = 0; l < cfg_.n_levels; ++l) {
      double* table = grad.data() + layout_.level_offset[l];
      for (int f = 0; f < nf; ++f) {
        const double g = dfeat[static_cast<std::size_t>(l * nf + f)];
        if (g == 0.0) continue;
        for (int k = 0; k < 8; ++k) table[static_cast<std::size_t>(t.corner[l][k]) * nf + f] += g * t.weight[l][k];
      }
    }
  }

 private:
  HashGridConfig cfg_;
  int degree_ = 0;
  FieldLayout layout_;
  std::vector<double> params_;
};

// Closed-form field for tests and synthetic scenes: the callback writes the
// raw 2(L+1)^2 outputs directly, bypassing the network. Has no parameters.
class AnalyticField {
 public:
  struct Tape {};
  using Fn = std::function<void(const Vec3&, std::span<double>)>;

  AnalyticField(int degree, Fn fn) : degree_(degree), fn_(std::move(fn)) { check_degree(degree); }

  int degree() const { return degree_; }
  int outputs() const { return 2 * sh_count(degree_); }
  std::size_t num_params() const { return 0; }
  void query(const Vec3& x, std::span<double> out, Tape* = nullptr) const {
    std::fill(out.begin(), out.end(), 0.0);
    fn_(x, out);
  }
  void backward(const Tape&, std::span<const double>, std::span<double>) const {}

 private:
  int degree_;
  Fn fn_;
};

// Isotropic analytic field whose DC amplitude is `amplitude(x)`.
inline AnalyticField isotropic_field(int degree, std::function<cplx(const Vec3&)> amplitude) {
  const int nc = sh_count(degree);
  return AnalyticField(degree, [amplitude, nc](const Vec3& x, std::span<double> out) {
    const cplx a = amplitude(x) / kInvSqrt4Pi;
    out[0] = a.real();
    out[static_cast<std::size_t>(nc)] = a.imag();
  });
}

template <typename Field>
SHCoeffs field_query(const Field& field, const Vec3& x) {
  std::array<double, kMaxOutputs> raw{};
  const int nc = sh_count(field.degree());
  field.query(x, std::span<double>(raw.data(), static_cast<std::size_t>(2 * nc)));
  SHCoeffs c(field.degree());
  for (int k = 0; k < nc; ++k) c.c[k] = {raw[k], raw[k + nc]};
  return c;
}

// DC amplitude sigma_DC = c00 / sqrt(4 pi) straight from the raw outputs.
inline cplx dc_from_raw(std::span<const double> raw, int degree) {
  return cplx(raw[0], raw[static_cast<std::size_t>(sh_count(degree))]) * kInvSqrt4Pi;
}

template <typename Field>
cplx dc_at(const Field& field, const Vec3& x) {
  std::array<double, kMaxOutputs> raw{};
  field.query(x, std::span<double>(raw.data(), static_cast<std::size_t>(field.outputs())));
  return dc_from_raw(raw, field.degree());
}

// rho = |sigma_DC| * zeta.
template <typename Field>
double density(const Field& field, const Vec3& x, double zeta) {
  if (zeta < 0.0) throw UsageError("density: zeta must be non-negative");
  return std::abs(dc_at(field, x)) * zeta;
}

// Central-difference gradient of a scalar function.
template <typename Fn>
Vec3 central_gradient(Fn&& f, const Vec3& x, double h) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    g[a] = (f(x + e) - f(x - e)) / (2.0 * h);
  }
  return g;
}

inline constexpr double kFlatGradient = 1e-12;

// n = -grad m / |grad m| for a DC-magnitude function m; none when flat.
template <typename Fn>
std::optional<Vec3> normal_from_magnitude(Fn&& magnitude, const Vec3& x, double h) {
  if (!(h > 0.0)) throw UsageError("normal: step must be positive");
  const Vec3 g = central_gradient(magnitude, x, h);
  const double n = g.norm();
  if (!(n >= kFlatGradient)) return std::nullopt;
  return Vec3(-g / n);
}

template <typename Field>
std::optional<Vec3> normal(const Field& field, const Vec3& x, double h) {
  return normal_from_magnitude([&](const Vec3& p) { return std::abs(dc_at(field, p)); }, x, h);
}

}  // namespace shsas
