#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "shsas/shbasis.hpp"

using namespace shsas;

namespace {

// 128 x 256 grid at cell midpoints. Polar weights integrate exactly in
// cos(theta) (Fejer's first rule); the plain sin(theta) dtheta midpoint
// weights are only second-order accurate.
struct Quadrature {
  std::vector<Direction> dirs;
  std::vector<double> w;
};

Quadrature sphere_grid(int nt = 128, int np = 256) {
  Quadrature q;
  for (int i = 0; i < nt; ++i) {
    const double th = (i + 0.5) * kPi / nt;
    double s = 0.0;
    for (int k = 1; k <= nt / 2; ++k) s += std::cos(2.0 * k * th) / (4.0 * k * k - 1.0);
    const double wt = 2.0 / nt * (1.0 - 2.0 * s);
    for (int j = 0; j < np; ++j) {
      q.dirs.push_back({th, (j + 0.5) * 2.0 * kPi / np});
      q.w.push_back(wt * 2.0 * kPi / np);
    }
  }
  return q;
}

SHCoeffs random_coeffs(int degree, std::uint64_t seed) {
  KeyedRng rng(seed);
  SHCoeffs c(degree);
  for (auto& v : c.c) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return c;
}

}  // namespace

TEST(Basis, ConstantHarmonic) {
  KeyedRng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Direction d{rng.uniform(0, kPi), rng.uniform(0, 2 * kPi)};
    EXPECT_NEAR(eval_sh_basis(3, d)[0], 1.0 / std::sqrt(4.0 * kPi), 1e-15);
  }
  EXPECT_NEAR(eval_sh_basis(0, {})[0], 0.2820947918, 1e-10);
}

TEST(Basis, ZonalOnAxis) {
  const auto y = eval_sh_basis(1, {0.0, 0.0});
  ASSERT_EQ(y.size(), 4u);
  EXPECT_NEAR(y[sh_index(1, 0)], std::sqrt(3.0 / (4.0 * kPi)), 1e-15);
  EXPECT_NEAR(y[sh_index(1, 0)], 0.4886025119, 1e-10);
  EXPECT_NEAR(y[sh_index(1, -1)], 0.0, 1e-15);
  EXPECT_NEAR(y[sh_index(1, 1)], 0.0, 1e-15);
}

TEST(Basis, LengthPerDegree) {
  for (int l = 0; l <= 3; ++l) EXPECT_EQ(eval_sh_basis(l, {0.3, 0.4}).size(), static_cast<std::size_t>((l + 1) * (l + 1)));
  EXPECT_THROW(eval_sh_basis(4, {}), UsageError);
  EXPECT_THROW(eval_sh_basis(-1, {}), UsageError);
}

TEST(Basis, OrthonormalUnderQuadrature) {
  const auto q = sphere_grid();
  double gram[16][16] = {};
  for (std::size_t n = 0; n < q.dirs.size(); ++n) {
    const auto y = eval_sh_basis(3, q.dirs[n]);
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) gram[i][j] += q.w[n] * y[i] * y[j];
  }
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) EXPECT_NEAR(gram[i][j], i == j ? 1.0 : 0.0, 1e-6) << i << "," << j;
}

TEST(Scatter, IsotropicDc) {
  SHCoeffs c(3);
  c.c[0] = std::sqrt(4.0 * kPi);
  KeyedRng rng(2);
  for (int i = 0; i < 20; ++i) {
    const cplx v = eval_scatter(c, {rng.uniform(0, kPi), rng.uniform(0, 2 * kPi)});
    EXPECT_NEAR(std::abs(v - cplx(1.0, 0.0)), 0.0, 1e-14);
  }
}

TEST(Scatter, ZeroCoefficients) { EXPECT_EQ(eval_scatter(SHCoeffs(2), {1.0, 2.0}), cplx(0.0, 0.0)); }

TEST(Scatter, EqualsBasisDotCoefficients) {
  KeyedRng rng(3);
  for (int l = 0; l <= 3; ++l) {
    const auto c = random_coeffs(l, 10 + l);
    const Direction d{rng.uniform(0, kPi), rng.uniform(0, 2 * kPi)};
    const auto y = eval_sh_basis(l, d);
    cplx want = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) want += c.c[k] * y[k];
    EXPECT_NEAR(std::abs(eval_scatter(c, d) - want), 0.0, 1e-14);
  }
}

TEST(Dc, FromFirstCoefficient) {
  SHCoeffs c(3);
  c.c[0] = std::sqrt(4.0 * kPi);
  EXPECT_NEAR(std::abs(dc_amplitude(c) - cplx(1.0, 0.0)), 0.0, 1e-15);
  c.c[0] = 0.0;
  c.c[5] = 3.0;
  EXPECT_EQ(dc_amplitude(c), cplx(0.0, 0.0));
}

TEST(Dc, EqualsSphericalMean) {
  const auto q = sphere_grid();
  const auto c = random_coeffs(3, 77);
  cplx mean = 0.0;
  for (std::size_t n = 0; n < q.dirs.size(); ++n) mean += q.w[n] * eval_scatter(c, q.dirs[n]);
  mean /= 4.0 * kPi;
  EXPECT_NEAR(std::abs(mean - dc_amplitude(c)), 0.0, 1e-6);
}

TEST(Direction, FromVector) {
  const auto up = dir_from_vector({0, 0, 1});
  EXPECT_EQ(up.theta, 0.0);
  EXPECT_EQ(up.phi, 0.0);
  const auto x = dir_from_vector({1, 0, 0});
  EXPECT_NEAR(x.theta, kPi / 2.0, 1e-15);
  EXPECT_EQ(x.phi, 0.0);
  EXPECT_THROW(dir_from_vector(Vec3::Zero()), UsageError);
}

TEST(Direction, RoundTrip) {
  KeyedRng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Direction d{rng.uniform(1e-3, kPi - 1e-3), rng.uniform(0, 2 * kPi)};
    const auto back = dir_from_vector(d.unit_vector());
    EXPECT_NEAR(back.theta, d.theta, 1e-12);
    EXPECT_NEAR(back.phi, d.phi, 1e-12);
  }
}
