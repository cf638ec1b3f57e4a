#include <cmath>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "pilotwave/grids.hpp"
#include "pilotwave/statistics.hpp"

using namespace pilotwave;

namespace {

ComplexGrid random_grid(const GridSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ComplexGrid g(spec);
  for (auto& v : g.values()) v = {rng.normal(), rng.normal()};
  return g;
}

double max_abs_diff(const ComplexGrid& a, const ComplexGrid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum_norm(const ComplexGrid& g) {
  double s = 0.0;
  for (const auto& v : g.values()) s += std::norm(v);
  return s;
}

}  // namespace

TEST(GridSpec, RejectsBadShapes) {
  EXPECT_THROW(GridSpec::line(10.0, 4), ValidationError);
  EXPECT_THROW(GridSpec::line(-1.0, 64), ValidationError);
  EXPECT_THROW(GridSpec::plane(1.0, 16, 1.0, 7), ValidationError);
  EXPECT_NO_THROW(GridSpec::line(10.0, 8));
}

TEST(SpectralTransform, ConstantGoesToZeroFrequency) {
  const auto spec = GridSpec::line(4.0, 32);
  ComplexGrid g(spec);
  for (auto& v : g.values()) v = {2.0, -1.0};
  const auto f = spectral_transform(g, Direction::forward);
  EXPECT_NEAR(std::abs(f[0] - cplx(2.0, -1.0) * std::sqrt(32.0)), 0.0, 1e-12);
  for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LT(std::abs(f[i]), 1e-12);
}

TEST(SpectralTransform, PlaneWaveHitsOneBin) {
  const auto spec = GridSpec::line(2.0 * std::numbers::pi, 64);
  const auto g = ComplexGrid::sample(spec, [](const Point& x) { return std::exp(cplx(0.0, 5.0 * x[0])); });
  const auto f = spectral_transform(g, Direction::forward);
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (std::abs(f[i]) > 1e-10) {
      ++nonzero;
      EXPECT_NEAR(spec.wavenumber(0, i), 5.0, 1e-12);
    }
  EXPECT_EQ(nonzero, 1u);
}

TEST(SpectralTransform, RoundTripAndParsevalOnRandomGrids) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& spec : {GridSpec::line(3.0, 256), GridSpec::line(3.0, 24), GridSpec::plane(2.0, 32, 5.0, 16)}) {
      const auto g = random_grid(spec, seed);
      const auto f = spectral_transform(g, Direction::forward);
      const auto back = spectral_transform(f, Direction::inverse);
      double scale = 0.0;
      for (const auto& v : g.values()) scale = std::max(scale, std::abs(v));
      EXPECT_LT(max_abs_diff(g, back), 1e-12 * scale);
      EXPECT_NEAR(sum_norm(f), sum_norm(g), 1e-12 * sum_norm(g));
    }
  }
}

TEST(SpectralTransform, RejectsNonFinite) {
  ComplexGrid g(GridSpec::line(1.0, 16));
  g[3] = {std::nan(""), 0.0};
  EXPECT_THROW(spectral_transform(g, Direction::forward), ValidationError);
  EXPECT_THROW(gradient(g), ValidationError);
}

TEST(Gradient, PlaneWaveEigenfunction) {
  const auto spec = GridSpec::plane(2.0 * std::numbers::pi, 32, 4.0 * std::numbers::pi, 32);
  const auto g = ComplexGrid::sample(spec, [](const Point& x) { return std::exp(cplx(0.0, 3.0 * x[0] - 2.5 * x[1])); });
  const auto d = gradient(g);
  ASSERT_EQ(d.size(), 2u);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_LT(std::abs(d[0][i] - cplx(0.0, 3.0) * g[i]), 1e-11);
    EXPECT_LT(std::abs(d[1][i] - cplx(0.0, -2.5) * g[i]), 1e-11);
  }
}

TEST(Gradient, ConstantIsZero) {
  ComplexGrid g(GridSpec::line(7.0, 64));
  for (auto& v : g.values()) v = {0.3, 0.1};
  const auto d = gradient(g);
  for (const auto& v : d[0].values()) EXPECT_LT(std::abs(v), 1e-14);
}

TEST(Gradient, GaussianMatchesAnalyticDerivative) {
  const auto spec = GridSpec::line(40.0, 512);
  const double s = 1.3;
  const auto g = ComplexGrid::sample(spec, [&](const Point& x) { return cplx(std::exp(-x[0] * x[0] / (2 * s * s)), 0.0); });
  const auto d = gradient(g)[0];
  double err = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = spec.node(0, i);
    err = std::max(err, std::abs(d[i] - cplx(-x / (s * s) * std::exp(-x * x / (2 * s * s)), 0.0)));
  }
  EXPECT_LT(err, 1e-8);
}

TEST(Gradient, IsLinear) {
  const auto spec = GridSpec::plane(3.0, 16, 2.0, 32);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto a = random_grid(spec, seed);
    const auto b = random_grid(spec, seed + 100);
    const cplx c(0.7, -1.9);
    const auto lhs = gradient(a + c * b);
    const auto ga = gradient(a);
    const auto gb = gradient(b);
    for (int ax = 0; ax < 2; ++ax) EXPECT_LT(max_abs_diff(lhs[ax], ga[ax] + c * gb[ax]), 1e-10);
  }
}

TEST(Interpolate, ExactAtNodes) {
  const auto spec = GridSpec::plane(3.0, 16, 2.0, 8);
  const auto g = random_grid(spec, 7);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(interpolate(g, spec.position(i)), g[i]);
}

TEST(Interpolate, MidpointOfLinearRampIsMean) {
  const auto spec = GridSpec::line(16.0, 16);
  // Linear within the stencil support around x = 0.5.
  const auto g = ComplexGrid::sample(spec, [](const Point& x) { return cplx(2.0 * x[0] + 1.0, -x[0]); });
  const cplx mid = interpolate(g, 0.5);
  EXPECT_NEAR(std::abs(mid - 0.5 * (g[8] + g[9])), 0.0, 1e-14);
}

TEST(Interpolate, PlaneWaveAtArbitraryPoints) {
  const double length = 20.0;
  const double k = 2.0 * std::numbers::pi * 3.0 / length;
  const auto spec = GridSpec::line(length, 2048);
  const auto g = ComplexGrid::sample(spec, [&](const Point& x) { return std::exp(cplx(0.0, k * x[0])); });
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double x = -10.0 + 20.0 * rng.uniform();
    EXPECT_LT(std::abs(interpolate(g, x) - std::exp(cplx(0.0, k * x))), 1e-6);
  }
}

TEST(Interpolate, IsPeriodic) {
  const auto spec = GridSpec::plane(8.0, 16, 4.0, 16);
  const auto g = random_grid(spec, 11);
  // Dyadic points: x + extent is exactly representable.
  for (double x : {-3.75, 0.125, 2.5625, 3.9375})
    for (double y : {-1.5, 0.0625, 1.96875}) {
      EXPECT_EQ(interpolate(g, Point{x, y}), interpolate(g, Point{x + 8.0, y}));
      EXPECT_EQ(interpolate(g, Point{x, y}), interpolate(g, Point{x, y - 4.0}));
    }
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Point p{-4.0 + 8.0 * rng.uniform(), -2.0 + 4.0 * rng.uniform()};
    EXPECT_LT(std::abs(interpolate(g, p) - interpolate(g, Point{p[0] + 8.0, p[1] + 4.0})), 1e-12);
  }
}
