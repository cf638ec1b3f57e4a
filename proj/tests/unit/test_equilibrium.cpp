#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "pilotwave/equilibrium.hpp"

using namespace pilotwave;

namespace {

ComplexGrid ground_state(const GridSpec& spec, double omega) {
  return normalized(ComplexGrid::sample(spec, [&](const Point& x) {
    double r2 = x[0] * x[0] + (spec.dim == 2 ? x[1] * x[1] : 0.0);
    return cplx(std::exp(-0.5 * omega * r2), 0.0);
  }));
}

}  // namespace

TEST(SampleDensity, GroundStateVarianceMatchesAnalyticMoment) {
  const double omega = 1.3;
  const auto spec = GridSpec::line(30.0, 1024);
  const auto xs = sample_density(ground_state(spec, omega), {.count = 10'000, .seed = 42});
  double m1 = 0.0, m2 = 0.0;
  for (const auto& p : xs) {
    m1 += p[0];
    m2 += p[0] * p[0];
  }
  const double n = static_cast<double>(xs.size());
  m1 /= n;
  const double var = m2 / n - m1 * m1;
  const double expected = 1.0 / (2.0 * omega);
  const double se = expected * std::sqrt(2.0 / n);
  EXPECT_LT(std::abs(var - expected), 3.0 * se);
}

TEST(SampleDensity, SymmetricDoubleGaussianHasZeroMean) {
  const auto spec = GridSpec::line(40.0, 1024);
  const auto psi = normalized(GaussianPacket{{-4.0, 0.0}, {1.0, 1.0}, {0.0, 0.0}}.sample(spec) +
                              GaussianPacket{{4.0, 0.0}, {1.0, 1.0}, {0.0, 0.0}}.sample(spec));
  const auto xs = sample_density(psi, {.count = 10'000, .seed = 5});
  double m1 = 0.0, m2 = 0.0;
  for (const auto& p : xs) {
    m1 += p[0];
    m2 += p[0] * p[0];
  }
  const double n = static_cast<double>(xs.size());
  const double se = std::sqrt(m2 / n / n);
  EXPECT_LT(std::abs(m1 / n), 3.0 * se);
}

TEST(SampleDensity, NarrowPacketStaysInSupport) {
  const auto spec = GridSpec::line(10.0, 100);
  ComplexGrid psi(spec);
  psi[50] = 1.0;
  psi = normalized(psi);
  const auto xs = sample_density(psi, {.count = 2000, .seed = 1});
  for (const auto& p : xs) {
    EXPECT_GT(p[0], spec.node(0, 49));
    EXPECT_LT(p[0], spec.node(0, 51));
  }
}

TEST(SampleDensity, SelfKolmogorovSmirnovPasses) {
  const auto spec = GridSpec::line(40.0, 512);
  const auto psi = normalized(GaussianPacket{{-3.0, 0.0}, {0.8, 1.0}, {0.0, 0.0}}.sample(spec) +
                              cplx(0.5, 0.2) * GaussianPacket{{2.0, 0.0}, {1.5, 1.0}, {1.0, 0.0}}.sample(spec));
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto xs = sample_density(psi, {.count = 10'000, .seed = seed});
    const auto r = density_fit(xs, std::span<const ComplexGrid>(&psi, 1));
    EXPECT_GT(r.p_value, 0.01);
  }
}

TEST(SampleDensity, SeedDeterminism) {
  const auto spec = GridSpec::line(20.0, 256);
  const auto psi = ground_state(spec, 1.0);
  const auto a = sample_density(psi, {.count = 500, .seed = 77});
  const auto b = sample_density(psi, {.count = 500, .seed = 77});
  const auto c = sample_density(psi, {.count = 500, .seed = 78});
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(SampleDensity, RejectsUnnormalizedState) {
  const auto spec = GridSpec::line(20.0, 256);
  const auto psi = 1.1 * ground_state(spec, 1.0);
  EXPECT_THROW(sample_density(psi, {.count = 10, .seed = 1}), ValidationError);
}

TEST(SampleDensity, PlaneRejectionSamplerFitsDensity) {
  const auto spec = GridSpec::plane(16.0, 64, 12.0, 64);
  const auto psi = normalized(GaussianPacket{{1.0, -1.0}, {1.0, 1.5}, {0.0, 0.0}}.sample(spec));
  const auto xs = sample_density(psi, {.count = 10'000, .seed = 4, .sampler = Sampler::rejection});
  const auto r = density_fit(xs, std::span<const ComplexGrid>(&psi, 1));
  EXPECT_GT(r.p_value, 0.01);
  EXPECT_THROW(sample_density(psi, {.count = 10, .seed = 4, .sampler = Sampler::inverse_cdf}), ValidationError);
}

TEST(LineDensity, QuantileInvertsCdf) {
  const auto spec = GridSpec::line(10.0, 64);
  const auto psi = ground_state(spec, 0.7);
  const LineDensity d(std::span<const ComplexGrid>(&psi, 1));
  for (double u : {0.001, 0.1, 0.37, 0.5, 0.9, 0.999}) EXPECT_NEAR(d.cdf(d.quantile(u)), u, 1e-12);
}

TEST(CheckEquivariance, ZeroTimeIsIdentity) {
  const auto spec = GridSpec::line(20.0, 256);
  const auto psi = ground_state(spec, 1.0);
  const auto r = check_equivariance(psi, Potential::harmonic(1.0), {.count = 1000, .seed = 3}, {0.0});
  EXPECT_EQ(r.status, ReportStatus::pass);
  EXPECT_EQ(r.flagged, 0u);
}

TEST(CheckEquivariance, FreeGaussianPassesAndScaledVelocityFails) {
  const auto spec = GridSpec::line(40.0, 1024);
  const auto psi = normalized(GaussianPacket{{0.0, 0.0}, {std::sqrt(0.5), 1.0}, {0.0, 0.0}}.sample(spec));
  const EnsembleSpec ens{.count = 10'000, .seed = 11};
  const auto good = check_equivariance(psi, Potential::free(), ens, {2.0});
  EXPECT_EQ(good.status, ReportStatus::pass) << "p=" << good.p_values[0];
  EXPECT_LT(static_cast<double>(good.flagged), 0.01 * 10'000);
  EquivarianceOptions bad;
  bad.velocity_scale = 1.1;
  const auto neg = check_equivariance(psi, Potential::free(), ens, {2.0}, bad);
  EXPECT_EQ(neg.status, ReportStatus::fail) << "p=" << neg.p_values[0];
}

TEST(CheckEquivariance, RejectsTinyEnsembles) {
  const auto spec = GridSpec::line(20.0, 256);
  EXPECT_THROW(check_equivariance(ground_state(spec, 1.0), Potential::free(), {.count = 50, .seed = 1}, {0.0}),
               ValidationError);
}

TEST(ContinuityResidual, StationaryAndPlaneWaveAreAtFloor) {
  const auto spec = GridSpec::line(2.0 * std::numbers::pi * 3.0, 128);
  const auto plane = normalized(ComplexGrid::sample(spec, [](const Point& x) { return std::exp(cplx(0.0, 2.0 * x[0])); }));
  WaveSlices s;
  for (int i = 0; i < 5; ++i) s.push(0.1 * i, {std::exp(cplx(0.0, -2.0 * 0.1 * i)) * plane});
  for (const auto& r : continuity_residual(s)) EXPECT_LT(r.max_norm, 1e-12);

  const auto ground = ground_state(GridSpec::line(20.0, 256), 1.0);
  WaveSlices g;
  for (int i = 0; i < 5; ++i) g.push(0.1 * i, {std::exp(cplx(0.0, -0.5 * 0.1 * i)) * ground});
  for (const auto& r : continuity_residual(g)) EXPECT_LT(r.max_norm, 1e-12);
}

TEST(ContinuityResidual, ConvergesAtSecondOrder) {
  auto residual = [](std::size_t points, std::size_t steps) {
    const auto spec = GridSpec::line(40.0, points);
    const auto psi = normalized(GaussianPacket{{0.0, 0.0}, {1.0, 1.0}, {1.0, 0.0}}.sample(spec));
    EvolutionOptions opt;
    opt.store_every = 10;
    ScalarEvolver ev(spec, Potential::harmonic(0.5), opt);
    WaveSlices slices;
    ev.run(psi, 0.0, 1.0 / static_cast<double>(steps), steps, &slices);
    double worst = 0.0;
    for (const auto& r : continuity_residual(slices)) worst = std::max(worst, r.l2_norm);
    return worst;
  };
  const double coarse = residual(256, 100);
  const double fine = residual(512, 200);
  EXPECT_NEAR(std::log2(coarse / fine), 2.0, 0.2) << coarse << " " << fine;
}

TEST(ContinuityResidual, NeedsThreeEquallySpacedSlices) {
  const auto spec = GridSpec::line(10.0, 64);
  const auto psi = ground_state(spec, 1.0);
  WaveSlices s;
  s.push(0.0, {psi});
  s.push(0.1, {psi});
  EXPECT_THROW(continuity_residual(s), ValidationError);
  s.push(0.3, {psi});
  EXPECT_THROW(continuity_residual(s), ValidationError);
}
