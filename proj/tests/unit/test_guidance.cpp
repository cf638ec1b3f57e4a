#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "pilotwave/equilibrium.hpp"
#include "pilotwave/guidance.hpp"

using namespace pilotwave;

namespace {

/// Closed-form free Gaussian exp(-x^2 / (4 s0^2 (1 + i t / (2 s0^2)))), unnormalized.
ComplexGrid free_gaussian(const GridSpec& spec, double s0, double t) {
  const cplx denom = 4.0 * s0 * s0 * cplx(1.0, t / (2.0 * s0 * s0));
  return ComplexGrid::sample(spec, [&](const Point& x) { return std::exp(-x[0] * x[0] / denom); });
}

double sigma_t(double s0, double t) { return s0 * std::sqrt(1.0 + std::pow(t / (2.0 * s0 * s0), 2)); }

WaveSlices stationary_slices(const ComplexGrid& psi, double energy, double t1, int count) {
  WaveSlices s;
  for (int i = 0; i <= count; ++i) {
    const double t = t1 * i / count;
    s.push(t, {std::exp(cplx(0.0, -energy * t)) * psi});
  }
  return s;
}

WaveSlices evolved_slices(const ComplexGrid& psi0, const Potential& v, double t1, std::size_t steps, std::size_t every) {
  EvolutionOptions opt;
  opt.store_every = every;
  ScalarEvolver ev(psi0.spec(), v, opt);
  WaveSlices s;
  ev.run(psi0, 0.0, t1 / steps, steps, &s);
  return s;
}

}  // namespace

TEST(VelocityScalar, PlaneWaveHasConstantVelocity) {
  const auto spec = GridSpec::line(2.0 * std::numbers::pi * 2.0, 128);
  const auto psi = ComplexGrid::sample(spec, [](const Point& x) { return std::exp(cplx(0.0, 1.5 * x[0])); });
  for (double x : {-5.0, -0.3, 0.0, 1.1, 5.9}) EXPECT_NEAR(velocity_scalar(psi, x), 1.5, 1e-10);
}

TEST(VelocityScalar, RealStateHasZeroVelocity) {
  const auto spec = GridSpec::line(20.0, 256);
  const auto psi = ComplexGrid::sample(spec, [](const Point& x) { return cplx(std::exp(-0.5 * x[0] * x[0]), 0.0); });
  for (double x : {-3.0, -0.7, 0.0, 0.45, 2.0}) EXPECT_NEAR(velocity_scalar(psi, x), 0.0, 1e-12);
}

TEST(VelocityScalar, SpreadingGaussianMatchesAnalyticField) {
  const auto spec = GridSpec::line(60.0, 4096);
  const double s0 = 1.0;
  for (double t : {0.5, 2.0, 4.0}) {
    const auto psi = free_gaussian(spec, s0, t);
    const double rate = t / (4.0 * s0 * s0 * sigma_t(s0, t) * sigma_t(s0, t));
    for (double x : {-2.0, -0.5, 0.3, 1.0, 2.5}) {
      const double v = velocity_scalar(psi, x);
      EXPECT_NEAR(v / (x * rate), 1.0, 1e-4) << "t=" << t << " x=" << x;
    }
  }
}

TEST(VelocityScalar, EqualsPhaseGradientFromUnwrapping) {
  // psi = g(x) (1 + 0.3 e^{2ix}) e^{0.7ix}: no nodes, non-polynomial phase.
  const auto spec = GridSpec::line(40.0, 4096);
  const auto psi = ComplexGrid::sample(spec, [](const Point& x) {
    return std::exp(-x[0] * x[0] / 8.0) * (1.0 + 0.3 * std::exp(cplx(0.0, 2.0 * x[0]))) *
           std::exp(cplx(0.0, 0.7 * x[0]));
  });
  // Unwrap arg(psi) along the grid, then take 4th-order central differences.
  std::vector<double> phase(spec.size());
  phase[0] = std::arg(psi[0]);
  for (std::size_t i = 1; i < spec.size(); ++i) {
    double d = std::arg(psi[i]) - std::arg(psi[i - 1]);
    d -= 2.0 * std::numbers::pi * std::round(d / (2.0 * std::numbers::pi));
    phase[i] = phase[i - 1] + d;
  }
  const double h = spec.spacing(0);
  const GuidanceSlice slice({psi}, 0.0);
  for (std::size_t i = 1500; i < 2600; i += 37) {
    const double ds = (-phase[i + 2] + 8.0 * phase[i + 1] - 8.0 * phase[i - 1] + phase[i - 2]) / (12.0 * h);
    EXPECT_NEAR(slice.sample(spec.position(i)).velocity[0], ds, 1e-6);
  }
}

TEST(VelocityScalar, ZeroDensityWithoutRegularizationGivesZero) {
  const auto spec = GridSpec::line(10.0, 64);
  ComplexGrid psi(spec);
  psi[10] = 1.0;
  const GuidanceSlice slice({psi}, 0.0);
  const auto s = slice.sample(spec.position(40));
  EXPECT_EQ(s.velocity[0], 0.0);
  EXPECT_EQ(s.density, 0.0);
}

TEST(VelocitySpinor, EqualComponentsReduceToScalar) {
  const auto spec = GridSpec::line(40.0, 512);
  const auto packet = normalized(GaussianPacket{{0.5, 0.0}, {1.2, 1.0}, {0.8, 0.0}}.sample(spec));
  const auto spinor = SpinorGrid::product(packet, std::sqrt(0.5), std::sqrt(0.5));
  for (double x : {-2.0, 0.1, 1.7}) {
    EXPECT_NEAR(velocity_spinor(spinor, Point{x, 0.0})[0], velocity_scalar(packet, x), 1e-12);
  }
  const auto one = SpinorGrid::product(packet, 0.0, 1.0);
  for (double x : {-2.0, 0.1, 1.7}) {
    EXPECT_NEAR(velocity_spinor(one, Point{x, 0.0})[0], velocity_scalar(packet, x), 1e-12);
  }
}

TEST(VelocitySpinor, DisjointBranchesDecouple) {
  const auto spec = GridSpec::line(80.0, 2048);
  const double s = std::sqrt(0.5);
  const auto up = normalized(GaussianPacket{{15.0, 0.0}, {1.0, 1.0}, {2.0, 0.0}}.sample(spec));
  const auto down = normalized(GaussianPacket{{-15.0, 0.0}, {1.0, 1.0}, {-2.0, 0.0}}.sample(spec));
  const SpinorGrid spinor(cplx(s) * up, cplx(s) * down);
  for (double x : {13.5, 15.0, 16.2}) {
    EXPECT_NEAR(velocity_spinor(spinor, Point{x, 0.0})[0], velocity_scalar(up, x), 1e-8);
    const auto sv = spin_vector(spinor, Point{x, 0.0});
    ASSERT_TRUE(sv.has_value());
    EXPECT_NEAR((*sv)[2], 0.5, 1e-6);
  }
  const auto sv = spin_vector(spinor, Point{-14.0, 0.0});
  ASSERT_TRUE(sv.has_value());
  EXPECT_NEAR((*sv)[2], -0.5, 1e-6);
}

TEST(SpinVector, EigenstatesAndIndeterminacy) {
  const auto spec = GridSpec::line(20.0, 256);
  const auto packet = normalized(GaussianPacket{}.sample(spec));
  const auto zup = spin_vector(SpinorGrid::product(packet, 1.0, 0.0), Point{0.3, 0.0});
  ASSERT_TRUE(zup);
  EXPECT_NEAR((*zup)[0], 0.0, 1e-15);
  EXPECT_NEAR((*zup)[1], 0.0, 1e-15);
  EXPECT_NEAR((*zup)[2], 0.5, 1e-15);
  const auto xup = spin_vector(SpinorGrid::product(packet, std::sqrt(0.5), std::sqrt(0.5)), Point{-0.4, 0.0});
  ASSERT_TRUE(xup);
  EXPECT_NEAR((*xup)[0], 0.5, 1e-12);
  EXPECT_NEAR((*xup)[1], 0.0, 1e-12);
  EXPECT_NEAR((*xup)[2], 0.0, 1e-12);
  const auto yup = spin_vector(SpinorGrid::product(packet, std::sqrt(0.5), cplx(0.0, std::sqrt(0.5))), Point{0.0, 0.0});
  EXPECT_NEAR((*yup)[1], 0.5, 1e-12);
  // Far tail: density below the regularization floor.
  EXPECT_FALSE(spin_vector(SpinorGrid::product(packet, 1.0, 0.0), Point{9.9, 0.0}).has_value());
}

TEST(SpinVector, NormBoundedWithEqualityOnlyForPureStates) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Vector2cd a(cplx(rng.normal(), rng.normal()), cplx(rng.normal(), rng.normal()));
    Eigen::Vector2cd b(cplx(rng.normal(), rng.normal()), cplx(rng.normal(), rng.normal()));
    const Eigen::Matrix2cd pure = a * a.adjoint();
    const auto sp = spin_vector_from_density_matrix(pure);
    ASSERT_TRUE(sp);
    const double np = std::hypot((*sp)[0], (*sp)[1], (*sp)[2]);
    EXPECT_NEAR(np, 0.5, 1e-12);
    const double w = 0.1 + 0.8 * rng.uniform();
    const Eigen::Matrix2cd mixed = w * pure + (1.0 - w) * (b * b.adjoint());
    const auto sm = spin_vector_from_density_matrix(mixed);
    const double nm = std::hypot((*sm)[0], (*sm)[1], (*sm)[2]);
    const double overlap = std::norm(a.normalized().dot(b.normalized()));
    if (overlap < 1.0 - 1e-6) EXPECT_LT(nm, 0.5 - 1e-9);
    EXPECT_LE(nm, 0.5 + 1e-12);
  }
}

TEST(IntegrateTrajectory, PlaneWaveMovesUniformly) {
  const auto spec = GridSpec::line(2.0 * std::numbers::pi * 4.0, 128);
  const auto psi = normalized(ComplexGrid::sample(spec, [](const Point& x) { return std::exp(cplx(0.0, x[0])); }));
  const SlicedField field(stationary_slices(psi, 0.5, 1.0, 10));
  const auto tr = integrate_trajectory(field, Point{0.0, 0.0}, 0.0, 1.0, 1e-10);
  EXPECT_NEAR(tr.final_position()[0], 1.0, 1e-6);
  EXPECT_FALSE(tr.flagged());
  for (std::size_t i = 1; i < tr.times.size(); ++i) EXPECT_GT(tr.times[i], tr.times[i - 1]);
}

TEST(IntegrateTrajectory, GroundStateIsStatic) {
  const auto spec = GridSpec::line(24.0, 256);
  const auto psi = normalized(ComplexGrid::sample(spec, [](const Point& x) { return cplx(std::exp(-0.5 * x[0] * x[0]), 0.0); }));
  // Splitting error on the eigenphase is O(dt^2); dt = 1e-4 keeps the
  // breathing of the sampled ground state below 1e-9.
  const auto slices = evolved_slices(psi, Potential::harmonic(1.0), 2.0, 20000, 200);
  const SlicedField field(slices);
  for (double x0 : {-1.5, 0.2, 0.9}) {
    const auto tr = integrate_trajectory(field, Point{x0, 0.0}, 0.0, 2.0, 1e-10);
    for (const auto& p : tr.unwrapped) EXPECT_NEAR(p[0], x0, 1e-8);
  }
}

TEST(IntegrateTrajectory, FreeGaussianFollowsScaling) {
  const double s0 = 1.0;
  const auto spec = GridSpec::line(80.0, 1024);
  const auto psi = normalized(GaussianPacket{{0.0, 0.0}, {s0, 1.0}, {0.0, 0.0}}.sample(spec));
  const double t1 = 4.0 * s0 * s0;
  const auto slices = evolved_slices(psi, Potential::free(), t1, 2000, 10);
  const SlicedField field(slices);
  std::vector<double> outs;
  for (int i = 1; i <= 16; ++i) outs.push_back(t1 * i / 16.0);
  for (double x0 : {s0, -0.5 * s0, 2.0 * s0}) {
    const auto tr = integrate_trajectory(field, Point{x0, 0.0}, 0.0, t1, 1e-9, outs);
    ASSERT_EQ(tr.times.size(), outs.size() + 1);
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      const double expected = x0 * sigma_t(s0, tr.times[i]) / s0;
      EXPECT_NEAR(tr.unwrapped[i][0] / expected, 1.0, 1e-3);
    }
  }
}

TEST(IntegrateTrajectory, NoCrossingInOneDimension) {
  // Two packets meeting head on: interference fringes with near-nodes.
  const auto spec = GridSpec::line(60.0, 1024);
  const auto a = GaussianPacket{{-4.0, 0.0}, {1.0, 1.0}, {1.5, 0.0}}.sample(spec);
  const auto b = GaussianPacket{{4.0, 0.0}, {1.0, 1.0}, {-1.5, 0.0}}.sample(spec);
  const auto psi = normalized(a + b);
  const auto slices = evolved_slices(psi, Potential::free(), 5.0, 5000, 5);
  const SlicedField field(slices);
  EnsembleSpec ens{.count = 300, .seed = 9};
  auto starts = sample_density(psi, ens);
  std::sort(starts.begin(), starts.end());
  const std::vector<double> outs{1.0, 2.0, 2.7, 3.5, 5.0};
  const auto trajs = integrate_ensemble(field, starts, 0.0, 5.0, 1e-9, outs, 1);
  for (std::size_t k = 0; k < outs.size(); ++k) {
    double prev = -1e300;
    for (const auto& tr : trajs) {
      if (tr.flagged()) continue;
      const auto p = position_at(tr, outs[k]);
      ASSERT_TRUE(p);
      EXPECT_GT((*p)[0], prev);
      prev = (*p)[0];
    }
  }
}

TEST(IntegrateTrajectory, TrappedAtNodeIsFlaggedNotWrong) {
  // A field with a singular point makes step control collapse.
  auto field = [](double, const Point& x) {
    ode::FieldSample<Point> s;
    s.velocity = {1.0 / std::max(std::abs(x[0] - 0.5), 1e-300) * (x[0] < 0.5 ? 1.0 : -1.0), 0.0};
    s.density = std::abs(x[0] - 0.5);
    return s;
  };
  const std::vector<double> outs{1.0};
  const auto sol = ode::integrate<Point>(field, Point{0.0, 0.0}, 0.0, 1.0, outs);
  EXPECT_TRUE(sol.stats.flagged);
  EXPECT_LT(sol.times.back(), 1.0);
}

TEST(IntegrateTrajectory, RejectsBadInterval) {
  const auto spec = GridSpec::line(10.0, 64);
  const auto psi = normalized(GaussianPacket{}.sample(spec));
  const SlicedField field(stationary_slices(psi, 0.0, 1.0, 2));
  EXPECT_THROW(integrate_trajectory(field, Point{0.0, 0.0}, 1.0, 0.5, 1e-8), ValidationError);
}
