#include <cmath>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "pilotwave/evolution.hpp"

using namespace pilotwave;

namespace {

double width_of(const ComplexGrid& psi) {
  const auto& spec = psi.spec();
  double m1 = 0.0, m2 = 0.0, n = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const double x = spec.node(0, i);
    const double r = std::norm(psi[i]);
    n += r;
    m1 += r * x;
    m2 += r * x * x;
  }
  m1 /= n;
  return std::sqrt(m2 / n - m1 * m1);
}

double max_diff(const ComplexGrid& a, const ComplexGrid& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ComplexGrid harmonic_ground(const GridSpec& spec, double omega) {
  return normalized(ComplexGrid::sample(spec, [&](const Point& x) { return cplx(std::exp(-0.5 * omega * x[0] * x[0]), 0.0); }));
}

}  // namespace

TEST(EvolveSchrodinger, PlaneWaveAcquiresPhase) {
  const double length = 2.0 * std::numbers::pi;
  const auto spec = GridSpec::line(length, 64);
  const double k = 3.0;
  const auto psi = normalized(ComplexGrid::sample(spec, [&](const Point& x) { return std::exp(cplx(0.0, k * x[0])); }));
  const double dt = 1e-3;
  const std::size_t steps = 500;
  const auto out = evolve_schrodinger(psi, Potential::free(), dt, steps);
  const cplx phase = std::exp(cplx(0.0, -0.5 * k * k * dt * steps));
  EXPECT_LT(max_diff(out, phase * psi), 1e-12);
}

TEST(EvolveSchrodinger, HarmonicGroundStateIsStationary) {
  const double omega = 1.0;
  const auto spec = GridSpec::line(24.0, 256);
  const auto psi = harmonic_ground(spec, omega);
  const double dt = 1e-3;
  const std::size_t steps = 1000;
  const auto out = evolve_schrodinger(psi, Potential::harmonic(omega), dt, steps);
  const cplx phase = std::exp(cplx(0.0, -0.5 * omega * dt * steps));
  // Strang splitting error O(dt^2) on the eigenphase.
  EXPECT_LT(max_diff(out, phase * psi), 1e-6);
  for (std::size_t i = 0; i < psi.size(); ++i) EXPECT_NEAR(std::norm(out[i]), std::norm(psi[i]), 1e-7);
}

TEST(EvolveSchrodinger, FreeGaussianSpreadsAnalytically) {
  const double s0 = 1.0;
  const auto spec = GridSpec::line(80.0, 1024);
  const auto psi = GaussianPacket{{0.0, 0.0}, {s0, 1.0}, {0.0, 0.0}}.sample(spec);
  const double t = 4.0;
  const auto out = evolve_schrodinger(normalized(psi), Potential::free(), 0.01, 400);
  const double expected = s0 * std::sqrt(1.0 + std::pow(t / (2.0 * s0 * s0), 2));
  EXPECT_NEAR(width_of(out) / expected, 1.0, 1e-4);
}

TEST(EvolveSchrodinger, NormAndEnergyConserved) {
  const auto spec = GridSpec::line(40.0, 512);
  const auto psi = normalized(GaussianPacket{{2.0, 0.0}, {0.70710678118654752, 1.0}, {0.5, 0.0}}.sample(spec));
  const Potential v = Potential::harmonic(1.0);
  ScalarEvolver ev(spec, v);
  const auto pot = v.sample(spec);
  const double e0 = energy_expectation(psi, pot);
  ComplexGrid cur = psi;
  double max_drift = 0.0;
  for (int block = 0; block < 10; ++block) {
    cur = ev.run(cur, 0.0, 5e-4, 400);
    max_drift = std::max(max_drift, std::abs(energy_expectation(cur, pot) - e0) / e0);
    EXPECT_NEAR(cur.norm_squared(), 1.0, 1e-8);
  }
  EXPECT_LT(max_drift, 1e-6);
}

TEST(EvolveSchrodinger, TimeReversible) {
  const auto spec = GridSpec::line(30.0, 256);
  const auto psi = normalized(GaussianPacket{{-1.0, 0.0}, {1.0, 1.0}, {1.0, 0.0}}.sample(spec));
  ScalarEvolver ev(spec, Potential::barrier(2.0, 1.0));
  const auto fwd = ev.run(psi, 0.0, 0.01, 1);
  const auto back = ev.run(fwd, 0.01, -0.01, 1);
  EXPECT_LT(max_diff(back, psi), 1e-10);
}

TEST(EvolveSchrodinger, SecondOrderConvergence) {
  const auto spec = GridSpec::line(40.0, 512);
  const auto psi = normalized(GaussianPacket{{1.0, 0.0}, {1.0, 1.0}, {0.5, 0.0}}.sample(spec));
  const Potential v = Potential::harmonic(0.8);
  const double t = 1.0;
  auto run = [&](std::size_t steps) { return evolve_schrodinger(psi, v, t / steps, steps); };
  const auto reference = run(6400);
  const double e1 = max_diff(run(100), reference);
  const double e2 = max_diff(run(200), reference);
  const double order = std::log2(e1 / e2);
  EXPECT_NEAR(order, 2.0, 0.15);
}

TEST(EvolveSchrodinger, RejectsBadInput) {
  const auto spec = GridSpec::line(10.0, 64);
  const auto psi = normalized(GaussianPacket{}.sample(spec));
  EXPECT_THROW(evolve_schrodinger(psi, Potential::free(), -0.1, 3), ValidationError);
  EXPECT_THROW(evolve_schrodinger(2.0 * psi, Potential::free(), 0.1, 3), ValidationError);
}

TEST(EvolveSchrodinger, NormDriftAborts) {
  const auto spec = GridSpec::line(10.0, 64);
  const auto psi = normalized(GaussianPacket{}.sample(spec));
  EvolutionOptions opt;
  opt.norm_tolerance = 1e-30;  // unattainable: any round-off trips the monitor
  ScalarEvolver ev(spec, Potential::harmonic(1.0), opt);
  EXPECT_THROW(ev.run(psi, 0.0, 0.01, 50), NumericalQualityError);
}

TEST(EvolveSchrodinger, EscapeMonitorFlagsWrappingPacket) {
  const auto spec = GridSpec::line(20.0, 256);
  const auto psi = normalized(GaussianPacket{{0.0, 0.0}, {1.0, 1.0}, {3.0, 0.0}}.sample(spec));
  ScalarEvolver ev(spec, Potential::free());
  ev.run(psi, 0.0, 0.01, 100);
  EXPECT_FALSE(ev.diagnostics().escaped);
  ev.run(psi, 0.0, 0.01, 300);
  EXPECT_TRUE(ev.diagnostics().escaped);
}

TEST(EvolvePauli, DecoupledComponentStaysZero) {
  const auto spec = GridSpec::line(40.0, 512);
  const auto packet = normalized(GaussianPacket{}.sample(spec));
  const auto psi = SpinorGrid::product(packet, 1.0, 0.0);
  PauliCoupling c{.mu = -1.0, .b0 = 0.5, .gradient = 2.0, .t_on = 0.0, .t_off = 1.0};
  const auto out = evolve_pauli(psi, Potential::free(), c, 0.01, 100);
  for (const auto& v : out.components[1].values()) EXPECT_EQ(v, cplx(0.0, 0.0));
  // The spin-up packet was pushed towards +z.
  double mean = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) mean += spec.node(0, i) * std::norm(out.components[0][i]);
  EXPECT_GT(mean * spec.cell_volume(), 0.5);
}

TEST(EvolvePauli, ZeroCouplingMatchesScalarEvolution) {
  const auto spec = GridSpec::line(30.0, 256);
  const auto a = normalized(GaussianPacket{{1.0, 0.0}, {1.0, 1.0}, {0.5, 0.0}}.sample(spec));
  const auto b = normalized(GaussianPacket{{-1.0, 0.0}, {0.8, 1.0}, {-0.3, 0.0}}.sample(spec));
  const double s = std::sqrt(0.5);
  const SpinorGrid psi(cplx(s) * a, cplx(0.0, s) * b);
  PauliCoupling c{.mu = 0.0, .b0 = 1.0, .gradient = 1.0, .t_on = 0.0, .t_off = 10.0};
  const Potential v = Potential::harmonic(0.5);
  const auto out = evolve_pauli(psi, v, c, 0.01, 200);
  EvolutionOptions loose;
  loose.require_normalized = false;
  ScalarEvolver ev(spec, v, loose);
  EXPECT_EQ(max_diff(out.components[0], ev.run(psi.components[0], 0.0, 0.01, 200)), 0.0);
  EXPECT_EQ(max_diff(out.components[1], ev.run(psi.components[1], 0.0, 0.01, 200)), 0.0);
}

TEST(EvolvePauli, XSpinSplitsIntoEqualWeightPackets) {
  const auto spec = GridSpec::line(80.0, 1024);
  const auto packet = normalized(GaussianPacket{}.sample(spec));
  const double s = std::sqrt(0.5);
  const auto psi = SpinorGrid::product(packet, s, s);
  // Impulsive kick: opposite momenta -+ mu * b * window = +-4.
  PauliCoupling c{.mu = -1.0, .b0 = 0.0, .gradient = 40.0, .t_on = 0.0, .t_off = 0.1};
  PauliEvolver ev(spec, Potential::free(), c);
  auto out = ev.run(psi, 0.0, 0.001, 100);
  out = ev.run(out, 0.1, 0.01, 400);
  EXPECT_NEAR(out.components[0].norm_squared(), 0.5, 1e-6);
  EXPECT_NEAR(out.components[1].norm_squared(), 0.5, 1e-6);
  double m_up = 0.0, m_down = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    m_up += spec.node(0, i) * std::norm(out.components[0][i]);
    m_down += spec.node(0, i) * std::norm(out.components[1][i]);
  }
  m_up *= spec.cell_volume() / 0.5;
  m_down *= spec.cell_volume() / 0.5;
  // Centroid: kick 4 applied over the window plus free flight for t = 4.
  EXPECT_NEAR(m_up, 4.0 * 0.05 + 4.0 * 4.0, 1e-3);
  EXPECT_NEAR(m_down, -m_up, 1e-9);
  EXPECT_NEAR(out.norm_squared(), 1.0, 1e-8);
}

TEST(EvolvePauli, RejectsBadWindow) {
  PauliCoupling c{.mu = 1.0, .b0 = 0.0, .gradient = 1.0, .t_on = 2.0, .t_off = 1.0};
  EXPECT_THROW(c.validate(), ValidationError);
}
