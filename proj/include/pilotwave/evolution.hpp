#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "pilotwave/errors.hpp"
#include "pilotwave/fft.hpp"
#include "pilotwave/grids.hpp"

namespace pilotwave {

/// External scalar potential V(x) in the Schrodinger equation.
struct Potential {
  enum class Kind { none, harmonic, barrier, custom };

  Kind kind = Kind::none;
  double omega = 0.0;   // harmonic
  double height = 0.0;  // barrier, centered on the origin along axis 0
  double width = 0.0;
  std::vector<double> custom;  // one value per node

  static Potential free() { return {}; }
  static Potential harmonic(double omega) {
    Potential p;
    p.kind = Kind::harmonic;
    p.omega = omega;
    return p;
  }
  static Potential barrier(double height, double width) {
    Potential p;
    p.kind = Kind::barrier;
    p.height = height;
    p.width = width;
    return p;
  }
  static Potential sampled(std::vector<double> values) {
    Potential p;
    p.kind = Kind::custom;
    p.custom = std::move(values);
    return p;
  }

  double at(const GridSpec& spec, const Point& x) const {
    switch (kind) {
      case Kind::none:
        return 0.0;
      case Kind::harmonic: {
        double r2 = x[0] * x[0];
        if (spec.dim == 2) r2 += x[1] * x[1];
        return 0.5 * omega * omega * r2;
      }
      case Kind::barrier:
        return std::abs(x[0]) < 0.5 * width ? height : 0.0;
      case Kind::custom:
        break;
    }
    throw ValidationError("custom potentials are only defined on nodes");
  }

  std::vector<double> sample(const GridSpec& spec) const {
    if (kind == Kind::custom) {
      if (custom.size() != spec.size())
        throw ValidationError(fmt::format("custom potential has {} values, grid has {}", custom.size(), spec.size()));
      for (double v : custom)
        if (!std::isfinite(v)) throw ValidationError("custom potential contains non-finite values");
      return custom;
    }
    if (kind == Kind::harmonic && !(omega > 0.0)) throw ValidationError("harmonic potential needs omega > 0");
    if (kind == Kind::barrier && !(width > 0.0 && std::isfinite(height)))
      throw ValidationError("barrier needs finite height and positive width");
    std::vector<double> v(spec.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = at(spec, spec.position(i));
    return v;
  }
};

/// -mu sigma_z B_z(z) with B_z(z) = B0 - gradient * z, switched on for
/// t in [t_on, t_off). On 2D grids z is axis 1 and the coupling can also be
/// restricted to a slab x_on <= x < x_off along axis 0 (the magnet region).
struct PauliCoupling {
  double mu = 0.0;
  double b0 = 0.0;
  double gradient = 0.0;
  double t_on = 0.0;
  double t_off = 0.0;
  std::optional<std::pair<double, double>> slab;

  void validate() const {
    if (!(t_on <= t_off)) throw ValidationError("coupling window requires t_on <= t_off");
    if (!std::isfinite(mu) || !std::isfinite(b0) || !std::isfinite(gradient))
      throw ValidationError("coupling coefficients must be finite");
    if (slab && !(slab->first < slab->second)) throw ValidationError("coupling slab must satisfy x_on < x_off");
  }

  bool active(double t) const { return t >= t_on && t < t_off && mu != 0.0; }

  static int z_axis(const GridSpec& spec) { return spec.dim == 1 ? 0 : 1; }

  /// Energy shift -mu B_z(z) seen by the spin-up component (the spin-down
  /// component sees the negative).
  double up_shift(const GridSpec& spec, const Point& x) const {
    if (slab && spec.dim == 2 && (x[0] < slab->first || x[0] >= slab->second)) return 0.0;
    return -mu * (b0 - gradient * x[z_axis(spec)]);
  }
};

/// Two-component Pauli spinor on a shared grid.
struct SpinorGrid {
  std::array<ComplexGrid, 2> components;

  SpinorGrid() = default;
  SpinorGrid(ComplexGrid up, ComplexGrid down) : components{std::move(up), std::move(down)} {
    components[0].require_same_spec(components[1]);
  }

  /// Product state spinor(a) * packet(x).
  static SpinorGrid product(const ComplexGrid& packet, cplx alpha, cplx beta) {
    return {alpha * packet, beta * packet};
  }

  const GridSpec& spec() const { return components[0].spec(); }
  double norm_squared() const { return components[0].norm_squared() + components[1].norm_squared(); }
  bool all_finite() const { return components[0].all_finite() && components[1].all_finite(); }
};

/// Expectation of H = -1/2 laplacian + V for a scalar state (not assumed
/// normalized; divides by the norm).
inline double energy_expectation(const ComplexGrid& psi, std::span<const double> potential) {
  const GridSpec& spec = psi.spec();
  const ComplexGrid spectrum = spectral_transform(psi, Direction::forward);
  const std::size_t nx = spec.points[0];
  double kinetic = 0.0;
  double pot = 0.0;
  double norm = 0.0;
  for (std::size_t idx = 0; idx < psi.size(); ++idx) {
    double k2 = std::pow(spec.wavenumber(0, idx % nx), 2);
    if (spec.dim == 2) k2 += std::pow(spec.wavenumber(1, idx / nx), 2);
    kinetic += 0.5 * k2 * std::norm(spectrum[idx]);
    pot += potential[idx] * std::norm(psi[idx]);
    norm += std::norm(psi[idx]);
  }
  return (kinetic + pot) / norm;
}

/// Probability mass within `fraction` of the extent from any domain edge.
inline double guard_band_mass(const ComplexGrid& psi, double fraction = 0.05) {
  const GridSpec& spec = psi.spec();
  double mass = 0.0;
  for (std::size_t idx = 0; idx < psi.size(); ++idx) {
    const Point x = spec.position(idx);
    bool edge = false;
    for (int a = 0; a < spec.dim; ++a) {
      const double rel = (x[a] - spec.lower[a]) / spec.extent[a];
      if (rel < fraction || rel > 1.0 - fraction) edge = true;
    }
    if (edge) mass += std::norm(psi[idx]);
  }
  return mass * spec.cell_volume();
}

/// Largest significant |k| of a state: bins carrying at least `rel` of the
/// total spectral weight.
inline double significant_wavenumber(const ComplexGrid& psi, double rel = 1e-12) {
  const GridSpec& spec = psi.spec();
  const ComplexGrid spectrum = spectral_transform(psi, Direction::forward);
  double total = 0.0;
  for (const cplx& c : spectrum.values()) total += std::norm(c);
  const std::size_t nx = spec.points[0];
  double kmax = 0.0;
  for (std::size_t idx = 0; idx < spectrum.size(); ++idx) {
    if (std::norm(spectrum[idx]) < rel * total) continue;
    double k2 = std::pow(spec.wavenumber(0, idx % nx), 2);
    if (spec.dim == 2) k2 += std::pow(spec.wavenumber(1, idx / nx), 2);
    kmax = std::max(kmax, std::sqrt(k2));
  }
  return kmax;
}

/// Time step keeping the per-step phase advance from the kinetic term
/// (over the state's significant spectrum plus `extra_momentum`) and the
/// potential (over the whole grid) below `max_phase` radians.
inline double suggest_time_step(const ComplexGrid& psi, std::span<const double> potential, double extra_momentum = 0.0,
                                double max_phase = 0.1) {
  const double k = significant_wavenumber(psi) + std::abs(extra_momentum);
  double vmax = 0.0;
  for (double v : potential) vmax = std::max(vmax, std::abs(v));
  const double rate = 0.5 * k * k + vmax;
  return rate > 0.0 ? max_phase / rate : max_phase;
}

/// Strang split-step spectral propagator (potential half-step, kinetic full
/// step, potential half-step). Unitary per substep and time-symmetric, so a
/// step of +dt followed by -dt is the identity up to round-off.
class SplitStepPropagator {
public:
  explicit SplitStepPropagator(const GridSpec& spec)
      : spec_(spec), plan_(std::span<const std::size_t>(spec.points.data(), static_cast<std::size_t>(spec.dim))) {
    spec_.validate();
    half_k2_.resize(spec_.size());
    const std::size_t nx = spec_.points[0];
    for (std::size_t idx = 0; idx < spec_.size(); ++idx) {
      double k2 = std::pow(spec_.wavenumber(0, idx % nx), 2);
      if (spec_.dim == 2) k2 += std::pow(spec_.wavenumber(1, idx / nx), 2);
      half_k2_[idx] = 0.5 * k2;
    }
  }

  const GridSpec& spec() const { return spec_; }

  /// One step of signed length dt under the node potential `v`.
  void step(ComplexGrid& psi, double dt, std::span<const double> v) {
    prepare(dt);
    apply_potential(psi.values(), v, dt);
    plan_.forward(psi.values());
    auto vals = psi.values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] *= kinetic_phase_[i];
    plan_.inverse(psi.values());
    apply_potential(psi.values(), v, dt);
  }

private:
  void prepare(double dt) {
    if (dt == cached_dt_) return;
    kinetic_phase_.resize(half_k2_.size());
    for (std::size_t i = 0; i < half_k2_.size(); ++i) kinetic_phase_[i] = std::polar(1.0, -half_k2_[i] * dt);
    cached_dt_ = dt;
  }

  static void apply_potential(std::span<cplx> vals, std::span<const double> v, double dt) {
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (v[i] != 0.0) vals[i] *= std::polar(1.0, -0.5 * v[i] * dt);
    }
  }

  GridSpec spec_;
  fft::GridTransform plan_;
  std::vector<double> half_k2_;
  std::vector<cplx> kinetic_phase_;
  double cached_dt_ = std::numeric_limits<double>::quiet_NaN();
};

/// Time-ordered snapshots of a (possibly multi-component) wave function.
struct WaveSlices {
  std::vector<double> times;
  std::vector<std::vector<ComplexGrid>> states;  // [slice][component]

  std::size_t size() const { return times.size(); }
  const GridSpec& spec() const { return states.front().front().spec(); }
  std::size_t components() const { return states.empty() ? 0 : states.front().size(); }

  void push(double t, std::vector<ComplexGrid> comps) {
    if (!times.empty() && !(t > times.back())) throw ValidationError("slice times must be strictly increasing");
    times.push_back(t);
    states.push_back(std::move(comps));
  }
};

/// Monitors collected over a run.
struct EvolutionDiagnostics {
  double initial_norm = 0.0;
  double max_norm_deviation = 0.0;  // relative
  double max_guard_mass = 0.0;
  std::size_t steps = 0;
  bool escaped = false;  // guard-band mass exceeded its threshold
};

struct EvolutionOptions {
  double norm_tolerance = 1e-8;
  double guard_fraction = 0.05;
  double guard_threshold = 1e-6;
  bool require_normalized = true;
  /// Slice storage cadence in steps; 0 disables slice recording.
  std::size_t store_every = 0;
};

namespace detail {

inline void check_normalized(double norm, const EvolutionOptions& opt, const char* what) {
  if (opt.require_normalized && std::abs(norm - 1.0) > 1e-8)
    throw ValidationError(fmt::format("{}: state must be normalized (norm^2 = {:.12g})", what, norm));
}

inline void check_norm(double norm, EvolutionDiagnostics& diag, const EvolutionOptions& opt, double t) {
  const double dev = std::abs(norm - diag.initial_norm) / diag.initial_norm;
  diag.max_norm_deviation = std::max(diag.max_norm_deviation, dev);
  if (!(dev <= opt.norm_tolerance))
    throw NumericalQualityError(
        fmt::format("norm drift {:.3e} exceeds {:.1e} at t = {:.6g}; refine the grid or time step", dev,
                    opt.norm_tolerance, t));
}

}  // namespace detail

/// Scalar Schrodinger evolution with slice recording and monitors.
class ScalarEvolver {
public:
  ScalarEvolver(const GridSpec& spec, const Potential& potential, EvolutionOptions options = {})
      : prop_(spec), potential_(potential.sample(spec)), options_(options) {}

  std::span<const double> potential_values() const { return potential_; }

  /// Advances `psi` by `steps` steps of size dt starting at time t0.
  /// Records a slice at t0 and every `store_every` steps if enabled.
  ComplexGrid run(ComplexGrid psi, double t0, double dt, std::size_t steps, WaveSlices* slices = nullptr) {
    if (!(dt != 0.0) || !std::isfinite(dt)) throw ValidationError("time step must be finite and nonzero");
    require_finite(psi, "evolve_schrodinger");
    if (!(psi.spec() == prop_.spec())) throw ValidationError("state grid differs from evolver grid");
    const double norm0 = psi.norm_squared();
    detail::check_normalized(norm0, options_, "evolve_schrodinger");
    diag_ = {};
    diag_.initial_norm = norm0;
    record(psi, t0, slices, 0);
    for (std::size_t n = 1; n <= steps; ++n) {
      prop_.step(psi, dt, potential_);
      const double t = t0 + static_cast<double>(n) * dt;
      detail::check_norm(psi.norm_squared(), diag_, options_, t);
      track_guard(psi);
      ++diag_.steps;
      record(psi, t, slices, n);
    }
    return psi;
  }

  const EvolutionDiagnostics& diagnostics() const { return diag_; }

private:
  void record(const ComplexGrid& psi, double t, WaveSlices* slices, std::size_t n) {
    if (slices && options_.store_every > 0 && n % options_.store_every == 0) slices->push(t, {psi});
  }

  void track_guard(const ComplexGrid& psi) {
    const double m = guard_band_mass(psi, options_.guard_fraction);
    diag_.max_guard_mass = std::max(diag_.max_guard_mass, m);
    if (m > options_.guard_threshold) diag_.escaped = true;
  }

  SplitStepPropagator prop_;
  std::vector<double> potential_;
  EvolutionOptions options_;
  EvolutionDiagnostics diag_;
};

/// Pauli evolution with H = -1/2 laplacian + V - mu sigma_z B_z(z). The
/// coupling is diagonal in the sigma_z basis, so each component is stepped
/// with its own potential.
class PauliEvolver {
public:
  PauliEvolver(const GridSpec& spec, const Potential& potential, const PauliCoupling& coupling,
               EvolutionOptions options = {})
      : prop_(spec), potential_(potential.sample(spec)), coupling_(coupling), options_(options) {
    coupling_.validate();
    up_.resize(spec.size());
    down_.resize(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const double shift = coupling_.up_shift(spec, spec.position(i));
      up_[i] = potential_[i] + shift;
      down_[i] = potential_[i] - shift;
    }
  }

  SpinorGrid run(SpinorGrid psi, double t0, double dt, std::size_t steps, WaveSlices* slices = nullptr) {
    if (!(dt != 0.0) || !std::isfinite(dt)) throw ValidationError("time step must be finite and nonzero");
    if (!psi.all_finite()) throw ValidationError("evolve_pauli: spinor contains non-finite values");
    if (!(psi.spec() == prop_.spec())) throw ValidationError("state grid differs from evolver grid");
    const double norm0 = psi.norm_squared();
    detail::check_normalized(norm0, options_, "evolve_pauli");
    diag_ = {};
    diag_.initial_norm = norm0;
    record(psi, t0, slices, 0);
    for (std::size_t n = 1; n <= steps; ++n) {
      const double t_mid = t0 + (static_cast<double>(n) - 0.5) * dt;
      const bool on = coupling_.active(t_mid);
      prop_.step(psi.components[0], dt, on ? std::span<const double>(up_) : potential_);
      prop_.step(psi.components[1], dt, on ? std::span<const double>(down_) : potential_);
      const double t = t0 + static_cast<double>(n) * dt;
      detail::check_norm(psi.norm_squared(), diag_, options_, t);
      const double m = guard_band_mass(psi.components[0], options_.guard_fraction) +
                       guard_band_mass(psi.components[1], options_.guard_fraction);
      diag_.max_guard_mass = std::max(diag_.max_guard_mass, m);
      if (m > options_.guard_threshold) diag_.escaped = true;
      ++diag_.steps;
      record(psi, t, slices, n);
    }
    return psi;
  }

  const EvolutionDiagnostics& diagnostics() const { return diag_; }
  std::span<const double> potential_values() const { return potential_; }
  std::span<const double> up_potential() const { return up_; }
  std::span<const double> down_potential() const { return down_; }

private:
  void record(const SpinorGrid& psi, double t, WaveSlices* slices, std::size_t n) {
    if (slices && options_.store_every > 0 && n % options_.store_every == 0)
      slices->push(t, {psi.components[0], psi.components[1]});
  }

  SplitStepPropagator prop_;
  std::vector<double> potential_;
  std::vector<double> up_;
  std::vector<double> down_;
  PauliCoupling coupling_;
  EvolutionOptions options_;
  EvolutionDiagnostics diag_;
};

inline ComplexGrid evolve_schrodinger(const ComplexGrid& psi, const Potential& v, double dt, std::size_t steps) {
  if (!(dt > 0.0)) throw ValidationError("evolve_schrodinger requires dt > 0");
  ScalarEvolver evolver(psi.spec(), v);
  return evolver.run(psi, 0.0, dt, steps);
}

inline SpinorGrid evolve_pauli(const SpinorGrid& psi, const Potential& v, const PauliCoupling& c, double dt,
                               std::size_t steps, double t0 = 0.0) {
  if (!(dt > 0.0)) throw ValidationError("evolve_pauli requires dt > 0");
  PauliEvolver evolver(psi.spec(), v, c);
  return evolver.run(psi, t0, dt, steps);
}

/// Normalized Gaussian packet exp(-(x-c)^2/(4 sigma^2) + i k x) per axis, so
/// that sigma is the position standard deviation of |psi|^2.
struct GaussianPacket {
  Point center{0.0, 0.0};
  Point width{1.0, 1.0};
  Point momentum{0.0, 0.0};

  cplx operator()(const GridSpec& spec, const Point& x) const {
    cplx v{1.0, 0.0};
    for (int a = 0; a < spec.dim; ++a) {
      const double d = x[a] - center[a];
      const double amp = std::pow(2.0 * std::numbers::pi * width[a] * width[a], -0.25);
      v *= amp * std::exp(cplx(-d * d / (4.0 * width[a] * width[a]), momentum[a] * x[a]));
    }
    return v;
  }

  ComplexGrid sample(const GridSpec& spec) const {
    return ComplexGrid::sample(spec, [&](const Point& x) { return (*this)(spec, x); });
  }
};

/// Rescales a grid to unit norm.
inline ComplexGrid normalized(ComplexGrid g) {
  const double n = g.norm_squared();
  if (!(n > 0.0)) throw ValidationError("cannot normalize a zero state");
  g *= cplx(1.0 / std::sqrt(n), 0.0);
  return g;
}

}  // namespace pilotwave
