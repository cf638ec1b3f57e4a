#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "pilotwave/errors.hpp"
#include "pilotwave/evolution.hpp"
#include "pilotwave/grids.hpp"
#include "pilotwave/ode.hpp"
#include "pilotwave/parallel.hpp"

namespace pilotwave {

/// Node regularization relative to the mean density: eps = factor * mean|psi|^2.
inline constexpr double kRegularizationFactor = 1e-12;

using SpinVector = std::array<double, 3>;

/// Wave function at one instant prepared for repeated off-grid guidance
/// queries: components and their spectral gradients.
class GuidanceSlice {
public:
  /// `eps` < 0 selects the default regularization.
  explicit GuidanceSlice(std::vector<ComplexGrid> components, double eps = -1.0) : psi_(std::move(components)) {
    if (psi_.empty()) throw ValidationError("guidance needs at least one component");
    double mean = 0.0;
    for (const auto& c : psi_) {
      c.require_same_spec(psi_.front());
      require_finite(c, "guidance");
      grad_.push_back(gradient(c));
      for (const cplx& v : c.values()) mean += std::norm(v);
    }
    mean /= static_cast<double>(psi_.front().size());
    eps_ = eps >= 0.0 ? eps : kRegularizationFactor * mean;
  }

  const GridSpec& spec() const { return psi_.front().spec(); }
  double regularization() const { return eps_; }
  std::size_t components() const { return psi_.size(); }

  /// Regularized velocity Im(sum_a psi_a* grad psi_a) / (sum_a |psi_a|^2 + eps)
  /// and the unregularized local density. With eps = 0 and zero density the
  /// velocity is defined as 0.
  ode::FieldSample<Point> sample(const Point& x) const {
    const Stencil st(spec(), x);
    return sample(st);
  }

  ode::FieldSample<Point> sample(const Stencil& st) const {
    const int dim = spec().dim;
    double rho = 0.0;
    Point current{0.0, 0.0};
    for (std::size_t a = 0; a < psi_.size(); ++a) {
      const cplx p = st.apply(psi_[a].values());
      rho += std::norm(p);
      for (int ax = 0; ax < dim; ++ax) current[ax] += (std::conj(p) * st.apply(grad_[a][ax].values())).imag();
    }
    const double denom = rho + eps_;
    Point v{0.0, 0.0};
    if (denom > 0.0)
      for (int ax = 0; ax < dim; ++ax) v[ax] = current[ax] / denom;
    return {v, rho};
  }

  /// Interpolated component amplitudes at x.
  std::vector<cplx> amplitudes(const Point& x) const {
    const Stencil st(spec(), x);
    std::vector<cplx> out;
    for (const auto& c : psi_) out.push_back(st.apply(c.values()));
    return out;
  }

private:
  std::vector<ComplexGrid> psi_;
  std::vector<std::vector<ComplexGrid>> grad_;
  double eps_ = 0.0;
};

/// Velocity of a scalar wave function at x.
inline Point velocity_scalar(const ComplexGrid& psi, const Point& x, double eps = -1.0) {
  return GuidanceSlice({psi}, eps).sample(x).velocity;
}

inline double velocity_scalar(const ComplexGrid& psi, double x, double eps = -1.0) {
  return velocity_scalar(psi, Point{x, 0.0}, eps)[0];
}

/// Spin-summed velocity of a Pauli spinor at x.
inline Point velocity_spinor(const SpinorGrid& psi, const Point& x, double eps = -1.0) {
  return GuidanceSlice({psi.components[0], psi.components[1]}, eps).sample(x).velocity;
}

/// Spin vector (units of hbar, so |s| <= 1/2) of a 2x2 spin density matrix
/// rho_ab = psi_a psi_b*, normalized by its trace. Empty if the trace does
/// not exceed `eps`.
inline std::optional<SpinVector> spin_vector_from_density_matrix(const Eigen::Matrix2cd& rho, double eps = 0.0) {
  const double trace = rho(0, 0).real() + rho(1, 1).real();
  if (!(trace > eps) || trace <= 0.0) return std::nullopt;
  // s_i = (1/2) tr(rho sigma_i) / tr(rho)
  const cplx off = rho(1, 0);  // psi_2 psi_1*
  return SpinVector{off.real() / trace, off.imag() / trace, 0.5 * (rho(0, 0).real() - rho(1, 1).real()) / trace};
}

/// Local spin vector of a spinor at x; empty where the density is below eps
/// (indeterminate).
inline std::optional<SpinVector> spin_vector(const SpinorGrid& psi, const Point& x, double eps = -1.0) {
  const GuidanceSlice slice({psi.components[0], psi.components[1]}, eps);
  const auto amp = slice.amplitudes(x);
  Eigen::Matrix2cd rho;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) rho(a, b) = amp[a] * std::conj(amp[b]);
  return spin_vector_from_density_matrix(rho, slice.regularization());
}

/// Guidance field over a sequence of stored slices; velocities are computed
/// on the two bracketing slices and blended linearly in time (the global
/// phase of psi cancels in each).
class SlicedField {
public:
  explicit SlicedField(const WaveSlices& slices, double velocity_scale = 1.0) : scale_(velocity_scale) {
    if (slices.size() == 0) throw ValidationError("no slices to guide with");
    times_ = slices.times;
    for (const auto& s : slices.states) slices_.emplace_back(s);
  }

  /// Takes ownership of the stored states.
  explicit SlicedField(WaveSlices&& slices, double velocity_scale = 1.0) : scale_(velocity_scale) {
    if (slices.size() == 0) throw ValidationError("no slices to guide with");
    times_ = std::move(slices.times);
    for (auto& s : slices.states) slices_.emplace_back(std::move(s));
    slices.states.clear();
  }

  const GridSpec& spec() const { return slices_.front().spec(); }
  double start() const { return times_.front(); }
  double end() const { return times_.back(); }
  const GuidanceSlice& slice(std::size_t i) const { return slices_[i]; }
  std::span<const double> times() const { return times_; }

  ode::FieldSample<Point> operator()(double t, const Point& x) const {
    const Stencil st(spec(), x);
    if (times_.size() == 1) return scaled(slices_[0].sample(st));
    const double tol = 1e-9 * (times_.back() - times_.front());
    if (t < times_.front() - tol || t > times_.back() + tol)
      throw ValidationError(fmt::format("guidance queried at t = {} outside stored range", t));
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t hi = static_cast<std::size_t>(it - times_.begin());
    hi = std::clamp<std::size_t>(hi, 1, times_.size() - 1);
    const std::size_t lo = hi - 1;
    const double w = std::clamp((t - times_[lo]) / (times_[hi] - times_[lo]), 0.0, 1.0);
    const auto a = slices_[lo].sample(st);
    const auto b = slices_[hi].sample(st);
    ode::FieldSample<Point> out;
    for (int ax = 0; ax < 2; ++ax) out.velocity[ax] = scale_ * ((1.0 - w) * a.velocity[ax] + w * b.velocity[ax]);
    out.density = (1.0 - w) * a.density + w * b.density;
    return out;
  }

private:
  ode::FieldSample<Point> scaled(ode::FieldSample<Point> s) const {
    for (double& v : s.velocity) v *= scale_;
    return s;
  }

  std::vector<double> times_;
  std::vector<GuidanceSlice> slices_;
  double scale_ = 1.0;
};

/// A particle path with integrator statistics. Positions are wrapped into
/// the periodic domain; `unwrapped` keeps the continuous path.
struct Trajectory {
  std::vector<double> times;
  std::vector<Point> positions;
  std::vector<Point> unwrapped;
  ode::IntegratorStats stats;

  bool flagged() const { return stats.flagged; }
  const Point& final_position() const { return unwrapped.back(); }
};

/// Adaptive integration of dx/dt = v(t, x) through a sliced guidance field,
/// recording positions at t0, every entry of `output_times`, and t1.
inline Trajectory integrate_trajectory(const SlicedField& field, const Point& x0, double t0, double t1,
                                       double tolerance, std::span<const double> output_times = {}) {
  ode::IntegratorOptions opt;
  opt.tolerance = tolerance;
  std::vector<double> outs(output_times.begin(), output_times.end());
  if (outs.empty() || outs.back() < t1) outs.push_back(t1);
  const auto sol = ode::integrate<Point>(field, x0, t0, t1, outs, opt);
  Trajectory tr;
  tr.times = sol.times;
  tr.unwrapped = sol.states;
  tr.stats = sol.stats;
  for (const auto& p : sol.states) tr.positions.push_back(field.spec().wrap(p));
  return tr;
}

/// Integrates many starting points in parallel; result order follows `starts`.
inline std::vector<Trajectory> integrate_ensemble(const SlicedField& field, std::span<const Point> starts, double t0,
                                                  double t1, double tolerance, std::span<const double> output_times,
                                                  unsigned threads = default_threads()) {
  std::vector<Trajectory> out(starts.size());
  parallel_for(starts.size(), threads,
               [&](std::size_t i) { out[i] = integrate_trajectory(field, starts[i], t0, t1, tolerance, output_times); });
  return out;
}

/// Position of a trajectory at a recorded time (exact match required).
inline std::optional<Point> position_at(const Trajectory& tr, double t) {
  for (std::size_t i = 0; i < tr.times.size(); ++i)
    if (std::abs(tr.times[i] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return tr.unwrapped[i];
  return std::nullopt;
}

}  // namespace pilotwave
