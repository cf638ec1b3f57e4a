#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "pilotwave/errors.hpp"
#include "pilotwave/evolution.hpp"
#include "pilotwave/grids.hpp"
#include "pilotwave/guidance.hpp"
#include "pilotwave/parallel.hpp"
#include "pilotwave/statistics.hpp"

namespace pilotwave {

enum class Sampler { inverse_cdf, rejection };

struct EnsembleSpec {
  std::size_t count = 10'000;
  std::uint64_t seed = 1;
  Sampler sampler = Sampler::inverse_cdf;

  void validate() const {
    if (count < 1) throw ValidationError("ensemble count must be positive");
  }
};

/// Density summed over components, at every node.
inline std::vector<double> node_density(std::span<const ComplexGrid> components) {
  std::vector<double> rho(components.front().size(), 0.0);
  for (const auto& c : components)
    for (std::size_t i = 0; i < rho.size(); ++i) rho[i] += std::norm(c[i]);
  return rho;
}

/// Piecewise-linear periodic density on a 1D grid, with its exact
/// (piecewise-quadratic) CDF and inverse. Cell i spans node i to node i+1;
/// the last cell wraps to node 0.
class LineDensity {
public:
  LineDensity(const GridSpec& spec, std::vector<double> rho) : spec_(spec), rho_(std::move(rho)) {
    if (spec_.dim != 1) throw ValidationError("LineDensity needs a 1D grid");
    const double h = spec_.spacing(0);
    cumulative_.assign(rho_.size() + 1, 0.0);
    for (std::size_t i = 0; i < rho_.size(); ++i)
      cumulative_[i + 1] = cumulative_[i] + 0.5 * h * (rho_[i] + rho_[(i + 1) % rho_.size()]);
  }

  explicit LineDensity(std::span<const ComplexGrid> components)
      : LineDensity(components.front().spec(), node_density(components)) {}

  double total() const { return cumulative_.back(); }

  /// Normalized CDF on [lower, lower + extent) after periodic wrap.
  double cdf(double x) const {
    const double h = spec_.spacing(0);
    const double r = spec_.wrap(0, x) - spec_.lower[0];
    auto i = static_cast<std::size_t>(std::floor(r / h));
    if (i >= rho_.size()) i = rho_.size() - 1;
    const double s = std::clamp(r - static_cast<double>(i) * h, 0.0, h);
    const double a = rho_[i];
    const double b = rho_[(i + 1) % rho_.size()];
    const double partial = a * s + 0.5 * (b - a) * s * s / h;
    return std::clamp((cumulative_[i] + partial) / total(), 0.0, 1.0);
  }

  /// Position whose CDF equals u in [0, 1).
  double quantile(double u) const {
    const double target = u * total();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
    std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cumulative_.begin() - 1, 0));
    if (i >= rho_.size()) i = rho_.size() - 1;
    while (i > 0 && cumulative_[i + 1] == cumulative_[i] && cumulative_[i] >= target) --i;
    const double h = spec_.spacing(0);
    const double a = rho_[i];
    const double b = rho_[(i + 1) % rho_.size()];
    const double m = std::max(target - cumulative_[i], 0.0);
    // Solve a s + (b - a) s^2 / (2h) = m for s in [0, h].
    const double slope = (b - a) / h;
    double s = 0.0;
    if (std::abs(slope) * h < 1e-14 * std::max(a, b) || slope == 0.0) {
      s = a > 0.0 ? m / a : 0.5 * h;
    } else {
      const double disc = std::max(a * a + 2.0 * slope * m, 0.0);
      s = 2.0 * m / (a + std::sqrt(disc));
    }
    return spec_.lower[0] + static_cast<double>(i) * h + std::clamp(s, 0.0, h);
  }

private:
  GridSpec spec_;
  std::vector<double> rho_;
  std::vector<double> cumulative_;
};

/// Bilinear periodic density on a 2D grid.
class PlaneDensity {
public:
  PlaneDensity(const GridSpec& spec, std::vector<double> rho) : spec_(spec), rho_(std::move(rho)) {
    if (spec_.dim != 2) throw ValidationError("PlaneDensity needs a 2D grid");
    max_ = *std::max_element(rho_.begin(), rho_.end());
  }
  explicit PlaneDensity(std::span<const ComplexGrid> components)
      : PlaneDensity(components.front().spec(), node_density(components)) {}

  double max() const { return max_; }

  double at(const Point& x) const {
    const std::size_t nx = spec_.points[0], ny = spec_.points[1];
    const double ux = (spec_.wrap(0, x[0]) - spec_.lower[0]) / spec_.spacing(0);
    const double uy = (spec_.wrap(1, x[1]) - spec_.lower[1]) / spec_.spacing(1);
    const auto i = std::min(static_cast<std::size_t>(ux), nx - 1);
    const auto j = std::min(static_cast<std::size_t>(uy), ny - 1);
    const double fx = ux - static_cast<double>(i), fy = uy - static_cast<double>(j);
    const std::size_t i1 = (i + 1) % nx, j1 = (j + 1) % ny;
    return (1 - fx) * (1 - fy) * rho_[i + nx * j] + fx * (1 - fy) * rho_[i1 + nx * j] +
           (1 - fx) * fy * rho_[i + nx * j1] + fx * fy * rho_[i1 + nx * j1];
  }

  /// Integral of the bilinear density over each cell (corner average).
  std::vector<double> cell_masses() const {
    const std::size_t nx = spec_.points[0], ny = spec_.points[1];
    std::vector<double> m(rho_.size());
    const double area = spec_.cell_volume();
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) {
        const std::size_t i1 = (i + 1) % nx, j1 = (j + 1) % ny;
        m[i + nx * j] =
            0.25 * area * (rho_[i + nx * j] + rho_[i1 + nx * j] + rho_[i + nx * j1] + rho_[i1 + nx * j1]);
      }
    return m;
  }

  const GridSpec& spec() const { return spec_; }

private:
  GridSpec spec_;
  std::vector<double> rho_;
  double max_ = 0.0;
};

/// I.i.d. draws from the normalized density sum_a |psi_a|^2: exact inverse
/// CDF in 1D, rejection against the grid maximum in 2D.
inline std::vector<Point> sample_density(std::span<const ComplexGrid> components, const EnsembleSpec& ens,
                                         double norm_tolerance = 1e-8) {
  ens.validate();
  double norm = 0.0;
  for (const auto& c : components) norm += c.norm_squared();
  if (std::abs(norm - 1.0) > norm_tolerance)
    throw ValidationError(fmt::format("sample_density: state not normalized (norm^2 = {:.12g})", norm));
  const GridSpec& spec = components.front().spec();
  Rng rng(ens.seed);
  std::vector<Point> out;
  out.reserve(ens.count);
  if (spec.dim == 1) {
    if (ens.sampler != Sampler::inverse_cdf) throw ValidationError("1D sampling uses the inverse-CDF sampler");
    const LineDensity dens(components);
    for (std::size_t i = 0; i < ens.count; ++i) out.push_back({dens.quantile(rng.uniform()), 0.0});
    return out;
  }
  if (ens.sampler != Sampler::rejection) throw ValidationError("2D sampling uses the rejection sampler");
  const PlaneDensity dens(components);
  while (out.size() < ens.count) {
    const Point x{spec.lower[0] + spec.extent[0] * rng.uniform(), spec.lower[1] + spec.extent[1] * rng.uniform()};
    if (rng.uniform() * dens.max() < dens.at(x)) out.push_back(x);
  }
  return out;
}

inline std::vector<Point> sample_density(const ComplexGrid& psi, const EnsembleSpec& ens) {
  return sample_density(std::span<const ComplexGrid>(&psi, 1), ens);
}

/// Goodness of fit of positions against sum_a |psi_a|^2: KS in 1D, binned
/// chi-square in 2D (blocks of `block` x `block` cells).
inline TestResult density_fit(std::span<const Point> positions, std::span<const ComplexGrid> components,
                              std::size_t block = 8) {
  const GridSpec& spec = components.front().spec();
  if (spec.dim == 1) {
    const LineDensity dens(components);
    std::vector<double> xs;
    xs.reserve(positions.size());
    for (const auto& p : positions) xs.push_back(p[0]);
    return ks_test(std::move(xs), [&](double x) { return dens.cdf(x); });
  }
  const PlaneDensity dens(components);
  const auto cells = dens.cell_masses();
  const std::size_t nx = spec.points[0], ny = spec.points[1];
  const std::size_t bx = (nx + block - 1) / block, by = (ny + block - 1) / block;
  std::vector<double> expected(bx * by, 0.0), observed(bx * by, 0.0);
  double total = 0.0;
  for (double m : cells) total += m;
  const double n = static_cast<double>(positions.size());
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) expected[(i / block) + bx * (j / block)] += n * cells[i + nx * j] / total;
  for (const auto& p : positions) {
    const auto i = std::min(static_cast<std::size_t>((spec.wrap(0, p[0]) - spec.lower[0]) / spec.spacing(0)), nx - 1);
    const auto j = std::min(static_cast<std::size_t>((spec.wrap(1, p[1]) - spec.lower[1]) / spec.spacing(1)), ny - 1);
    observed[(i / block) + bx * (j / block)] += 1.0;
  }
  return chi_square_test(observed, expected);
}

struct EquivarianceReport {
  std::vector<double> times;
  std::vector<double> statistics;  // KS D (1D) or chi-square (2D)
  std::vector<double> p_values;
  std::vector<bool> passed;
  std::string test;                // "ks" or "chi-square"
  double significance = 0.01;
  double per_time_threshold = 0.01;  // after Bonferroni correction
  std::size_t ensemble = 0;
  std::size_t flagged = 0;
  std::uint64_t seed = 0;
  ReportStatus status = ReportStatus::pass;
  EvolutionDiagnostics evolution;
};

struct EquivarianceOptions {
  double significance = 0.01;
  double tolerance = 1e-8;       // trajectory integration
  double dt = 0.0;               // 0 selects suggest_time_step
  double store_interval = 0.0;   // 0 selects suggest_store_interval
  double velocity_scale = 1.0;   // != 1 only for negative controls
  double max_flagged_fraction = 0.01;
  unsigned threads = default_threads();
};

/// Slice spacing keeping the phase advance of the state's significant
/// content (relative weight 1e-6) plus the on-support potential range below
/// `max_phase` radians between slices.
inline double suggest_store_interval(const ComplexGrid& psi, std::span<const double> potential,
                                     double extra_momentum = 0.0, double max_phase = 0.05) {
  const double k = significant_wavenumber(psi, 1e-6) + std::abs(extra_momentum);
  double peak = 0.0;
  for (const cplx& v : psi.values()) peak = std::max(peak, std::norm(v));
  double vmax = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i)
    if (std::norm(psi[i]) > 1e-6 * peak) vmax = std::max(vmax, std::abs(potential[i]));
  const double rate = 0.5 * k * k + vmax;
  return rate > 0.0 ? max_phase / rate : 1.0;
}

/// Step count and exact step size covering [0, duration] with steps no longer
/// than `dt`, in whole multiples of `store_every`.
struct Schedule {
  double dt = 0.0;
  std::size_t steps = 0;
  std::size_t store_every = 1;
};

inline Schedule make_schedule(double duration, double dt, double store_interval) {
  if (!(duration > 0.0)) throw ValidationError("schedule needs a positive duration");
  if (!(dt > 0.0)) throw ValidationError("time step must be positive");
  Schedule s;
  s.store_every = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(store_interval / dt)));
  const std::size_t blocks =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(duration / (dt * static_cast<double>(s.store_every)))));
  s.steps = blocks * s.store_every;
  s.dt = duration / static_cast<double>(s.steps);
  return s;
}

/// Samples at t = 0 from |psi0|^2, transports each sample along its
/// trajectory, and tests the empirical distribution at every probe time
/// against |psi(t)|^2 (Bonferroni-corrected significance).
inline EquivarianceReport check_equivariance(const ComplexGrid& psi0, const Potential& v, const EnsembleSpec& ens,
                                             std::vector<double> times, const EquivarianceOptions& opt = {}) {
  if (times.empty()) throw ValidationError("equivariance check needs at least one probe time");
  std::sort(times.begin(), times.end());
  if (times.front() < 0.0) throw ValidationError("probe times must be >= 0");
  if (ens.count < 100) throw ValidationError("statistical tests need at least 100 samples");
  const GridSpec& spec = psi0.spec();

  EquivarianceReport report;
  report.times = times;
  report.test = spec.dim == 1 ? "ks" : "chi-square";
  report.significance = opt.significance;
  report.per_time_threshold = opt.significance / static_cast<double>(times.size());
  report.ensemble = ens.count;
  report.seed = ens.seed;

  const auto starts = sample_density(psi0, ens);
  const double tmax = times.back();
  const auto pot = v.sample(spec);

  std::vector<std::vector<Point>> at_time(times.size());
  std::vector<bool> flagged(starts.size(), false);
  std::vector<ComplexGrid> references;

  if (tmax == 0.0) {
    for (auto& a : at_time) a = starts;
    references.assign(times.size(), psi0);
  } else {
    const double dt = opt.dt > 0.0 ? opt.dt : suggest_time_step(psi0, pot);
    const double store = opt.store_interval > 0.0 ? opt.store_interval : suggest_store_interval(psi0, pot);
    const Schedule sched = make_schedule(tmax, dt, std::max(store, dt));
    EvolutionOptions eo;
    eo.store_every = sched.store_every;
    ScalarEvolver evolver(spec, v, eo);
    WaveSlices slices;
    evolver.run(psi0, 0.0, sched.dt, sched.steps, &slices);
    report.evolution = evolver.diagnostics();

    for (double t : times) {
      if (t == 0.0) {
        references.push_back(psi0);
        continue;
      }
      const auto n = static_cast<std::size_t>(std::ceil(t / sched.dt - 1e-9));
      ScalarEvolver ref(spec, v);
      references.push_back(ref.run(psi0, 0.0, t / static_cast<double>(n), n));
    }

    const SlicedField field(slices, opt.velocity_scale);
    std::vector<double> outs;
    for (double t : times)
      if (t > 0.0 && (outs.empty() || t > outs.back())) outs.push_back(t);
    const auto trajs = integrate_ensemble(field, starts, 0.0, tmax, opt.tolerance, outs, opt.threads);
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      flagged[i] = trajs[i].flagged();
      if (flagged[i]) continue;
      for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] == 0.0) {
          at_time[k].push_back(starts[i]);
        } else if (auto p = position_at(trajs[i], times[k])) {
          at_time[k].push_back(*p);
        }
      }
    }
  }
  report.flagged = static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), true));

  bool all = true;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const auto r = density_fit(at_time[k], std::span<const ComplexGrid>(&references[k], 1));
    report.statistics.push_back(r.statistic);
    report.p_values.push_back(r.p_value);
    const bool ok = r.p_value >= report.per_time_threshold;
    report.passed.push_back(ok);
    all = all && ok;
  }
  const double flagged_fraction = static_cast<double>(report.flagged) / static_cast<double>(ens.count);
  if (flagged_fraction > opt.max_flagged_fraction || report.evolution.escaped) {
    report.status = ReportStatus::inconclusive;
  } else {
    report.status = all ? ReportStatus::pass : ReportStatus::fail;
  }
  return report;
}

struct ResidualNorm {
  double time = 0.0;
  double max_norm = 0.0;
  double l2_norm = 0.0;
};

/// Discrete residual of d rho/dt + div j at interior slices, with
/// rho = sum_a |psi_a|^2, j = sum_a Im(psi_a* grad psi_a) (= rho grad S),
/// spectral divergence and central differences in time. Slices must be
/// equally spaced.
inline std::vector<ResidualNorm> continuity_residual(const WaveSlices& slices) {
  if (slices.size() < 3) throw ValidationError("continuity residual needs at least 3 slices");
  const double dt = slices.times[1] - slices.times[0];
  for (std::size_t i = 1; i < slices.size(); ++i)
    if (std::abs((slices.times[i] - slices.times[i - 1]) - dt) > 1e-9 * std::abs(dt))
      throw ValidationError("continuity residual needs equally spaced slices");
  const GridSpec& spec = slices.spec();
  const std::size_t n = spec.size();

  auto density = [&](std::size_t s) { return node_density(slices.states[s]); };
  auto divergence = [&](std::size_t s) {
    std::vector<double> div(n, 0.0);
    for (int ax = 0; ax < spec.dim; ++ax) {
      ComplexGrid j(spec);
      for (const auto& c : slices.states[s]) {
        const auto g = gradient(c);
        for (std::size_t i = 0; i < n; ++i) j[i] += (std::conj(c[i]) * g[ax][i]).imag();
      }
      const auto dj = gradient(j);
      for (std::size_t i = 0; i < n; ++i) div[i] += dj[ax][i].real();
    }
    return div;
  };

  std::vector<ResidualNorm> out;
  for (std::size_t s = 1; s + 1 < slices.size(); ++s) {
    const auto before = density(s - 1);
    const auto after = density(s + 1);
    const auto div = divergence(s);
    ResidualNorm r;
    r.time = slices.times[s];
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double res = (after[i] - before[i]) / (2.0 * dt) + div[i];
      r.max_norm = std::max(r.max_norm, std::abs(res));
      sum += res * res;
    }
    r.l2_norm = std::sqrt(sum * spec.cell_volume());
    out.push_back(r);
  }
  return out;
}

}  // namespace pilotwave
