#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "pilotwave/errors.hpp"

namespace pilotwave::ode {

/// What a velocity field returns at one point: the velocity and the local
/// density that produced it (tracked for quality reporting).
template <typename State>
struct FieldSample {
  State velocity;
  double density = 0.0;
};

struct IntegratorOptions {
  double tolerance = 1e-8;      // local error per step, mixed absolute/relative
  double min_step_fraction = 1e-13;  // step underflow below this fraction of |t1 - t0|
  std::size_t max_steps = 2'000'000;
  double initial_step = 0.0;    // 0 selects |t1 - t0| / 100
  bool record_steps = false;    // also record every accepted step
};

struct IntegratorStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  double min_density = std::numeric_limits<double>::infinity();
  bool flagged = false;         // step underflow or step budget exhausted
};

/// A solution of dx/dt = v(t, x) recorded at requested times.
template <typename State>
struct Solution {
  std::vector<double> times;
  std::vector<State> states;
  IntegratorStats stats;
};

/// Dormand-Prince 5(4) embedded pair with proportional step control.
///
/// `field(t, x)` must return a FieldSample<State>. The integrator lands
/// exactly on every entry of `output_times` (which must lie in (t0, t1] and
/// increase). On step underflow the solution is truncated at the last
/// accepted point and flagged.
template <typename State, typename Field>
Solution<State> integrate(Field&& field, const State& x0, double t0, double t1, std::span<const double> output_times,
                          const IntegratorOptions& opt = {}) {
  if (!(t1 > t0)) throw ValidationError("integration interval requires t1 > t0");
  if (!(opt.tolerance > 0.0)) throw ValidationError("integration tolerance must be positive");
  for (std::size_t i = 0; i < output_times.size(); ++i) {
    if (output_times[i] <= t0 || output_times[i] > t1 || (i > 0 && !(output_times[i] > output_times[i - 1])))
      throw ValidationError("output times must increase within (t0, t1]");
  }

  // Butcher tableau.
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;

  Solution<State> sol;
  sol.times.push_back(t0);
  sol.states.push_back(x0);
  IntegratorStats& stats = sol.stats;

  const std::size_t n = x0.size();
  const double span = t1 - t0;
  const double h_min = opt.min_step_fraction * span;
  double h = opt.initial_step > 0.0 ? opt.initial_step : span / 100.0;

  State x = x0;
  State tmp = x0;
  State xnew = x0;
  double t = t0;

  auto eval = [&](double tt, const State& xx) {
    auto s = field(tt, xx);
    stats.min_density = std::min(stats.min_density, s.density);
    return s.velocity;
  };

  State k1 = eval(t, x);
  std::size_t next_out = 0;
  while (t < t1) {
    if (stats.accepted + stats.rejected >= opt.max_steps) {
      stats.flagged = true;
      break;
    }
    double target = next_out < output_times.size() ? output_times[next_out] : t1;
    bool lands = false;
    double step = h;
    if (t + step >= target) {
      step = target - t;
      lands = true;
    }
    if (step < h_min && !lands) {
      stats.flagged = true;
      break;
    }

    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + step * a21 * k1[i];
    const State k2 = eval(t + c2 * step, tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + step * (a31 * k1[i] + a32 * k2[i]);
    const State k3 = eval(t + c3 * step, tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + step * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    const State k4 = eval(t + c4 * step, tmp);
    for (std::size_t i = 0; i < n; ++i)
      tmp[i] = x[i] + step * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    const State k5 = eval(t + c5 * step, tmp);
    for (std::size_t i = 0; i < n; ++i)
      tmp[i] = x[i] + step * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    const State k6 = eval(t + step, tmp);
    for (std::size_t i = 0; i < n; ++i)
      xnew[i] = x[i] + step * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
    const State k7 = eval(t + step, xnew);

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e =
          step * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double scale = opt.tolerance * (1.0 + std::max(std::abs(x[i]), std::abs(xnew[i])));
      err = std::max(err, std::abs(e) / scale);
    }
    if (!std::isfinite(err)) err = 1e10;

    if (err <= 1.0) {
      t = lands ? target : t + step;
      x = xnew;
      k1 = k7;
      ++stats.accepted;
      const bool is_output = lands && next_out < output_times.size();
      if (is_output) ++next_out;
      if (is_output || opt.record_steps || (lands && t >= t1)) {
        if (sol.times.back() < t) {
          sol.times.push_back(t);
          sol.states.push_back(x);
        }
      }
      const double grow = err > 0.0 ? std::min(5.0, 0.9 * std::pow(err, -0.2)) : 5.0;
      if (!lands) h = step * grow;
      else h = std::max(h, step * grow);
    } else {
      ++stats.rejected;
      h = step * std::max(0.2, 0.9 * std::pow(err, -0.2));
      if (h < h_min) {
        stats.flagged = true;
        break;
      }
    }
  }
  return sol;
}

}  // namespace pilotwave::ode
