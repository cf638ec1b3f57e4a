#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "pilotwave/adequacy.hpp"
#include "pilotwave/cli/config.hpp"
#include "pilotwave/cli/output.hpp"
#include "pilotwave/equilibrium.hpp"
#include "pilotwave/evolution.hpp"
#include "pilotwave/fieldmodes.hpp"
#include "pilotwave/guidance.hpp"
#include "pilotwave/scenarios.hpp"

namespace pilotwave::cli {

enum ExitCode : int { kSuccess = 0, kValidation = 1, kNumerical = 2, kStatistical = 3 };

inline int exit_code_for(ReportStatus s) {
  switch (s) {
    case ReportStatus::pass: return kSuccess;
    case ReportStatus::fail: return kStatistical;
    case ReportStatus::inconclusive: return kNumerical;
  }
  return kNumerical;
}

struct Context {
  std::uint64_t seed = 1;
  unsigned threads = 1;
  OutputDirectory* out = nullptr;
  std::vector<std::string> summary;

  void say(std::string line) { summary.push_back(std::move(line)); }
};

struct Outcome {
  int exit_code = kSuccess;
  Json report;
};

namespace schema {

inline void append(Schema& s, const Schema& more) { s.insert(s.end(), more.begin(), more.end()); }

inline Schema run() {
  return {{"run.seed", ValueKind::integer, "1", "random seed for every sampled ensemble"},
          {"run.threads", ValueKind::integer, "0", "worker threads; 0 uses the machine's parallelism"}};
}

inline Schema grid(bool required) {
  const auto d = [&](const char* v) { return required ? std::string(v) : std::string(); };
  return {{"grid.dim", ValueKind::integer, d("1"), "1 or 2"},
          {"grid.extent", ValueKind::real, d("40"), "periodic box length along x (1D: the only axis)"},
          {"grid.points", ValueKind::integer, d("512"), "nodes along x; powers of two are fastest"},
          {"grid.extent_z", ValueKind::real, d("40"), "box length along z (2D)"},
          {"grid.points_z", ValueKind::integer, d("128"), "nodes along z (2D)"}};
}

inline Schema packet(bool required) {
  const auto d = [&](const char* v) { return required ? std::string(v) : std::string(); };
  return {{"state.center", ValueKind::real, d("0"), "packet center along x"},
          {"state.width", ValueKind::real, d("1"), "position standard deviation along x"},
          {"state.momentum", ValueKind::real, d("0"), "mean momentum along x"},
          {"state.center_z", ValueKind::real, d("0"), "packet center along z (2D)"},
          {"state.width_z", ValueKind::real, d("1"), "standard deviation along z (2D)"},
          {"state.momentum_z", ValueKind::real, d("0"), "mean momentum along z (2D)"}};
}

inline Schema scalar_state() {
  Schema s = grid(true);
  append(s, packet(true));
  append(s, {{"state.kind", ValueKind::text, "gaussian", "gaussian or superposition"},
             {"state.separation", ValueKind::real, "0", "superposition: distance between the two packets along x"},
             {"state.weight", ValueKind::real, "0.5", "superposition: weight of the left packet before normalization"},
             {"state.relative_phase", ValueKind::real, "0", "superposition: phase of the right packet"},
             {"potential.kind", ValueKind::text, "free", "free, harmonic or barrier"},
             {"potential.omega", ValueKind::real, "1", "harmonic frequency"},
             {"potential.height", ValueKind::real, "0", "barrier height"},
             {"potential.width", ValueKind::real, "1", "barrier width, centered at x = 0"}});
  append(s, run());
  return s;
}

inline Schema evolve() {
  Schema s = scalar_state();
  append(s, {{"evolve.duration", ValueKind::real, "2", "evolution time"},
             {"evolve.dt", ValueKind::real, "0", "time step; 0 keeps the phase advance per step below 0.1 rad"},
             {"evolve.snapshots", ValueKind::integer, "5", "density snapshots written, including t = 0"},
             {"evolve.norm_tolerance", ValueKind::real, "1e-8", "allowed relative norm drift"}});
  return s;
}

inline Schema trajectories() {
  Schema s = scalar_state();
  append(s, {{"trajectories.duration", ValueKind::real, "2", "integration time"},
             {"trajectories.count", ValueKind::integer, "100", "trajectories sampled from |psi0|^2"},
             {"trajectories.outputs", ValueKind::integer, "20", "equally spaced output times after t = 0"},
             {"trajectories.dt", ValueKind::real, "0", "wave time step; 0 selects automatically"},
             {"trajectories.store_interval", ValueKind::real, "0", "slice spacing; 0 selects automatically"},
             {"trajectories.tolerance", ValueKind::real, "1e-8", "integrator tolerance"},
             {"trajectories.max_flagged_fraction", ValueKind::real, "0.01", "flagged fraction above which the run is inconclusive"}});
  return s;
}

inline Schema equivariance() {
  Schema s = scalar_state();
  append(s, {{"equivariance.times", ValueKind::real_list, "0.5,1,2", "probe times"},
             {"equivariance.count", ValueKind::integer, "10000", "ensemble size"},
             {"equivariance.significance", ValueKind::real, "0.01", "family-wise significance"},
             {"equivariance.velocity_scale", ValueKind::real, "1", "velocity multiplier; != 1 only for negative controls"},
             {"equivariance.dt", ValueKind::real, "0", "wave time step; 0 selects automatically"},
             {"equivariance.store_interval", ValueKind::real, "0", "slice spacing; 0 selects automatically"},
             {"equivariance.tolerance", ValueKind::real, "1e-8", "integrator tolerance"},
             {"equivariance.max_flagged_fraction", ValueKind::real, "0.01", "flagged fraction above which the run is inconclusive"}});
  return s;
}

inline Schema modes() {
  return {{"modes.sites", ValueKind::integer, "64", "lattice sites of the periodic field"},
          {"modes.count", ValueKind::integer, "8", "retained modes"},
          {"modes.scale", ValueKind::real, "1", "frequency scale"}};
}

inline Schema fieldmodes() {
  Schema s = modes();
  append(s, {{"field.mode", ValueKind::integer, "0", "mode placed in the displaced/squeezed state"},
             {"field.mean", ValueKind::real, "0", "mean amplitude of that mode"},
             {"field.momentum", ValueKind::real, "0", "mean momentum of that mode"},
             {"field.squeeze", ValueKind::real, "1", "width factor: variance is 1/(2 omega squeeze)"},
             {"fieldmodes.times", ValueKind::real_list, "0.5,1,2", "probe times"},
             {"fieldmodes.count", ValueKind::integer, "10000", "ensemble size"},
             {"fieldmodes.significance", ValueKind::real, "0.01", "family-wise significance"},
             {"fieldmodes.tolerance", ValueKind::real, "1e-8", "integrator tolerance"},
             {"fieldmodes.traced", ValueKind::integer, "4", "configurations written as full traces"},
             {"fieldmodes.trace_points", ValueKind::integer, "50", "output times per trace"},
             {"fieldmodes.max_flagged_fraction", ValueKind::real, "0.01", "flagged fraction above which the run is inconclusive"}});
  append(s, run());
  return s;
}

inline Schema bounds() {
  Schema s{{"bounds.lattice_spacing", ValueKind::real, "1e-35", "lattice spacing a [m]"},
           {"bounds.density", ValueKind::real, "1e30", "particle number density rho [m^-3]"},
           {"bounds.cutoff", ValueKind::real, "1e35", "momentum cutoff Lambda [m^-1]"},
           {"bounds.margin", ValueKind::real, "100", "factor rendering 'much greater than'"},
           {"bounds.region", ValueKind::real, "", "candidate region edge [m] judged against L*"},
           {"bounds.radius", ValueKind::real, "", "candidate region radius [m] judged against the Dirac-sea radius"}};
  append(s, run());
  return s;
}

inline Schema sterngerlach() {
  Schema s{{"sterngerlach.dimension", ValueKind::integer, "1", "1 (line) or 2 (plane with drift along x)"},
           {"sterngerlach.spin", ValueKind::text, "x-up", "z-up, z-down, x-up, x-down, y-up, y-down or custom"},
           {"sterngerlach.alpha_re", ValueKind::real, "", "custom spinor, up amplitude (real part)"},
           {"sterngerlach.alpha_im", ValueKind::real, "", "custom spinor, up amplitude (imaginary part)"},
           {"sterngerlach.beta_re", ValueKind::real, "", "custom spinor, down amplitude (real part)"},
           {"sterngerlach.beta_im", ValueKind::real, "", "custom spinor, down amplitude (imaginary part)"},
           {"sterngerlach.count", ValueKind::integer, "10000", "trajectories"},
           {"sterngerlach.separation_widths", ValueKind::real, "6", "classification threshold in combined widths"},
           {"sterngerlach.stability_low", ValueKind::real, "4", "lower stability threshold"},
           {"sterngerlach.stability_high", ValueKind::real, "10", "upper stability threshold"},
           {"sterngerlach.check_stability", ValueKind::boolean, "true", "compare labels at the stability thresholds"},
           {"sterngerlach.max_time", ValueKind::real, "", "evolution limit; unset keeps the scenario default"},
           {"sterngerlach.dt", ValueKind::real, "0", "time step; 0 selects automatically"},
           {"sterngerlach.store_interval", ValueKind::real, "", "slice spacing; unset keeps the scenario default"},
           {"sterngerlach.tolerance", ValueKind::real, "1e-8", "integrator tolerance"},
           {"sterngerlach.trace_count", ValueKind::integer, "16", "trajectories with spin traces"},
           {"sterngerlach.trace_points", ValueKind::integer, "64", "trace output times"},
           {"sterngerlach.max_flagged_fraction", ValueKind::real, "0.01", "flagged fraction above which the run is inconclusive"},
           {"coupling.mu", ValueKind::real, "", "magnetic moment"},
           {"coupling.b0", ValueKind::real, "", "uniform field"},
           {"coupling.gradient", ValueKind::real, "", "field gradient along z"},
           {"coupling.t_on", ValueKind::real, "", "magnet switched on"},
           {"coupling.t_off", ValueKind::real, "", "magnet switched off"},
           {"coupling.slab_start", ValueKind::real, "", "2D: magnet region start along x"},
           {"coupling.slab_end", ValueKind::real, "", "2D: magnet region end along x"}};
  append(s, grid(false));
  append(s, packet(false));
  append(s, run());
  return s;
}

inline Schema branching() {
  Schema s = modes();
  append(s, {{"branching.pointer_mode", ValueKind::integer, "0", "mode coupled to the labels"},
             {"branching.label0_re", ValueKind::real, "0.70710678118654752", "label 0 amplitude (real part)"},
             {"branching.label0_im", ValueKind::real, "0", "label 0 amplitude (imaginary part)"},
             {"branching.label1_re", ValueKind::real, "0.70710678118654752", "label 1 amplitude (real part)"},
             {"branching.label1_im", ValueKind::real, "0", "label 1 amplitude (imaginary part)"},
             {"branching.coupling_enabled", ValueKind::boolean, "true", "switch the label coupling on"},
             {"branching.strength", ValueKind::real, "0", "coupling strength; 0 reaches target_widths at the end"},
             {"branching.target_widths", ValueKind::real, "12", "pointer separation at the end, in combined widths"},
             {"branching.label_energy_0", ValueKind::real, "0", "label 0 energy"},
             {"branching.label_energy_1", ValueKind::real, "0", "label 1 energy"},
             {"branching.collapse_widths", ValueKind::real, "8", "separation required for the collapse check"},
             {"branching.contamination_limit", ValueKind::real, "1e-6", "allowed cross-branch energy-density contamination"},
             {"branching.profile_width", ValueKind::real, "3", "energy-density packet width in sites"},
             {"branching.profile_amplitude", ValueKind::real, "1", "energy-density packet amplitude"},
             {"branching.runs", ValueKind::integer, "1000", "independent runs"},
             {"branching.tolerance", ValueKind::real, "1e-8", "integrator tolerance"},
             {"branching.trace_points", ValueKind::integer, "32", "output times of the representative run"}});
  append(s, run());
  return s;
}

}  // namespace schema

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"evolve",   "trajectories", "equivariance", "fieldmodes",
                                              "bounds",   "sterngerlach", "branching"};
  return names;
}

inline Schema schema_for(const std::string& command) {
  if (command == "evolve") return schema::evolve();
  if (command == "trajectories") return schema::trajectories();
  if (command == "equivariance") return schema::equivariance();
  if (command == "fieldmodes") return schema::fieldmodes();
  if (command == "bounds") return schema::bounds();
  if (command == "sterngerlach") return schema::sterngerlach();
  if (command == "branching") return schema::branching();
  throw ValidationError(fmt::format("unknown command '{}'", command));
}

namespace build {

inline GridSpec grid(const Config& c) {
  const auto dim = c.integer("grid.dim");
  if (dim == 1) return GridSpec::line(c.real("grid.extent"), c.count("grid.points"));
  if (dim == 2) return GridSpec::plane(c.real("grid.extent"), c.count("grid.points"), c.real("grid.extent_z"), c.count("grid.points_z"));
  throw ValidationError("grid.dim must be 1 or 2");
}

inline GaussianPacket packet(const Config& c) {
  return {{c.real("state.center"), c.real("state.center_z")},
          {c.real("state.width"), c.real("state.width_z")},
          {c.real("state.momentum"), c.real("state.momentum_z")}};
}

inline ComplexGrid scalar_state(const Config& c, const GridSpec& spec) {
  const auto p = packet(c);
  for (int a = 0; a < spec.dim; ++a)
    if (!(p.width[a] > 0.0)) throw ValidationError("packet widths must be positive");
  const auto kind = c.text("state.kind");
  if (kind == "gaussian") return normalized(p.sample(spec));
  if (kind != "superposition") throw ValidationError(fmt::format("state.kind '{}' is not gaussian or superposition", kind));
  const double w = c.real("state.weight");
  if (!(w > 0.0 && w < 1.0)) throw ValidationError("state.weight must lie in (0, 1)");
  const double s = c.real("state.separation");
  auto left = p, right = p;
  left.center[0] -= 0.5 * s;
  right.center[0] += 0.5 * s;
  return normalized(std::sqrt(w) * left.sample(spec) +
                    std::polar(std::sqrt(1.0 - w), c.real("state.relative_phase")) * right.sample(spec));
}

inline Potential potential(const Config& c) {
  const auto kind = c.text("potential.kind");
  if (kind == "free") return Potential::free();
  if (kind == "harmonic") return Potential::harmonic(c.real("potential.omega"));
  if (kind == "barrier") return Potential::barrier(c.real("potential.height"), c.real("potential.width"));
  throw ValidationError(fmt::format("potential.kind '{}' is not free, harmonic or barrier", kind));
}

inline ModeBasis basis(const Config& c) {
  ModeBasis b{.sites = c.count("modes.sites"), .modes = c.count("modes.count"), .scale = c.real("modes.scale")};
  b.validate();
  return b;
}

}  // namespace build

namespace detail {

inline std::vector<TsvTable::Column> position_columns(int dim, const std::string& suffix = "") {
  if (dim == 1) return {{"x" + suffix, "length"}};
  return {{"x" + suffix, "length"}, {"z" + suffix, "length"}};
}

inline void push_position(std::vector<TsvTable::Cell>& row, int dim, const Point& p) {
  row.emplace_back(p[0]);
  if (dim == 2) row.emplace_back(p[1]);
}

inline Json evolution_json(const EvolutionDiagnostics& d) {
  return {{"steps", d.steps}, {"max_norm_deviation", d.max_norm_deviation}, {"max_guard_mass", d.max_guard_mass},
          {"escaped", d.escaped}};
}

}  // namespace detail

inline Outcome cmd_evolve(const Config& c, Context& ctx) {
  const auto spec = build::grid(c);
  const auto pot = build::potential(c);
  const auto psi0 = build::scalar_state(c, spec);
  const double duration = c.real("evolve.duration");
  const auto snaps = c.count("evolve.snapshots");
  if (snaps < 2) throw ValidationError("evolve.snapshots must be >= 2");
  const auto pv = pot.sample(spec);
  const double dt = c.real("evolve.dt") > 0.0 ? c.real("evolve.dt") : suggest_time_step(psi0, pv);
  const auto sched = make_schedule(duration, dt, duration / static_cast<double>(snaps - 1));
  EvolutionOptions eo;
  eo.norm_tolerance = c.real("evolve.norm_tolerance");
  eo.store_every = sched.store_every;
  ScalarEvolver ev(spec, pot, eo);
  WaveSlices slices;
  const auto psi1 = ev.run(psi0, 0.0, sched.dt, sched.steps, &slices);

  auto cols = detail::position_columns(spec.dim);
  cols.insert(cols.begin(), {"t", "time"});
  cols.push_back({"density", "1/volume"});
  cols.push_back({"re_psi", ""});
  cols.push_back({"im_psi", ""});
  TsvTable table(cols);
  for (std::size_t s = 0; s < slices.size(); ++s) {
    const auto& g = slices.states[s][0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::vector<TsvTable::Cell> row{slices.times[s]};
      detail::push_position(row, spec.dim, spec.position(i));
      row.emplace_back(std::norm(g[i]));
      row.emplace_back(g[i].real());
      row.emplace_back(g[i].imag());
      table.row(row);
    }
  }
  ctx.out->write("density.tsv", table.text());

  const auto& d = ev.diagnostics();
  Outcome o;
  o.report = {{"command", "evolve"},
              {"status", d.escaped ? "inconclusive" : "pass"},
              {"duration", duration},
              {"dt", sched.dt},
              {"snapshots", slices.size()},
              {"energy_initial", energy_expectation(psi0, pv)},
              {"energy_final", energy_expectation(psi1, pv)},
              {"evolution", detail::evolution_json(d)}};
  o.exit_code = d.escaped ? kNumerical : kSuccess;
  ctx.say(fmt::format("evolved {} steps of {:.3g}; max norm drift {:.2e}{}", sched.steps, sched.dt, d.max_norm_deviation,
                      d.escaped ? "; wave reached the guard band" : ""));
  return o;
}

inline Outcome cmd_trajectories(const Config& c, Context& ctx) {
  const auto spec = build::grid(c);
  const auto pot = build::potential(c);
  const auto psi0 = build::scalar_state(c, spec);
  const double duration = c.real("trajectories.duration");
  if (!(duration > 0.0)) throw ValidationError("trajectories.duration must be positive");
  const auto outputs = c.count("trajectories.outputs");
  if (outputs < 1) throw ValidationError("trajectories.outputs must be >= 1");
  const auto pv = pot.sample(spec);
  const double dt = c.real("trajectories.dt") > 0.0 ? c.real("trajectories.dt") : suggest_time_step(psi0, pv);
  const double store = c.real("trajectories.store_interval") > 0.0 ? c.real("trajectories.store_interval")
                                                                    : suggest_store_interval(psi0, pv);
  const auto sched = make_schedule(duration, dt, std::max(store, dt));
  EvolutionOptions eo;
  eo.store_every = sched.store_every;
  ScalarEvolver ev(spec, pot, eo);
  WaveSlices slices;
  ev.run(psi0, 0.0, sched.dt, sched.steps, &slices);

  EnsembleSpec ens{.count = c.count("trajectories.count"), .seed = ctx.seed,
                   .sampler = spec.dim == 1 ? Sampler::inverse_cdf : Sampler::rejection};
  const auto starts = sample_density(psi0, ens);
  std::vector<double> outs;
  for (std::size_t k = 1; k <= outputs; ++k) outs.push_back(duration * static_cast<double>(k) / static_cast<double>(outputs));
  const SlicedField field(std::move(slices));
  const auto trajs = integrate_ensemble(field, starts, 0.0, duration, c.real("trajectories.tolerance"), outs, ctx.threads);

  auto cols = detail::position_columns(spec.dim);
  cols.insert(cols.begin(), {"t", "time"});
  cols.insert(cols.begin(), {"trajectory", ""});
  cols.push_back({"flagged", ""});
  TsvTable table(cols);
  std::size_t flagged = 0, accepted = 0, rejected = 0;
  double min_density = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    flagged += tr.flagged() ? 1 : 0;
    accepted += tr.stats.accepted;
    rejected += tr.stats.rejected;
    min_density = std::min(min_density, tr.stats.min_density);
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      std::vector<TsvTable::Cell> row{static_cast<std::int64_t>(i), tr.times[k]};
      detail::push_position(row, spec.dim, tr.unwrapped[k]);
      row.emplace_back(static_cast<std::int64_t>(tr.flagged() ? 1 : 0));
      table.row(row);
    }
  }
  ctx.out->write("trajectories.tsv", table.text());

  const double frac = static_cast<double>(flagged) / static_cast<double>(trajs.size());
  const bool ok = frac <= c.real("trajectories.max_flagged_fraction") && !ev.diagnostics().escaped;
  Outcome o;
  o.report = {{"command", "trajectories"},
              {"status", ok ? "pass" : "inconclusive"},
              {"count", trajs.size()},
              {"seed", ctx.seed},
              {"flagged", flagged},
              {"flagged_fraction", frac},
              {"integrator", {{"accepted", accepted}, {"rejected", rejected}, {"min_density", min_density}}},
              {"evolution", detail::evolution_json(ev.diagnostics())}};
  o.exit_code = ok ? kSuccess : kNumerical;
  ctx.say(fmt::format("{} trajectories to t = {:.6g}; {} flagged", trajs.size(), duration, flagged));
  return o;
}

inline Outcome cmd_equivariance(const Config& c, Context& ctx) {
  const auto spec = build::grid(c);
  const auto pot = build::potential(c);
  const auto psi0 = build::scalar_state(c, spec);
  EnsembleSpec ens{.count = c.count("equivariance.count"), .seed = ctx.seed,
                   .sampler = spec.dim == 1 ? Sampler::inverse_cdf : Sampler::rejection};
  EquivarianceOptions opt;
  opt.significance = c.real("equivariance.significance");
  opt.tolerance = c.real("equivariance.tolerance");
  opt.dt = c.real("equivariance.dt");
  opt.store_interval = c.real("equivariance.store_interval");
  opt.velocity_scale = c.real("equivariance.velocity_scale");
  opt.max_flagged_fraction = c.real("equivariance.max_flagged_fraction");
  opt.threads = ctx.threads;
  const auto r = check_equivariance(psi0, pot, ens, c.real_list("equivariance.times"), opt);

  TsvTable table({{"t", "time"}, {"statistic", ""}, {"p_value", ""}, {"passed", ""}});
  for (std::size_t k = 0; k < r.times.size(); ++k)
    table.row({r.times[k], r.statistics[k], r.p_values[k], static_cast<std::int64_t>(r.passed[k] ? 1 : 0)});
  ctx.out->write("equivariance.tsv", table.text());

  Outcome o;
  o.report = {{"command", "equivariance"},
              {"status", to_string(r.status)},
              {"test", r.test},
              {"times", r.times},
              {"statistics", r.statistics},
              {"p_values", r.p_values},
              {"significance", r.significance},
              {"per_time_threshold", r.per_time_threshold},
              {"ensemble", r.ensemble},
              {"flagged", r.flagged},
              {"seed", r.seed},
              {"velocity_scale", opt.velocity_scale},
              {"evolution", detail::evolution_json(r.evolution)}};
  o.exit_code = exit_code_for(r.status);
  double pmin = 1.0;
  for (double p : r.p_values) pmin = std::min(pmin, p);
  ctx.say(fmt::format("{} at {} probe times: {} (smallest p = {:.3g})", r.test, r.times.size(), to_string(r.status), pmin));
  return o;
}

inline Outcome cmd_fieldmodes(const Config& c, Context& ctx) {
  const auto b = build::basis(c);
  const auto mode = c.count("field.mode");
  if (mode >= b.modes) throw ValidationError("field.mode out of range");
  if (!(c.real("field.squeeze") > 0.0)) throw ValidationError("field.squeeze must be positive");
  auto member = GaussianMember::ground(b);
  member.modes[mode] = GaussianMember::mode_state(b.frequency(mode), c.real("field.mean"), c.real("field.momentum"),
                                                  c.real("field.squeeze"));
  const auto w0 = WaveFunctional::single(b, member);
  const auto h = LabelCoupling::none(1);
  const auto times = c.real_list("fieldmodes.times");
  const auto r = check_mode_equivariance(w0, h, times, c.count("fieldmodes.count"), ctx.seed, c.real("fieldmodes.tolerance"),
                                         c.real("fieldmodes.significance"), c.real("fieldmodes.max_flagged_fraction"),
                                         ctx.threads);

  TsvTable tests({{"t", "time"}, {"mode", ""}, {"statistic", ""}, {"p_value", ""}});
  for (std::size_t k = 0; k < r.times.size(); ++k)
    for (std::size_t m = 0; m < b.modes; ++m)
      tests.row({r.times[k], static_cast<std::int64_t>(m), r.statistics[k][m], r.p_values[k][m]});
  ctx.out->write("mode_tests.tsv", tests.text());

  // Full traces for the first few configurations of the same ensemble.
  const double t1 = r.times.back();
  const auto traced = std::min(c.count("fieldmodes.traced"), r.ensemble);
  const auto points = std::max<std::size_t>(1, c.count("fieldmodes.trace_points"));
  TsvTable modes_tab({{"trajectory", ""}, {"t", "time"}, {"mode", ""}, {"q", "amplitude"}});
  TsvTable field_tab({{"trajectory", ""}, {"t", "time"}, {"site", ""}, {"field", "amplitude"}});
  if (traced > 0) {
    const auto starts = sample_functional(w0, traced, ctx.seed);
    std::vector<FieldTrace> traces(traced);
    if (t1 > 0.0) {
      const FunctionalPath path(w0, h, 0.0, t1);
      std::vector<double> outs;
      for (std::size_t k = 1; k <= points; ++k) outs.push_back(t1 * static_cast<double>(k) / static_cast<double>(points));
      parallel_for(traced, ctx.threads, [&](std::size_t i) {
        traces[i] = integrate_field(path, starts[i], 0.0, t1, c.real("fieldmodes.tolerance"), outs);
      });
    } else {
      for (std::size_t i = 0; i < traced; ++i) traces[i] = FieldTrace{{0.0}, {starts[i]}, {}};
    }
    for (std::size_t i = 0; i < traced; ++i) {
      for (std::size_t k = 0; k < traces[i].times.size(); ++k) {
        const auto& q = traces[i].configurations[k];
        for (std::size_t m = 0; m < q.size(); ++m)
          modes_tab.row({static_cast<std::int64_t>(i), traces[i].times[k], static_cast<std::int64_t>(m), q[m]});
        const auto phi = b.field(q);
        for (std::size_t s = 0; s < phi.size(); ++s)
          field_tab.row({static_cast<std::int64_t>(i), traces[i].times[k], static_cast<std::int64_t>(s), phi[s]});
      }
    }
  }
  ctx.out->write("mode_traces.tsv", modes_tab.text());
  ctx.out->write("field_traces.tsv", field_tab.text());

  Json freq = Json::array();
  for (std::size_t m = 0; m < b.modes; ++m) freq.push_back(b.frequency(m));
  Outcome o;
  o.report = {{"command", "fieldmodes"},
              {"status", to_string(r.status)},
              {"test", "ks"},
              {"frequencies", freq},
              {"times", r.times},
              {"statistics", r.statistics},
              {"p_values", r.p_values},
              {"significance", r.significance},
              {"per_test_threshold", r.per_test_threshold},
              {"ensemble", r.ensemble},
              {"flagged", r.flagged},
              {"seed", r.seed}};
  o.exit_code = exit_code_for(r.status);
  ctx.say(fmt::format("mode-space equivariance over {} modes x {} times: {}", b.modes, r.times.size(), to_string(r.status)));
  return o;
}

inline Json bound_json(const BoundReport& r) {
  Json in = Json::array();
  for (const auto& i : r.inputs) in.push_back({{"name", i.name}, {"value", i.value}, {"unit", i.unit}});
  Json j{{"id", to_string(r.id)}, {"inputs", in}, {"threshold", r.threshold}, {"unit", r.threshold_unit}, {"margin", r.margin}};
  j["candidate"] = r.candidate ? Json(*r.candidate) : Json(nullptr);
  j["satisfied"] = r.satisfied ? Json(*r.satisfied) : Json(nullptr);
  if (r.excess) j["excess"] = *r.excess;
  return j;
}

inline Outcome cmd_bounds(const Config& c, Context& ctx) {
  const double margin = c.real("bounds.margin");
  std::vector<BoundReport> reports;
  reports.push_back(euler_angle_report({c.real("bounds.lattice_spacing")}, {c.real("bounds.density")}, margin,
                                       c.optional_real("bounds.region")));
  for (auto& r : dirac_sea_reports({c.real("bounds.cutoff")}, {c.real("bounds.density")}, margin,
                                   c.optional_real("bounds.radius")))
    reports.push_back(std::move(r));
  Json arr = Json::array();
  for (const auto& r : reports) {
    arr.push_back(bound_json(r));
    if (r.excess) ctx.say(fmt::format("{:<18} 1 + {:.6g}", to_string(r.id), *r.excess));
    else ctx.say(fmt::format("{:<18} {:.6g} {}", to_string(r.id), r.threshold, r.threshold_unit));
  }
  Outcome o;
  o.report = {{"command", "bounds"}, {"status", "pass"}, {"bounds", arr}};
  return o;
}

inline SternGerlachConfig stern_gerlach_config(const Config& c, const Context& ctx) {
  const auto dim = c.integer("sterngerlach.dimension");
  if (dim != 1 && dim != 2) throw ValidationError("sterngerlach.dimension must be 1 or 2");
  SternGerlachConfig s = dim == 1 ? SternGerlachConfig{} : SternGerlachConfig::plane_default();

  const auto spin = c.text("sterngerlach.spin");
  const char* amp_keys[] = {"sterngerlach.alpha_re", "sterngerlach.alpha_im", "sterngerlach.beta_re", "sterngerlach.beta_im"};
  if (spin == "custom") {
    for (const char* k : amp_keys)
      if (!c.has(k)) throw ValidationError(fmt::format("spin = custom needs {}", k));
    s.alpha = {c.real(amp_keys[0]), c.real(amp_keys[1])};
    s.beta = {c.real(amp_keys[2]), c.real(amp_keys[3])};
  } else {
    for (const char* k : amp_keys)
      if (c.has(k)) throw ValidationError(fmt::format("{} only applies with spin = custom", k));
    const auto a = spin_state(spin);
    s.alpha = a[0];
    s.beta = a[1];
  }

  if (c.has("grid.dim") && c.integer("grid.dim") != dim) throw ValidationError("grid.dim disagrees with sterngerlach.dimension");
  if (c.has("grid.extent")) s.grid.extent[0] = c.real("grid.extent");
  if (c.has("grid.points")) s.grid.points[0] = c.count("grid.points");
  if (dim == 2) {
    if (c.has("grid.extent_z")) s.grid.extent[1] = c.real("grid.extent_z");
    if (c.has("grid.points_z")) s.grid.points[1] = c.count("grid.points_z");
  } else if (c.has("grid.extent_z") || c.has("grid.points_z")) {
    throw ValidationError("grid.extent_z and grid.points_z need sterngerlach.dimension = 2");
  }
  for (int a = 0; a < s.grid.dim; ++a) s.grid.lower[a] = -0.5 * s.grid.extent[a];
  s.grid.validate();

  // On the line the only axis is z; the x-named keys address it.
  if (c.has("state.center")) s.packet.center[0] = c.real("state.center");
  if (c.has("state.width")) s.packet.width[0] = c.real("state.width");
  if (c.has("state.momentum")) s.packet.momentum[0] = c.real("state.momentum");
  if (dim == 2) {
    if (c.has("state.center_z")) s.packet.center[1] = c.real("state.center_z");
    if (c.has("state.width_z")) s.packet.width[1] = c.real("state.width_z");
    if (c.has("state.momentum_z")) s.packet.momentum[1] = c.real("state.momentum_z");
  }

  if (c.has("coupling.mu")) s.coupling.mu = c.real("coupling.mu");
  if (c.has("coupling.b0")) s.coupling.b0 = c.real("coupling.b0");
  if (c.has("coupling.gradient")) s.coupling.gradient = c.real("coupling.gradient");
  if (c.has("coupling.t_on")) s.coupling.t_on = c.real("coupling.t_on");
  if (c.has("coupling.t_off")) s.coupling.t_off = c.real("coupling.t_off");
  if (c.has("coupling.slab_start") != c.has("coupling.slab_end"))
    throw ValidationError("coupling.slab_start and coupling.slab_end go together");
  if (c.has("coupling.slab_start")) s.coupling.slab = std::pair{c.real("coupling.slab_start"), c.real("coupling.slab_end")};

  s.ensemble.count = c.count("sterngerlach.count");
  s.ensemble.seed = ctx.seed;
  s.separation_widths = c.real("sterngerlach.separation_widths");
  s.stability_range = {c.real("sterngerlach.stability_low"), c.real("sterngerlach.stability_high")};
  s.check_stability = c.boolean("sterngerlach.check_stability");
  if (c.has("sterngerlach.max_time")) s.max_time = c.real("sterngerlach.max_time");
  s.dt = c.real("sterngerlach.dt");
  if (c.has("sterngerlach.store_interval")) s.store_interval = c.real("sterngerlach.store_interval");
  s.tolerance = c.real("sterngerlach.tolerance");
  s.trace_count = c.count("sterngerlach.trace_count");
  s.trace_points = c.count("sterngerlach.trace_points");
  s.max_flagged_fraction = c.real("sterngerlach.max_flagged_fraction");
  s.threads = ctx.threads;
  return s;
}

inline Outcome cmd_sterngerlach(const Config& c, Context& ctx) {
  const auto cfg = stern_gerlach_config(c, ctx);
  const auto r = run_stern_gerlach(cfg);
  const int dim = r.dimension;

  // In 1D the single axis is the field axis z.
  std::vector<TsvTable::Column> cols{{"trajectory", ""}, {"label", ""}};
  if (dim == 1) {
    cols.insert(cols.end(), {{"z0", "length"}, {"z", "length"}});
  } else {
    cols.insert(cols.end(), {{"x0", "length"}, {"z0", "length"}, {"x", "length"}, {"z", "length"}});
  }
  TsvTable outcomes(cols);
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    std::vector<TsvTable::Cell> row{static_cast<std::int64_t>(i), to_string(r.labels[i])};
    detail::push_position(row, dim, r.initial[i]);
    detail::push_position(row, dim, r.final_positions[i]);
    outcomes.row(row);
  }
  ctx.out->write("outcomes.tsv", outcomes.text());

  std::vector<TsvTable::Column> tcols{{"trajectory", ""}, {"t", "time"}};
  if (dim == 1) tcols.push_back({"z", "length"});
  else tcols.insert(tcols.end(), {{"x", "length"}, {"z", "length"}});
  tcols.insert(tcols.end(), {{"s_x", "hbar"}, {"s_y", "hbar"}, {"s_z", "hbar"}});
  TsvTable traces(tcols);
  for (const auto& tr : r.traces)
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
      std::vector<TsvTable::Cell> row{static_cast<std::int64_t>(tr.trajectory), tr.times[k]};
      detail::push_position(row, dim, tr.positions[k]);
      for (double v : tr.spin[k]) row.emplace_back(v);
      traces.row(row);
    }
  ctx.out->write("spin_traces.tsv", traces.text());

  Outcome o;
  o.report = {{"command", "sterngerlach"},
              {"status", to_string(r.status)},
              {"note", r.note},
              {"dimension", dim},
              {"alpha", {cfg.alpha.real(), cfg.alpha.imag()}},
              {"beta", {cfg.beta.real(), cfg.beta.imag()}},
              {"weight_up", r.weight_up},
              {"weight_down", r.weight_down},
              {"ensemble", r.labels.size()},
              {"seed", r.seed},
              {"up", r.up},
              {"down", r.down},
              {"indeterminate", r.indeterminate},
              {"up_fraction", r.up_fraction},
              {"down_fraction", r.down_fraction},
              {"indeterminate_fraction", r.indeterminate_fraction},
              {"binomial_se", r.binomial_se},
              {"born_deviation", r.born_deviation},
              {"classification_time", r.classification_time},
              {"separation", r.separation},
              {"midpoint", r.midpoint}};
  if (dim == 1) {
    o.report["born_threshold"] = r.born_threshold;
    o.report["threshold_agreement"] = r.threshold_agreement;
    o.report["ordered"] = r.ordered;
  }
  o.report["stability"] = {{"evaluated", r.stability_evaluated},
                           {"stable", r.stable},
                           {"widths", r.stability_widths},
                           {"times", r.stability_times}};
  o.report["max_norm_deviation"] = r.max_norm_deviation;
  o.report["escaped"] = r.escaped;
  o.report["slices"] = r.slices;
  o.exit_code = exit_code_for(r.status);
  ctx.say(fmt::format("up {:.4f}  down {:.4f}  indeterminate {:.4f}  (|alpha|^2 = {:.4f}): {}{}", r.up_fraction,
                      r.down_fraction, r.indeterminate_fraction, r.weight_up, to_string(r.status),
                      r.note.empty() ? "" : " - " + r.note));
  return o;
}

inline BranchingConfig branching_config(const Config& c, const Context& ctx) {
  BranchingConfig b;
  b.basis = build::basis(c);
  b.pointer_mode = c.count("branching.pointer_mode");
  b.labels = {cplx(c.real("branching.label0_re"), c.real("branching.label0_im")),
              cplx(c.real("branching.label1_re"), c.real("branching.label1_im"))};
  b.coupling_enabled = c.boolean("branching.coupling_enabled");
  b.strength = c.real("branching.strength");
  b.target_widths = c.real("branching.target_widths");
  b.label_energies = {c.real("branching.label_energy_0"), c.real("branching.label_energy_1")};
  b.collapse_widths = c.real("branching.collapse_widths");
  b.contamination_limit = c.real("branching.contamination_limit");
  b.profile_width = c.real("branching.profile_width");
  b.profile_amplitude = c.real("branching.profile_amplitude");
  b.runs = c.count("branching.runs");
  b.seed = ctx.seed;
  b.tolerance = c.real("branching.tolerance");
  b.trace_points = c.count("branching.trace_points");
  b.threads = ctx.threads;
  return b;
}

inline Outcome cmd_branching(const Config& c, Context& ctx) {
  const auto cfg = branching_config(c, ctx);
  const auto r = run_branching_demo(cfg);

  TsvTable energy({{"t", "time"}, {"site", ""}, {"energy", "energy/site"}});
  for (std::size_t k = 0; k < r.times.size(); ++k)
    for (std::size_t s = 0; s < r.energy[k].size(); ++s) energy.row({r.times[k], static_cast<std::int64_t>(s), r.energy[k][s]});
  ctx.out->write("energy_density.tsv", energy.text());

  TsvTable conf({{"t", "time"}, {"mode", ""}, {"q", "amplitude"}});
  for (std::size_t k = 0; k < r.times.size(); ++k)
    for (std::size_t m = 0; m < r.configuration[k].size(); ++m)
      conf.row({r.times[k], static_cast<std::int64_t>(m), r.configuration[k][m]});
  ctx.out->write("configuration.tsv", conf.text());

  TsvTable profiles({{"site", ""}, {"branch_0", "energy/site"}, {"branch_1", "energy/site"}});
  for (std::size_t s = 0; s < r.branch_profile_0.size(); ++s)
    profiles.row({static_cast<std::int64_t>(s), r.branch_profile_0[s], r.branch_profile_1[s]});
  ctx.out->write("branch_profiles.tsv", profiles.text());

  TsvTable runs({{"run", ""}, {"branch", ""}, {"contamination", ""}});
  for (std::size_t i = 0; i < r.branch.size(); ++i)
    runs.row({static_cast<std::int64_t>(i), static_cast<std::int64_t>(r.branch[i]), r.contamination[i]});
  ctx.out->write("runs.tsv", runs.text());

  Outcome o;
  o.report = {{"command", "branching"},
              {"status", to_string(r.status)},
              {"note", r.note},
              {"end_time", r.end_time},
              {"strength", r.strength},
              {"weights", r.weights},
              {"separation", r.separation},
              {"max_energy_variation", r.max_energy_variation},
              {"runs", r.branch.size()},
              {"seed", cfg.seed},
              {"counts", r.counts},
              {"flagged", r.flagged},
              {"max_contamination", r.max_contamination},
              {"frequency_0", r.frequency_0},
              {"standard_error", r.standard_error},
              {"frequency_deviation", r.frequency_deviation}};
  o.exit_code = exit_code_for(r.status);
  ctx.say(fmt::format("branch 0 frequency {:.4f} (weight {:.4f}), max contamination {:.2e}: {}{}", r.frequency_0,
                      r.weights[0], r.max_contamination, to_string(r.status), r.note.empty() ? "" : " - " + r.note));
  return o;
}

struct RunOptions {
  std::string command;
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<unsigned> threads;
  bool quiet = false;
};

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot read config file '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Parses the configuration, runs one command, writes its outputs and the
/// manifest, and returns the process exit code.
inline int run_command(const RunOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  const auto started = std::chrono::system_clock::now();
  std::optional<Config> cfg;
  try {
    const auto text = opt.config_path ? read_text(*opt.config_path) : std::string();
    cfg.emplace(Config::parse(schema_for(opt.command), text, opt.overrides));
    if (opt.seed) cfg->set("run.seed", std::to_string(*opt.seed));
    if (opt.threads) cfg->set("run.threads", std::to_string(*opt.threads));
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }

  Context ctx;
  const auto seed = cfg->integer("run.seed");
  const auto threads = cfg->integer("run.threads");
  if (seed < 0 || threads < 0) {
    err << "error: run.seed and run.threads must be >= 0\n";
    return kValidation;
  }
  ctx.seed = static_cast<std::uint64_t>(seed);
  ctx.threads = threads == 0 ? default_threads() : static_cast<unsigned>(threads);

  std::optional<OutputDirectory> out;
  try {
    out.emplace(opt.out_dir);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
  ctx.out = &*out;
  // The worker count never changes results, so it stays out of the record.
  const std::vector<std::string> volatile_keys{"run.threads"};
  out->write("config.ini", cfg->canonical(volatile_keys));

  static const std::map<std::string, std::function<Outcome(const Config&, Context&)>> commands{
      {"evolve", cmd_evolve},         {"trajectories", cmd_trajectories}, {"equivariance", cmd_equivariance},
      {"fieldmodes", cmd_fieldmodes}, {"bounds", cmd_bounds},             {"sterngerlach", cmd_sterngerlach},
      {"branching", cmd_branching}};

  int code = kSuccess;
  Json report;
  try {
    auto o = commands.at(opt.command)(*cfg, ctx);
    code = o.exit_code;
    report = std::move(o.report);
  } catch (const ValidationError& e) {
    code = kValidation;
    report = {{"command", opt.command}, {"status", "error"}, {"error", e.what()}};
    err << "error: " << e.what() << "\n";
  } catch (const NumericalQualityError& e) {
    code = kNumerical;
    report = {{"command", opt.command}, {"status", "inconclusive"}, {"error", e.what()}};
    err << "numerical quality: " << e.what() << "\n";
  }
  out->write(opt.command + ".json", to_json_text(report));

  RunManifest m;
  m.command = opt.command;
  m.config_hash = sha256_hex(cfg->canonical(volatile_keys));
  m.seed = ctx.seed;
  m.started = utc_timestamp(started);
  m.finished = utc_timestamp(std::chrono::system_clock::now());
  m.exit_code = code;
  m.files = out->files();
  out->write("manifest.json", to_json_text(m.to_json()), false);

  if (!opt.quiet) {
    for (const auto& line : ctx.summary) log << line << "\n";
    log << fmt::format("wrote {} files to {} (exit {})\n", out->files().size() + 1, out->root().string(), code);
  }
  return code;
}

}  // namespace pilotwave::cli
