#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "pilotwave/errors.hpp"
#include "pilotwave/ode.hpp"
#include "pilotwave/parallel.hpp"
#include "pilotwave/statistics.hpp"

namespace pilotwave {

using cplx = std::complex<double>;

/// Truncated set of real field modes on a periodic lattice of `sites`
/// points. Mode m has wavenumber index k = m/2 + 1 and uses a cosine (even
/// m) or sine (odd m) profile, normalized so the mode-to-field map is
/// orthonormal. Frequencies follow the lattice dispersion
/// omega_k = scale * 2 |sin(pi k / sites)|.
struct ModeBasis {
  std::size_t sites = 64;
  std::size_t modes = 8;
  double scale = 1.0;

  void validate() const {
    if (modes < 1) throw ValidationError("mode basis needs at least one mode");
    if (!(scale > 0.0)) throw ValidationError("mode frequency scale must be positive");
    if (2 * wavenumber(modes - 1) >= sites)
      throw ValidationError(fmt::format("{} modes need more than {} lattice sites", modes, sites));
  }

  static std::size_t wavenumber(std::size_t m) { return m / 2 + 1; }

  double frequency(std::size_t m) const {
    return scale * 2.0 * std::abs(std::sin(std::numbers::pi * static_cast<double>(wavenumber(m)) / static_cast<double>(sites)));
  }

  double profile(std::size_t m, std::size_t site) const {
    const double arg = 2.0 * std::numbers::pi * static_cast<double>(wavenumber(m) * site) / static_cast<double>(sites);
    const double norm = std::sqrt(2.0 / static_cast<double>(sites));
    return norm * (m % 2 == 0 ? std::cos(arg) : std::sin(arg));
  }

  /// Sampled field from mode amplitudes.
  std::vector<double> field(std::span<const double> q) const {
    std::vector<double> phi(sites, 0.0);
    for (std::size_t m = 0; m < modes; ++m)
      for (std::size_t n = 0; n < sites; ++n) phi[n] += q[m] * profile(m, n);
    return phi;
  }

  /// Projection of a sampled field onto the modes.
  std::vector<double> amplitudes(std::span<const double> phi) const {
    std::vector<double> q(modes, 0.0);
    for (std::size_t m = 0; m < modes; ++m)
      for (std::size_t n = 0; n < sites; ++n) q[m] += phi[n] * profile(m, n);
    return q;
  }
};

/// One-mode Gaussian exp(i [alpha (q - mean)^2 + momentum (q - mean) + gamma])
/// with Im alpha > 0.
struct ModeGaussian {
  double mean = 0.0;
  double momentum = 0.0;
  cplx alpha{0.0, 0.5};
  cplx gamma{0.0, 0.0};

  /// Sets Im gamma so the mode factor has unit norm.
  void normalize() { gamma.imag(0.25 * std::log(std::numbers::pi / (2.0 * alpha.imag()))); }

  /// Standard deviation of |g|^2.
  double width() const { return std::sqrt(1.0 / (4.0 * alpha.imag())); }

  cplx log_value(double q) const {
    const double d = q - mean;
    return cplx(0.0, 1.0) * (alpha * d * d + momentum * d + gamma);
  }

  /// d(log g)/dq = i (2 alpha d + momentum).
  cplx log_derivative(double q) const {
    const double d = q - mean;
    return cplx(0.0, 1.0) * (2.0 * alpha * d + momentum);
  }
};

/// Product of per-mode Gaussians: one member of the Gaussian family.
struct GaussianMember {
  std::vector<ModeGaussian> modes;

  cplx log_value(std::span<const double> q) const {
    cplx s{0.0, 0.0};
    for (std::size_t k = 0; k < modes.size(); ++k) s += modes[k].log_value(q[k]);
    return s;
  }

  /// Mode state with mean amplitude `mean`, mean momentum `momentum` and
  /// width parameter alpha = i omega squeeze / 2 (squeeze = 1 is coherent).
  static ModeGaussian mode_state(double omega, double mean = 0.0, double momentum = 0.0, double squeeze = 1.0) {
    if (!(omega > 0.0) || !(squeeze > 0.0)) throw ValidationError("mode state needs omega > 0 and squeeze > 0");
    ModeGaussian g;
    g.mean = mean;
    g.momentum = momentum;
    g.alpha = cplx(0.0, 0.5 * omega * squeeze);
    g.normalize();
    return g;
  }

  static GaussianMember ground(const ModeBasis& basis) {
    GaussianMember m;
    for (std::size_t k = 0; k < basis.modes; ++k) m.modes.push_back(mode_state(basis.frequency(k)));
    return m;
  }
};

/// Label-sector Hamiltonian K + q_mode G, where G acts only while
/// t_on <= t < t_off. K and G must commute so that the sector stays exactly
/// solvable: in their joint eigenbasis every channel sees a constant energy
/// kappa_c and a linear force -lambda_c on the coupled mode.
class LabelCoupling {
public:
  LabelCoupling() = default;

  LabelCoupling(Eigen::MatrixXcd constant, Eigen::MatrixXcd modulation, std::size_t mode, double t_on, double t_off)
      : k_(std::move(constant)), g_(std::move(modulation)), mode_(mode), t_on_(t_on), t_off_(t_off) {
    const auto f = k_.rows();
    if (k_.cols() != f || g_.rows() != f || g_.cols() != f) throw ValidationError("coupling matrices must be F x F");
    if (f < 1) throw ValidationError("coupling needs at least one label");
    if (!(t_on <= t_off)) throw ValidationError("coupling window requires t_on <= t_off");
    auto hermitian = [](const Eigen::MatrixXcd& m) {
      return (m - m.adjoint()).norm() <= 1e-12 * std::max(1.0, m.norm());
    };
    if (!hermitian(k_) || !hermitian(g_)) throw ValidationError("coupling matrices must be self-adjoint");
    const Eigen::MatrixXcd comm = k_ * g_ - g_ * k_;
    if (comm.norm() > 1e-10 * std::max(1.0, k_.norm() * g_.norm()))
      throw ValidationError("constant and mode-modulated couplings must commute");
    // A generic combination separates every joint eigenspace.
    const Eigen::MatrixXcd mix = k_ + 0.6180339887498949 * g_ + 1e-3 * 0.3819660112501051 * k_ * k_;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(mix);
    u_ = es.eigenvectors();
    const Eigen::MatrixXcd kd = u_.adjoint() * k_ * u_;
    const Eigen::MatrixXcd gd = u_.adjoint() * g_ * u_;
    kappa_.resize(f);
    lambda_.resize(f);
    for (Eigen::Index c = 0; c < f; ++c) {
      kappa_[c] = kd(c, c).real();
      lambda_[c] = gd(c, c).real();
    }
    const double off = (kd - Eigen::MatrixXcd(kd.diagonal().asDiagonal())).norm() +
                       (gd - Eigen::MatrixXcd(gd.diagonal().asDiagonal())).norm();
    if (off > 1e-9 * std::max(1.0, k_.norm() + g_.norm()))
      throw ValidationError("could not diagonalize the label coupling");
  }

  /// Uncoupled sector with F labels.
  static LabelCoupling none(std::size_t labels) {
    const auto f = static_cast<Eigen::Index>(labels);
    return {Eigen::MatrixXcd::Zero(f, f), Eigen::MatrixXcd::Zero(f, f), 0, 0.0, 0.0};
  }

  std::size_t labels() const { return static_cast<std::size_t>(k_.rows()); }
  std::size_t mode() const { return mode_; }
  double t_on() const { return t_on_; }
  double t_off() const { return t_off_; }
  bool modulated(double t) const { return t >= t_on_ && t < t_off_ && g_.norm() > 0.0; }
  const Eigen::MatrixXcd& channels() const { return u_; }
  double channel_energy(std::size_t c) const { return kappa_[c]; }
  double channel_force(std::size_t c) const { return lambda_[c]; }
  const Eigen::MatrixXcd& constant() const { return k_; }
  const Eigen::MatrixXcd& modulation() const { return g_; }

private:
  Eigen::MatrixXcd k_ = Eigen::MatrixXcd::Zero(1, 1);
  Eigen::MatrixXcd g_ = Eigen::MatrixXcd::Zero(1, 1);
  Eigen::MatrixXcd u_ = Eigen::MatrixXcd::Identity(1, 1);
  std::vector<double> kappa_{0.0};
  std::vector<double> lambda_{0.0};
  std::size_t mode_ = 0;
  double t_on_ = 0.0;
  double t_off_ = 0.0;
};

/// A wave functional over mode amplitudes with F discrete labels:
/// Psi_f(q) = sum_t labels_t[f] * member_t(q). F = 1 is the unlabeled case.
struct WaveFunctional {
  struct Term {
    GaussianMember member;
    Eigen::VectorXcd labels;
  };

  ModeBasis basis;
  std::size_t label_count = 1;
  std::vector<Term> terms;

  static WaveFunctional single(const ModeBasis& basis, GaussianMember member, Eigen::VectorXcd labels) {
    basis.validate();
    WaveFunctional w;
    w.basis = basis;
    w.label_count = static_cast<std::size_t>(labels.size());
    w.terms.push_back({std::move(member), std::move(labels)});
    w.validate();
    return w;
  }

  static WaveFunctional single(const ModeBasis& basis, GaussianMember member) {
    return single(basis, std::move(member), Eigen::VectorXcd::Ones(1));
  }

  void validate() const {
    if (terms.empty()) throw ValidationError("wave functional has no terms");
    for (const auto& t : terms) {
      if (t.member.modes.size() != basis.modes) throw ValidationError("member mode count differs from basis");
      if (static_cast<std::size_t>(t.labels.size()) != label_count) throw ValidationError("label vector size mismatch");
      for (const auto& g : t.member.modes)
        if (!(g.alpha.imag() > 0.0)) throw ValidationError("Gaussian member is not normalizable (Im alpha <= 0)");
    }
  }

  /// sum_f integral |Psi_f|^2, closed form.
  double norm_squared() const {
    cplx total{0.0, 0.0};
    for (const auto& a : terms)
      for (const auto& b : terms) total += a.labels.dot(b.labels) * overlap(a.member, b.member);
    return total.real();
  }

  /// <a|b> for two Gaussian members.
  static cplx overlap(const GaussianMember& a, const GaussianMember& b) {
    cplx log_sum{0.0, 0.0};
    const cplx i{0.0, 1.0};
    for (std::size_t k = 0; k < a.modes.size(); ++k) {
      const auto& ga = a.modes[k];
      const auto& gb = b.modes[k];
      const cplx aa = std::conj(ga.alpha);
      const cplx A = i * aa - i * gb.alpha;
      const cplx B = 2.0 * i * aa * ga.mean - i * ga.momentum - 2.0 * i * gb.alpha * gb.mean + i * gb.momentum;
      const cplx C = -i * (aa * ga.mean * ga.mean - ga.momentum * ga.mean + std::conj(ga.gamma)) +
                     i * (gb.alpha * gb.mean * gb.mean - gb.momentum * gb.mean + gb.gamma);
      log_sum += 0.5 * std::log(std::numbers::pi / A) + B * B / (4.0 * A) + C;
    }
    return std::exp(log_sum);
  }
};

/// Exact evolution of one mode factor for time tau under
/// 1/2 p^2 + 1/2 omega^2 q^2 + force q. Sub-steps keep the branch of
/// log u continuous.
inline void evolve_mode(ModeGaussian& g, double omega, double force, double tau) {
  if (tau == 0.0) return;
  const int sub = std::max(1, static_cast<int>(std::ceil(std::abs(omega * tau) / (std::numbers::pi / 4.0))));
  const double h = tau / sub;
  const double c = std::cos(omega * h);
  const double s = std::sin(omega * h);
  const double c2 = std::cos(2.0 * omega * h);
  const double s2 = std::sin(2.0 * omega * h);
  const double shift = force / (omega * omega);
  for (int n = 0; n < sub; ++n) {
    const double y0 = g.mean + shift;
    const double p0 = g.momentum;
    const double action = (p0 * p0 - omega * omega * y0 * y0) * s2 / (4.0 * omega) - p0 * y0 * (1.0 - c2) / 2.0 +
                          force * force * h / (2.0 * omega * omega);
    // alpha(h) = udot / (2u), u = cos + (2 alpha0 / omega) sin.
    const cplx a0 = 2.0 * g.alpha / omega;
    const cplx u(c + a0.real() * s, a0.imag() * s);
    const cplx num(-s + a0.real() * c, a0.imag() * c);
    const double den = u.real() * u.real() + u.imag() * u.imag();
    const cplx ratio((num.real() * u.real() + num.imag() * u.imag()) / den,
                     (num.imag() * u.real() - num.real() * u.imag()) / den);
    g.alpha = 0.5 * omega * ratio;
    g.gamma += cplx(0.0, 0.5) * std::log(u) + action;
    g.mean = y0 * c + p0 / omega * s - shift;
    g.momentum = -y0 * omega * s + p0 * c;
  }
}

/// Exact evolution of a labeled Gaussian-family functional from t0 to
/// t0 + tau, splitting at the coupling window edges. Terms are split into
/// coupling channels while the modulation acts.
inline WaveFunctional evolve_exact(const WaveFunctional& w, const LabelCoupling& h, double t0, double tau) {
  if (h.labels() != w.label_count) throw ValidationError("coupling label count differs from functional");
  if (h.mode() >= w.basis.modes) throw ValidationError("coupled mode index out of range");
  std::vector<double> cuts{t0, t0 + tau};
  for (double e : {h.t_on(), h.t_off()})
    if (e > t0 && e < t0 + tau) cuts.push_back(e);
  std::sort(cuts.begin(), cuts.end());

  WaveFunctional cur = w;
  const Eigen::MatrixXcd& u = h.channels();
  const auto f = static_cast<Eigen::Index>(w.label_count);
  for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
    const double a = cuts[seg];
    const double dt = cuts[seg + 1] - a;
    if (dt <= 0.0) continue;
    const bool on = h.modulated(0.5 * (a + cuts[seg + 1]));
    std::vector<WaveFunctional::Term> next;
    for (const auto& term : cur.terms) {
      const Eigen::VectorXcd d = u.adjoint() * term.labels;
      bool split = false;
      if (on) {
        std::size_t used = 0;
        for (Eigen::Index c = 0; c < f; ++c) used += std::abs(d[c]) > 0.0 ? 1 : 0;
        split = used > 1;
      }
      if (!on || !split) {
        // One member for all channels: same mode dynamics; per-channel
        // constant energies (and at most one force) act on the labels.
        WaveFunctional::Term t = term;
        double force = 0.0;
        if (on)
          for (Eigen::Index c = 0; c < f; ++c)
            if (std::abs(d[c]) > 0.0) force = h.channel_force(static_cast<std::size_t>(c));
        for (std::size_t k = 0; k < w.basis.modes; ++k)
          evolve_mode(t.member.modes[k], w.basis.frequency(k), k == h.mode() ? force : 0.0, dt);
        Eigen::VectorXcd dn = d;
        for (Eigen::Index c = 0; c < f; ++c) dn[c] *= std::polar(1.0, -h.channel_energy(static_cast<std::size_t>(c)) * dt);
        t.labels = u * dn;
        next.push_back(std::move(t));
        continue;
      }
      for (Eigen::Index c = 0; c < f; ++c) {
        if (!(std::abs(d[c]) > 0.0)) continue;
        WaveFunctional::Term t;
        t.member = term.member;
        for (std::size_t k = 0; k < w.basis.modes; ++k)
          evolve_mode(t.member.modes[k], w.basis.frequency(k), k == h.mode() ? h.channel_force(static_cast<std::size_t>(c)) : 0.0, dt);
        t.labels = u.col(c) * (d[c] * std::polar(1.0, -h.channel_energy(static_cast<std::size_t>(c)) * dt));
        next.push_back(std::move(t));
      }
    }
    cur.terms = std::move(next);
  }
  return cur;
}

/// evolve_functional: `steps` exact steps of length dt from time t0; the
/// norm is re-checked after each step.
inline WaveFunctional evolve_functional(const WaveFunctional& w, double dt, std::size_t steps,
                                        const LabelCoupling& h, double t0 = 0.0, double norm_tolerance = 1e-10) {
  w.validate();
  const double n0 = w.norm_squared();
  if (std::abs(n0 - 1.0) > 1e-10)
    throw ValidationError(fmt::format("wave functional must be normalized (norm^2 = {:.12g})", n0));
  WaveFunctional cur = w;
  for (std::size_t n = 0; n < steps; ++n) {
    cur = evolve_exact(cur, h, t0 + static_cast<double>(n) * dt, dt);
    const double nn = cur.norm_squared();
    if (std::abs(nn - n0) > norm_tolerance)
      throw NumericalQualityError(fmt::format("functional norm drifted to {:.15g}", nn));
  }
  return cur;
}

inline WaveFunctional evolve_functional(const WaveFunctional& w, double dt, std::size_t steps) {
  return evolve_functional(w, dt, steps, LabelCoupling::none(w.label_count));
}

/// Label amplitudes Psi_f(q) scaled by exp(-shift) to avoid underflow, with
/// shift the largest Re log member(q).
struct ScaledAmplitudes {
  Eigen::VectorXcd psi;
  double log_scale = 0.0;
};

inline ScaledAmplitudes amplitudes(const WaveFunctional& w, std::span<const double> q) {
  std::vector<cplx> logs;
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& t : w.terms) {
    logs.push_back(t.member.log_value(q));
    top = std::max(top, logs.back().real());
  }
  ScaledAmplitudes out;
  out.log_scale = top;
  out.psi = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(w.label_count));
  for (std::size_t i = 0; i < w.terms.size(); ++i) out.psi += w.terms[i].labels * std::exp(logs[i] - top);
  return out;
}

/// Mode-space guidance velocity Im(sum_f Psi_f* dPsi_f/dq_k) / sum_f |Psi_f|^2.
struct FieldVelocity {
  std::vector<double> velocity;
  double relative_density = 0.0;  // sum_f |Psi_f|^2 relative to the largest member envelope
  bool flagged = false;           // density below the regularization floor
};

inline constexpr double kFieldDensityFloor = 1e-24;

inline FieldVelocity field_velocity(const WaveFunctional& w, std::span<const double> q) {
  const std::size_t terms = w.terms.size();
  const std::size_t modes = w.basis.modes;
  std::vector<cplx> logs(terms);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < terms; ++t) {
    logs[t] = w.terms[t].member.log_value(q);
    top = std::max(top, logs[t].real());
  }
  std::vector<cplx> value(terms);
  for (std::size_t t = 0; t < terms; ++t) value[t] = std::exp(logs[t] - top);

  FieldVelocity out;
  out.velocity.assign(modes, 0.0);
  double rho = 0.0;
  for (std::size_t a = 0; a < terms; ++a) {
    for (std::size_t b = 0; b < terms; ++b) {
      // A_ab = sum_f conj(c_af g_a) c_bf g_b; the current picks up
      // Im(A_ab * slope_b) with slope_b = i (2 alpha (q - mean) + p).
      double weight_real;
      double weight_imag;
      if (a == b) {
        weight_real = w.terms[a].labels.squaredNorm() * std::norm(value[a]);
        weight_imag = 0.0;
      } else {
        const cplx A = w.terms[a].labels.dot(w.terms[b].labels) * std::conj(value[a]) * value[b];
        weight_real = A.real();
        weight_imag = A.imag();
      }
      if (weight_real == 0.0 && weight_imag == 0.0) continue;
      rho += weight_real;
      for (std::size_t k = 0; k < modes; ++k) {
        const auto& g = w.terms[b].member.modes[k];
        const double d = q[k] - g.mean;
        // Im(A * i s) = Re(A) Re(s) - Im(A) Im(s), s = 2 alpha d + p.
        const double re_s = 2.0 * g.alpha.real() * d + g.momentum;
        const double im_s = 2.0 * g.alpha.imag() * d;
        out.velocity[k] += weight_real * re_s - (weight_imag == 0.0 ? 0.0 : weight_imag * im_s);
      }
    }
  }
  double envelope = 0.0;
  for (std::size_t t = 0; t < terms; ++t) envelope += w.terms[t].labels.squaredNorm() * std::norm(value[t]);
  out.relative_density = envelope > 0.0 ? rho / envelope : 0.0;
  if (!(out.relative_density > kFieldDensityFloor)) {
    out.flagged = true;
    std::fill(out.velocity.begin(), out.velocity.end(), 0.0);
    return out;
  }
  for (double& v : out.velocity) v /= rho;
  return out;
}

/// Affine velocity v_k = slope_k q_k + intercept_k of a single-member functional.
struct AffineVelocity {
  std::vector<double> slope;
  std::vector<double> intercept;
};

/// Phase-gradient route for an unlabeled single member: S = Re(phase), so
/// dS/dq_k = 2 Re alpha_k (q_k - mean_k) + p_k.
inline AffineVelocity phase_gradient_coefficients(const GaussianMember& m) {
  AffineVelocity out;
  for (const auto& g : m.modes) {
    out.slope.push_back(2.0 * g.alpha.real());
    out.intercept.push_back(g.momentum - 2.0 * g.alpha.real() * g.mean);
  }
  return out;
}

/// Label-summed route for Psi_f = c_f g: the current is weighted by
/// |c_f|^2 / sum_f |c_f|^2 per label before summing.
inline AffineVelocity labeled_velocity_coefficients(const WaveFunctional& w) {
  if (w.terms.size() != 1) throw ValidationError("affine coefficients need a single-member functional");
  const auto& term = w.terms.front();
  const double total = term.labels.squaredNorm();
  AffineVelocity out{std::vector<double>(w.basis.modes, 0.0), std::vector<double>(w.basis.modes, 0.0)};
  for (Eigen::Index f = 0; f < term.labels.size(); ++f) {
    const double weight = std::norm(term.labels[f]) / total;
    if (weight == 0.0) continue;
    for (std::size_t k = 0; k < w.basis.modes; ++k) {
      const auto& g = term.member.modes[k];
      out.slope[k] += weight * (2.0 * g.alpha.real());
      out.intercept[k] += weight * (g.momentum - 2.0 * g.alpha.real() * g.mean);
    }
  }
  return out;
}

/// Exact evolution of a functional queried at arbitrary times, with
/// checkpoints so each query costs one short exact step.
class FunctionalPath {
public:
  FunctionalPath(WaveFunctional w0, LabelCoupling h, double t0, double t1)
      : h_(std::move(h)), t0_(t0), t1_(t1) {
    w0.validate();
    double omega_max = 0.0;
    for (std::size_t k = 0; k < w0.basis.modes; ++k) omega_max = std::max(omega_max, w0.basis.frequency(k));
    const double span = std::max(t1 - t0, 0.0);
    const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span * omega_max / (std::numbers::pi / 4.0))));
    interval_ = span > 0.0 ? span / static_cast<double>(count) : 1.0;
    checkpoints_.push_back(std::move(w0));
    for (std::size_t i = 1; i <= count && span > 0.0; ++i)
      checkpoints_.push_back(evolve_exact(checkpoints_.back(), h_, t0_ + static_cast<double>(i - 1) * interval_, interval_));
  }

  double start() const { return t0_; }
  double end() const { return t1_; }
  const LabelCoupling& coupling() const { return h_; }

  WaveFunctional at(double t) const {
    if (t <= t0_) return checkpoints_.front();
    auto i = static_cast<std::size_t>(std::floor((t - t0_) / interval_));
    i = std::min(i, checkpoints_.size() - 1);
    const double base = t0_ + static_cast<double>(i) * interval_;
    if (t == base) return checkpoints_[i];
    return evolve_exact(checkpoints_[i], h_, base, t - base);
  }

private:
  LabelCoupling h_;
  double t0_;
  double t1_;
  double interval_ = 1.0;
  std::vector<WaveFunctional> checkpoints_;
};

/// A field-configuration history in mode space.
struct FieldTrace {
  std::vector<double> times;
  std::vector<std::vector<double>> configurations;
  ode::IntegratorStats stats;
  bool flagged() const { return stats.flagged; }
};

/// Adaptive integration of dq/dt = v(W(t), q) along an exactly evolved functional.
inline FieldTrace integrate_field(const FunctionalPath& path, std::vector<double> q0, double t0, double t1,
                                  double tolerance, std::span<const double> output_times = {}) {
  if (q0.size() != path.at(t0).basis.modes) throw ValidationError("field configuration has the wrong mode count");
  std::vector<double> outs(output_times.begin(), output_times.end());
  if (outs.empty() || outs.back() < t1) outs.push_back(t1);
  bool hit_floor = false;
  auto field = [&](double t, const std::vector<double>& q) {
    const auto v = field_velocity(path.at(t), q);
    if (v.flagged) hit_floor = true;
    return ode::FieldSample<std::vector<double>>{v.velocity, v.relative_density};
  };
  ode::IntegratorOptions opt;
  opt.tolerance = tolerance;
  auto sol = ode::integrate<std::vector<double>>(field, q0, t0, t1, outs, opt);
  FieldTrace tr;
  tr.times = std::move(sol.times);
  tr.configurations = std::move(sol.states);
  tr.stats = sol.stats;
  if (hit_floor) tr.stats.flagged = true;
  return tr;
}

/// Exact i.i.d. draws from sum_f |Psi_f|^2 over mode space. Rejection
/// against the envelope T * sum_t |c_t|^2 |g_t|^2, which bounds the density
/// by Cauchy-Schwarz and is itself a Gaussian mixture. Single-member
/// functionals accept every proposal.
inline std::vector<std::vector<double>> sample_functional(const WaveFunctional& w, std::size_t count, std::uint64_t seed) {
  w.validate();
  if (std::abs(w.norm_squared() - 1.0) > 1e-10) throw ValidationError("sample_functional: functional not normalized");
  Rng rng(seed);
  std::vector<double> weights;
  double total = 0.0;
  for (const auto& t : w.terms) {
    weights.push_back(t.labels.squaredNorm());
    total += weights.back();
  }
  const double terms = static_cast<double>(w.terms.size());
  std::vector<std::vector<double>> out;
  out.reserve(count);
  while (out.size() < count) {
    double u = rng.uniform() * total;
    std::size_t pick = 0;
    while (pick + 1 < weights.size() && u >= weights[pick]) u -= weights[pick++];
    std::vector<double> q(w.basis.modes);
    for (std::size_t k = 0; k < q.size(); ++k) {
      const auto& g = w.terms[pick].member.modes[k];
      q[k] = g.mean + g.width() * rng.normal();
    }
    if (w.terms.size() == 1) {
      out.push_back(std::move(q));
      continue;
    }
    const auto amp = amplitudes(w, q);
    double envelope = 0.0;
    for (const auto& t : w.terms)
      envelope += t.labels.squaredNorm() * std::exp(2.0 * (t.member.log_value(q).real() - amp.log_scale));
    if (rng.uniform() * terms * envelope < amp.psi.squaredNorm()) out.push_back(std::move(q));
  }
  return out;
}

struct ModeEquivarianceReport {
  std::vector<double> times;
  std::vector<std::vector<double>> statistics;  // [time][mode] KS D
  std::vector<std::vector<double>> p_values;
  double significance = 0.01;
  double per_test_threshold = 0.01;  // Bonferroni over times x modes
  std::size_t ensemble = 0;
  std::size_t flagged = 0;
  std::uint64_t seed = 0;
  ReportStatus status = ReportStatus::pass;
};

/// Samples |Psi(0)|^2, transports each configuration along the exact
/// functional and compares every mode marginal at each probe time with its
/// Gaussian law. Needs a single-member functional (product Gaussian).
inline ModeEquivarianceReport check_mode_equivariance(const WaveFunctional& w0, const LabelCoupling& h,
                                                      std::vector<double> times, std::size_t count,
                                                      std::uint64_t seed, double tolerance = 1e-8,
                                                      double significance = 0.01, double max_flagged_fraction = 0.01,
                                                      unsigned threads = default_threads()) {
  if (w0.terms.size() != 1) throw ValidationError("mode-space equivariance needs a single-member functional");
  if (times.empty()) throw ValidationError("equivariance check needs at least one probe time");
  if (count < 100) throw ValidationError("statistical tests need at least 100 samples");
  std::sort(times.begin(), times.end());
  if (times.front() < 0.0) throw ValidationError("probe times must be >= 0");
  const std::size_t modes = w0.basis.modes;
  ModeEquivarianceReport rep;
  rep.times = times;
  rep.significance = significance;
  rep.per_test_threshold = significance / static_cast<double>(times.size() * modes);
  rep.ensemble = count;
  rep.seed = seed;

  const auto starts = sample_functional(w0, count, seed);
  const double t1 = times.back();
  const FunctionalPath path(w0, h, 0.0, t1);
  std::vector<FieldTrace> traces(count);
  if (t1 > 0.0) {
    std::vector<double> outs;
    for (double t : times)
      if (t > 0.0 && (outs.empty() || t > outs.back())) outs.push_back(t);
    parallel_for(count, threads, [&](std::size_t i) { traces[i] = integrate_field(path, starts[i], 0.0, t1, tolerance, outs); });
  }
  for (const auto& tr : traces) rep.flagged += tr.flagged() ? 1 : 0;

  bool all = true;
  for (double t : times) {
    const auto w = path.at(t);
    std::vector<double> stats, ps;
    for (std::size_t k = 0; k < modes; ++k) {
      std::vector<double> xs;
      xs.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        if (t == 0.0) {
          xs.push_back(starts[i][k]);
          continue;
        }
        if (traces[i].flagged()) continue;
        const auto& tt = traces[i].times;
        for (std::size_t j = 0; j < tt.size(); ++j)
          if (std::abs(tt[j] - t) <= 1e-12 * std::max(1.0, t)) {
            xs.push_back(traces[i].configurations[j][k]);
            break;
          }
      }
      const auto& g = w.terms[0].member.modes[k];
      const auto r = ks_test(std::move(xs), [&](double x) { return normal_cdf(x, g.mean, g.width()); });
      stats.push_back(r.statistic);
      ps.push_back(r.p_value);
      all = all && r.p_value >= rep.per_test_threshold;
    }
    rep.statistics.push_back(std::move(stats));
    rep.p_values.push_back(std::move(ps));
  }
  if (static_cast<double>(rep.flagged) / static_cast<double>(count) > max_flagged_fraction)
    rep.status = ReportStatus::inconclusive;
  else
    rep.status = all ? ReportStatus::pass : ReportStatus::fail;
  return rep;
}

/// Per-site F x F energy-density operator matrices.
using EnergyOperator = std::vector<Eigen::MatrixXcd>;

inline void validate_energy_operator(const EnergyOperator& e, std::size_t labels) {
  for (std::size_t n = 0; n < e.size(); ++n) {
    const auto& m = e[n];
    if (static_cast<std::size_t>(m.rows()) != labels || m.cols() != m.rows())
      throw ValidationError(fmt::format("energy operator at site {} is not {} x {}", n, labels, labels));
    if ((m - m.adjoint()).norm() > 1e-12 * std::max(1.0, m.norm()))
      throw ValidationError(fmt::format("energy operator at site {} is not self-adjoint", n));
  }
}

/// Conditional energy density E(x) = sum_ff' Psi_f* E_ff'(x) Psi_f' / sum_f |Psi_f|^2
/// at the actual configuration q.
inline std::vector<double> energy_density(const WaveFunctional& w, std::span<const double> q, const EnergyOperator& e) {
  validate_energy_operator(e, w.label_count);
  const auto amp = amplitudes(w, q);
  const double rho = amp.psi.squaredNorm();
  if (!(rho > 0.0)) throw NumericalQualityError("energy density evaluated where the functional vanishes");
  std::vector<double> out(e.size());
  for (std::size_t n = 0; n < e.size(); ++n) {
    const cplx v = amp.psi.dot(e[n] * amp.psi) / rho;
    if (std::abs(v.imag()) > 1e-10 * std::max(1.0, std::abs(v.real())))
      throw NumericalQualityError("energy density acquired an imaginary part");
    out[n] = v.real();
  }
  return out;
}

/// Energy density of a pure label state `labels` (no q dependence).
inline std::vector<double> label_expectation(const Eigen::VectorXcd& labels, const EnergyOperator& e) {
  std::vector<double> out(e.size());
  const double n = labels.squaredNorm();
  for (std::size_t s = 0; s < e.size(); ++s) out[s] = (labels.dot(e[s] * labels)).real() / n;
  return out;
}

/// Diagonal operator with Gaussian site profiles: E_ff(x) = amplitude *
/// exp(-d(x, center_f)^2 / (2 width^2)) with periodic site distance d.
inline EnergyOperator diagonal_profiles(std::size_t sites, std::span<const double> centers, double width, double amplitude) {
  if (!(width > 0.0)) throw ValidationError("profile width must be positive");
  const auto f = static_cast<Eigen::Index>(centers.size());
  EnergyOperator e(sites, Eigen::MatrixXcd::Zero(f, f));
  for (std::size_t n = 0; n < sites; ++n)
    for (Eigen::Index l = 0; l < f; ++l) {
      double d = std::abs(static_cast<double>(n) - centers[static_cast<std::size_t>(l)]);
      d = std::min(d, static_cast<double>(sites) - d);
      e[n](l, l) = amplitude * std::exp(-d * d / (2.0 * width * width));
    }
  return e;
}

/// Two labels localized at a quarter and three quarters of the lattice.
inline EnergyOperator two_packet_profile(std::size_t sites, double width, double amplitude) {
  const std::vector<double> centers{0.25 * static_cast<double>(sites), 0.75 * static_cast<double>(sites)};
  return diagonal_profiles(sites, centers, width, amplitude);
}

/// Channel weights |u_c^dagger Psi(q)|^2 / sum |Psi|^2 at q.
inline std::vector<double> channel_weights(const WaveFunctional& w, const LabelCoupling& h, std::span<const double> q) {
  const auto amp = amplitudes(w, q);
  const Eigen::VectorXcd d = h.channels().adjoint() * amp.psi;
  const double rho = amp.psi.squaredNorm();
  std::vector<double> out;
  for (Eigen::Index c = 0; c < d.size(); ++c) out.push_back(std::norm(d[c]) / rho);
  return out;
}

}  // namespace pilotwave
