#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "pilotwave/errors.hpp"
#include "pilotwave/fft.hpp"

namespace pilotwave {

using cplx = std::complex<double>;

/// Configuration-space point. One-dimensional grids use only the first entry.
using Point = std::array<double, 2>;

/// Uniform periodic grid on [lower, lower + extent) per axis.
struct GridSpec {
  int dim = 1;
  std::array<double, 2> extent{1.0, 1.0};
  std::array<std::size_t, 2> points{8, 1};
  std::array<double, 2> lower{-0.5, 0.0};

  /// A 1D grid centered on the origin.
  static GridSpec line(double extent, std::size_t points) {
    GridSpec spec;
    spec.dim = 1;
    spec.extent = {extent, 1.0};
    spec.points = {points, 1};
    spec.lower = {-0.5 * extent, 0.0};
    spec.validate();
    return spec;
  }

  /// A 2D grid centered on the origin.
  static GridSpec plane(double extent_x, std::size_t points_x, double extent_y, std::size_t points_y) {
    GridSpec spec;
    spec.dim = 2;
    spec.extent = {extent_x, extent_y};
    spec.points = {points_x, points_y};
    spec.lower = {-0.5 * extent_x, -0.5 * extent_y};
    spec.validate();
    return spec;
  }

  void validate() const {
    if (dim != 1 && dim != 2) throw ValidationError(fmt::format("grid dimension must be 1 or 2, got {}", dim));
    for (int a = 0; a < dim; ++a) {
      if (!(extent[a] > 0.0) || !std::isfinite(extent[a]))
        throw ValidationError(fmt::format("grid extent along axis {} must be positive and finite", a));
      if (points[a] < 8) throw ValidationError(fmt::format("grid needs at least 8 points along axis {}", a));
      if (!std::isfinite(lower[a])) throw ValidationError("grid lower bound must be finite");
    }
  }

  std::size_t size() const { return dim == 1 ? points[0] : points[0] * points[1]; }
  double spacing(int axis) const { return extent[axis] / static_cast<double>(points[axis]); }
  double cell_volume() const { return dim == 1 ? spacing(0) : spacing(0) * spacing(1); }
  double node(int axis, std::size_t i) const { return lower[axis] + static_cast<double>(i) * spacing(axis); }

  /// Angular wavenumber of FFT bin i along an axis (standard FFT ordering).
  double wavenumber(int axis, std::size_t i) const {
    const auto n = static_cast<std::ptrdiff_t>(points[axis]);
    auto m = static_cast<std::ptrdiff_t>(i);
    if (m >= (n + 1) / 2) m -= n;
    return 2.0 * std::numbers::pi * static_cast<double>(m) / extent[axis];
  }

  bool is_nyquist(int axis, std::size_t i) const { return points[axis] % 2 == 0 && i == points[axis] / 2; }

  /// Node coordinates of flat index `idx`.
  Point position(std::size_t idx) const {
    if (dim == 1) return {node(0, idx), 0.0};
    return {node(0, idx % points[0]), node(1, idx / points[0])};
  }

  /// Periodic wrap of a coordinate into [lower, lower + extent).
  double wrap(int axis, double x) const {
    double r = std::fmod(x - lower[axis], extent[axis]);
    if (r < 0.0) r += extent[axis];
    if (r >= extent[axis]) r = 0.0;
    return lower[axis] + r;
  }

  Point wrap(const Point& p) const {
    Point q = p;
    for (int a = 0; a < dim; ++a) q[a] = wrap(a, p[a]);
    return q;
  }

  std::array<std::size_t, 2> shape_array() const { return points; }

  bool operator==(const GridSpec&) const = default;
};

/// Complex amplitude sampled on every node of a GridSpec; axis 0 fastest.
class ComplexGrid {
public:
  ComplexGrid() = default;
  explicit ComplexGrid(GridSpec spec) : spec_(spec), values_(spec.size()) { spec_.validate(); }
  ComplexGrid(GridSpec spec, std::vector<cplx> values) : spec_(spec), values_(std::move(values)) {
    spec_.validate();
    if (values_.size() != spec_.size())
      throw ValidationError(fmt::format("grid expects {} values, got {}", spec_.size(), values_.size()));
  }

  /// Fill from f(point).
  template <typename F>
  static ComplexGrid sample(const GridSpec& spec, F&& f) {
    ComplexGrid g(spec);
    for (std::size_t i = 0; i < g.size(); ++i) g.values_[i] = f(spec.position(i));
    return g;
  }

  const GridSpec& spec() const { return spec_; }
  std::size_t size() const { return values_.size(); }
  std::span<cplx> values() { return values_; }
  std::span<const cplx> values() const { return values_; }
  cplx& operator[](std::size_t i) { return values_[i]; }
  const cplx& operator[](std::size_t i) const { return values_[i]; }
  cplx& at(std::size_t ix, std::size_t iy) { return values_[ix + spec_.points[0] * iy]; }
  const cplx& at(std::size_t ix, std::size_t iy) const { return values_[ix + spec_.points[0] * iy]; }

  bool all_finite() const {
    for (const cplx& v : values_)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
  }

  /// Sum of |psi|^2 times the cell volume.
  double norm_squared() const {
    double s = 0.0;
    for (const cplx& v : values_) s += std::norm(v);
    return s * spec_.cell_volume();
  }

  ComplexGrid& operator+=(const ComplexGrid& other) {
    require_same_spec(other);
    for (std::size_t i = 0; i < size(); ++i) values_[i] += other.values_[i];
    return *this;
  }
  ComplexGrid& operator*=(cplx s) {
    for (cplx& v : values_) v *= s;
    return *this;
  }
  friend ComplexGrid operator+(ComplexGrid a, const ComplexGrid& b) { return a += b; }
  friend ComplexGrid operator*(cplx s, ComplexGrid a) { return a *= s; }

  void require_same_spec(const ComplexGrid& other) const {
    if (!(spec_ == other.spec_)) throw ValidationError("grids have different specs");
  }

private:
  GridSpec spec_{};
  std::vector<cplx> values_;
};

enum class Direction { forward, inverse };

inline void require_finite(const ComplexGrid& g, const char* what) {
  if (!g.all_finite()) throw ValidationError(fmt::format("{}: grid contains non-finite values", what));
}

/// Unitary DFT of a grid. Parseval holds for the plain sum of |values|^2.
inline ComplexGrid spectral_transform(const ComplexGrid& g, Direction direction) {
  require_finite(g, "spectral_transform");
  ComplexGrid out = g;
  const auto shape = g.spec().shape_array();
  fft::GridTransform plan(std::span<const std::size_t>(shape.data(), static_cast<std::size_t>(g.spec().dim)));
  if (direction == Direction::forward) {
    plan.forward(out.values());
  } else {
    plan.inverse(out.values());
  }
  return out;
}

/// Multiplies spectral coefficients by i*k along `axis`; the Nyquist bin is
/// dropped so the derivative of a real field stays real.
inline void apply_spectral_derivative(ComplexGrid& spectrum, int axis) {
  const GridSpec& spec = spectrum.spec();
  const std::size_t nx = spec.points[0];
  for (std::size_t idx = 0; idx < spectrum.size(); ++idx) {
    const std::size_t i = axis == 0 ? idx % nx : idx / nx;
    if (spec.is_nyquist(axis, i)) {
      spectrum[idx] = 0.0;
    } else {
      spectrum[idx] *= cplx(0.0, spec.wavenumber(axis, i));
    }
  }
}

/// Spectral partial derivatives, one grid per axis.
inline std::vector<ComplexGrid> gradient(const ComplexGrid& g) {
  require_finite(g, "gradient");
  const GridSpec& spec = g.spec();
  const auto shape = spec.shape_array();
  fft::GridTransform plan(std::span<const std::size_t>(shape.data(), static_cast<std::size_t>(spec.dim)));
  ComplexGrid spectrum = g;
  plan.forward(spectrum.values());
  std::vector<ComplexGrid> out;
  for (int axis = 0; axis < spec.dim; ++axis) {
    ComplexGrid d = spectrum;
    apply_spectral_derivative(d, axis);
    plan.inverse(d.values());
    out.push_back(std::move(d));
  }
  return out;
}

/// Periodic separable Catmull-Rom stencil at an off-grid point: up to 16
/// flat indices and weights. Computing it once lets several grids on the
/// same spec be interpolated at the same point.
class Stencil {
public:
  Stencil(const GridSpec& spec, const Point& x) {
    std::array<std::array<std::size_t, 4>, 2> idx{};
    std::array<std::array<double, 4>, 2> w{};
    for (int a = 0; a < spec.dim; ++a) {
      const auto n = static_cast<std::ptrdiff_t>(spec.points[a]);
      double r = std::fmod(x[a] - spec.lower[a], spec.extent[a]);
      if (r < 0.0) r += spec.extent[a];
      const double u = r / spec.spacing(a);
      double base = std::floor(u);
      double f = u - base;
      auto i0 = static_cast<std::ptrdiff_t>(base);
      if (i0 >= n) i0 -= n;
      catmull_rom(f, w[a]);
      for (std::ptrdiff_t k = 0; k < 4; ++k) {
        std::ptrdiff_t j = (i0 - 1 + k) % n;
        if (j < 0) j += n;
        idx[a][k] = static_cast<std::size_t>(j);
      }
    }
    if (spec.dim == 1) {
      count_ = 4;
      for (int k = 0; k < 4; ++k) {
        index_[k] = idx[0][k];
        weight_[k] = w[0][k];
      }
    } else {
      count_ = 16;
      const std::size_t nx = spec.points[0];
      for (int ky = 0; ky < 4; ++ky)
        for (int kx = 0; kx < 4; ++kx) {
          index_[ky * 4 + kx] = idx[0][kx] + nx * idx[1][ky];
          weight_[ky * 4 + kx] = w[0][kx] * w[1][ky];
        }
    }
  }

  cplx apply(std::span<const cplx> values) const {
    cplx acc{0.0, 0.0};
    for (int k = 0; k < count_; ++k) acc += weight_[k] * values[index_[k]];
    return acc;
  }

  double apply(std::span<const double> values) const {
    double acc = 0.0;
    for (int k = 0; k < count_; ++k) acc += weight_[k] * values[index_[k]];
    return acc;
  }

private:
  // Weights for nodes i-1, i, i+1, i+2 at fractional offset f in [0, 1).
  static void catmull_rom(double f, std::array<double, 4>& w) {
    const double f2 = f * f;
    const double f3 = f2 * f;
    w[0] = 0.5 * (-f3 + 2.0 * f2 - f);
    w[1] = 0.5 * (3.0 * f3 - 5.0 * f2 + 2.0);
    w[2] = 0.5 * (-3.0 * f3 + 4.0 * f2 + f);
    w[3] = 0.5 * (f3 - f2);
  }

  std::array<std::size_t, 16> index_{};
  std::array<double, 16> weight_{};
  int count_ = 0;
};

/// Cubic (Catmull-Rom) periodic interpolation; exact at nodes.
inline cplx interpolate(const ComplexGrid& g, const Point& x) { return Stencil(g.spec(), x).apply(g.values()); }

inline cplx interpolate(const ComplexGrid& g, double x) { return interpolate(g, Point{x, 0.0}); }

}  // namespace pilotwave
