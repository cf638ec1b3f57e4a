#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace pilotwave::fft {

using cplx = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// One-dimensional unitary discrete Fourier transform of length n.
///
/// Forward uses exp(-2 pi i jk/n), inverse exp(+2 pi i jk/n), both scaled by
/// 1/sqrt(n). Power-of-two lengths use an iterative radix-2 kernel; other
/// lengths fall back to a direct O(n^2) sum. Twiddles are evaluated directly
/// (not by recurrence) so round-trip error stays at a few ulp.
class Plan {
public:
  explicit Plan(std::size_t n) : n_(n), twiddle_(n), bitrev_(is_power_of_two(n) ? n : 0) {
    for (std::size_t k = 0; k < n_; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_);
      twiddle_[k] = {std::cos(angle), std::sin(angle)};
    }
    if (!bitrev_.empty()) {
      std::size_t bits = 0;
      while ((std::size_t{1} << bits) < n_) ++bits;
      for (std::size_t i = 0; i < n_; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b)
          if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        bitrev_[i] = r;
      }
    }
    scale_ = 1.0 / std::sqrt(static_cast<double>(n_));
  }

  std::size_t size() const { return n_; }

  /// In-place transform of `n` elements read with the given stride.
  void execute(cplx* data, std::size_t stride, bool inverse, std::vector<cplx>& scratch) const {
    scratch.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) scratch[i] = data[i * stride];
    if (bitrev_.empty()) {
      direct(scratch, inverse);
    } else {
      radix2(scratch, inverse);
    }
    for (std::size_t i = 0; i < n_; ++i) data[i * stride] = scratch[i] * scale_;
  }

private:
  cplx twiddle(std::size_t k, bool inverse) const {
    const cplx w = twiddle_[k % n_];
    return inverse ? std::conj(w) : w;
  }

  void radix2(std::vector<cplx>& a, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i)
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const cplx w = twiddle(j * step, inverse);
          const cplx u = a[start + j];
          const cplx v = a[start + j + half] * w;
          a[start + j] = u + v;
          a[start + j + half] = u - v;
        }
      }
    }
  }

  void direct(std::vector<cplx>& a, bool inverse) const {
    std::vector<cplx> out(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      cplx acc{0.0, 0.0};
      for (std::size_t j = 0; j < n_; ++j) acc += a[j] * twiddle((j * k) % n_, inverse);
      out[k] = acc;
    }
    a.swap(out);
  }

  std::size_t n_;
  std::vector<cplx> twiddle_;
  std::vector<std::size_t> bitrev_;
  double scale_ = 1.0;
};

/// Separable unitary transform over a 1D or 2D row-major array (axis 0
/// fastest). Holds the per-axis plans so repeated transforms of one shape
/// do not re-evaluate twiddles.
class GridTransform {
public:
  explicit GridTransform(std::span<const std::size_t> shape) : shape_(shape.begin(), shape.end()) {
    for (std::size_t n : shape_) plans_.emplace_back(n);
  }

  void forward(std::span<cplx> data) const { run(data, false); }
  void inverse(std::span<cplx> data) const { run(data, true); }

private:
  void run(std::span<cplx> data, bool inverse) const {
    thread_local std::vector<cplx> scratch;
    if (shape_.size() == 1) {
      plans_[0].execute(data.data(), 1, inverse, scratch);
      return;
    }
    const std::size_t nx = shape_[0];
    const std::size_t ny = shape_[1];
    for (std::size_t iy = 0; iy < ny; ++iy) plans_[0].execute(data.data() + iy * nx, 1, inverse, scratch);
    for (std::size_t ix = 0; ix < nx; ++ix) plans_[1].execute(data.data() + ix, nx, inverse, scratch);
  }

  std::vector<std::size_t> shape_;
  std::vector<Plan> plans_;
};

}  // namespace pilotwave::fft
