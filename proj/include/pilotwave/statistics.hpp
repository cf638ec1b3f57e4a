#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "pilotwave/errors.hpp"

namespace pilotwave {

/// Seeded generator with platform-independent output. std::mt19937_64's
/// sequence is fixed by the standard; the distributions below are written
/// out by hand because the standard library's are implementation-defined.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (both variates used).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next() { return engine_(); }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Asymptotic Kolmogorov distribution tail Q(lambda) = 2 sum (-1)^(j-1) exp(-2 j^2 lambda^2).
inline double kolmogorov_tail(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16 * std::abs(sum)) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t samples = 0;
};

/// One-sample two-sided Kolmogorov-Smirnov test against a continuous CDF.
/// The p-value uses Stephens' small-sample correction of the asymptotic law.
template <typename Cdf>
TestResult ks_test(std::vector<double> samples, Cdf&& cdf) {
  if (samples.empty()) throw ValidationError("KS test needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d), samples.size()};
}

/// Pearson chi-square goodness of fit. Bins with expected count below
/// `min_expected` are pooled into one bin.
inline TestResult chi_square_test(std::span<const double> observed, std::span<const double> expected,
                                  double min_expected = 5.0) {
  if (observed.size() != expected.size()) throw ValidationError("chi-square bins mismatch");
  double stat = 0.0;
  double pooled_obs = 0.0;
  double pooled_exp = 0.0;
  std::size_t bins = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    total += observed[i];
    if (expected[i] < min_expected) {
      pooled_obs += observed[i];
      pooled_exp += expected[i];
      continue;
    }
    stat += std::pow(observed[i] - expected[i], 2) / expected[i];
    ++bins;
  }
  if (pooled_exp > 0.0) {
    stat += std::pow(pooled_obs - pooled_exp, 2) / pooled_exp;
    ++bins;
  }
  if (bins < 2) throw ValidationError("chi-square test needs at least two usable bins");
  const double dof = static_cast<double>(bins - 1);
  return {stat, boost::math::gamma_q(0.5 * dof, 0.5 * stat), static_cast<std::size_t>(total)};
}

/// CDF of N(mean, sigma^2).
inline double normal_cdf(double x, double mean, double sigma) {
  return 0.5 * std::erfc(-(x - mean) / (sigma * std::numbers::sqrt2));
}

enum class ReportStatus { pass, fail, inconclusive };

inline std::string to_string(ReportStatus s) {
  switch (s) {
    case ReportStatus::pass:
      return "pass";
    case ReportStatus::fail:
      return "fail";
    case ReportStatus::inconclusive:
      return "inconclusive";
  }
  return "unknown";
}

}  // namespace pilotwave
