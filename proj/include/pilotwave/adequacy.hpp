#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <ratio>
#include <string>
#include <type_traits>
#include <vector>

#include <fmt/format.h>

#include "pilotwave/errors.hpp"

namespace pilotwave {

/// SI value carrying its length dimension m^(Exp) at compile time. Only
/// lengths enter the bounds, so one rational exponent suffices.
template <typename Exp>
struct Quantity {
  using exponent = Exp;
  double value = 0.0;

  static std::string unit() {
    if constexpr (Exp::num == 0) {
      return "1";
    } else if constexpr (Exp::den == 1) {
      return Exp::num == 1 ? std::string("m") : fmt::format("m^{}", Exp::num);
    } else {
      return fmt::format("m^({}/{})", Exp::num, Exp::den);
    }
  }
};

using Dimensionless = Quantity<std::ratio<0>>;
using Length = Quantity<std::ratio<1>>;
using Volume = Quantity<std::ratio<3>>;
using InverseLength = Quantity<std::ratio<-1>>;
using NumberDensity = Quantity<std::ratio<-3>>;

template <typename A, typename B>
Quantity<std::ratio_add<A, B>> operator*(Quantity<A> a, Quantity<B> b) {
  return {a.value * b.value};
}

template <typename A, typename B>
Quantity<std::ratio_subtract<A, B>> operator/(Quantity<A> a, Quantity<B> b) {
  return {a.value / b.value};
}

template <typename P, typename A>
Quantity<std::ratio_multiply<A, P>> power(Quantity<A> a) {
  return {std::pow(a.value, static_cast<double>(P::num) / static_cast<double>(P::den))};
}

namespace detail {
template <typename Exp>
void require_positive(Quantity<Exp> q, const char* name) {
  if (!(q.value > 0.0) || !std::isfinite(q.value))
    throw ValidationError(fmt::format("{} must be positive and finite (got {})", name, q.value));
}
}  // namespace detail

/// L* = 1 / (a rho^(2/3)): region edge above which matter and empty-region
/// configurations become distinguishable on a lattice of spacing a.
inline Length euler_angle_bound(Length a, NumberDensity rho) {
  detail::require_positive(a, "lattice spacing");
  detail::require_positive(rho, "density");
  const auto product = a * power<std::ratio<2, 3>>(rho);
  static_assert(std::is_same_v<decltype(product)::exponent, std::ratio<-1>>);
  return Dimensionless{1.0} / product;
}

struct DiracSeaBound {
  Volume volume;  // V* = (Lambda / rho^2)^(3/5)
  Length radius;  // sphere of volume V*
};

inline DiracSeaBound dirac_sea_bound(InverseLength cutoff, NumberDensity rho) {
  detail::require_positive(cutoff, "cutoff");
  detail::require_positive(rho, "density");
  const auto v = power<std::ratio<3, 5>>(cutoff / (rho * rho));
  static_assert(std::is_same_v<decltype(v)::exponent, std::ratio<3>>);
  const auto b = power<std::ratio<1, 3>>(Dimensionless{3.0 / (4.0 * std::numbers::pi)} * v);
  return {v, b};
}

/// 8 pi^2 rho / Lambda^3, the amount by which the matter-to-vacuum density
/// ratio exceeds one. Kept separately because it underflows the ratio.
inline double density_excess(NumberDensity rho, InverseLength cutoff) {
  detail::require_positive(rho, "density");
  detail::require_positive(cutoff, "cutoff");
  const auto x = Dimensionless{8.0 * std::numbers::pi * std::numbers::pi} * rho /
                 (cutoff * cutoff * cutoff);
  static_assert(std::is_same_v<decltype(x)::exponent, std::ratio<0>>);
  return x.value;
}

inline double density_ratio(NumberDensity rho, InverseLength cutoff) { return 1.0 + density_excess(rho, cutoff); }

enum class BoundId { euler_angle, dirac_sea_volume, dirac_sea_radius, density_ratio };

inline std::string to_string(BoundId id) {
  switch (id) {
    case BoundId::euler_angle: return "euler-angle";
    case BoundId::dirac_sea_volume: return "dirac-sea-volume";
    case BoundId::dirac_sea_radius: return "dirac-sea-radius";
    case BoundId::density_ratio: return "density-ratio";
  }
  return "unknown";
}

struct BoundInput {
  std::string name;
  double value;
  std::string unit;
};

/// A bound with its inputs. If a candidate size is supplied, `satisfied`
/// renders "much greater than" as candidate / threshold > margin.
struct BoundReport {
  BoundId id;
  std::vector<BoundInput> inputs;
  double threshold = 0.0;
  std::string threshold_unit;
  double margin = 100.0;
  std::optional<double> candidate;
  std::optional<bool> satisfied;
  std::optional<double> excess;  // density-ratio only
};

inline void require_margin(double margin) {
  if (!(margin > 1.0)) throw ValidationError("margin must exceed 1");
}

inline void judge(BoundReport& r, std::optional<double> candidate) {
  if (!candidate) return;
  if (!(*candidate > 0.0)) throw ValidationError("candidate size must be positive");
  r.candidate = candidate;
  r.satisfied = *candidate / r.threshold > r.margin;
}

inline BoundReport euler_angle_report(Length a, NumberDensity rho, double margin = 100.0,
                                      std::optional<double> region = std::nullopt) {
  require_margin(margin);
  const auto l = euler_angle_bound(a, rho);
  BoundReport r{BoundId::euler_angle, {{"a", a.value, Length::unit()}, {"rho", rho.value, NumberDensity::unit()}},
                l.value, Length::unit(), margin};
  judge(r, region);
  return r;
}

inline std::vector<BoundReport> dirac_sea_reports(InverseLength cutoff, NumberDensity rho, double margin = 100.0,
                                                  std::optional<double> radius = std::nullopt) {
  require_margin(margin);
  const auto d = dirac_sea_bound(cutoff, rho);
  const std::vector<BoundInput> in{{"Lambda", cutoff.value, InverseLength::unit()}, {"rho", rho.value, NumberDensity::unit()}};
  BoundReport v{BoundId::dirac_sea_volume, in, d.volume.value, Volume::unit(), margin};
  BoundReport b{BoundId::dirac_sea_radius, in, d.radius.value, Length::unit(), margin};
  if (radius) {
    judge(b, radius);
    judge(v, 4.0 / 3.0 * std::numbers::pi * std::pow(*radius, 3));
  }
  BoundReport q{BoundId::density_ratio, in, density_ratio(rho, cutoff), Dimensionless::unit(), margin};
  q.excess = density_excess(rho, cutoff);
  return {v, b, q};
}

}  // namespace pilotwave
