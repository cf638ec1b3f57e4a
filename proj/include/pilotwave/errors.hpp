#pragma once

#include <stdexcept>
#include <string>

namespace pilotwave {

/// Input rejected before any computation (bad parameters, malformed config).
class ValidationError : public std::invalid_argument {
public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A run produced numbers that cannot be trusted: norm drift, domain escape,
/// too many flagged trajectories.
class NumericalQualityError : public std::runtime_error {
public:
  explicit NumericalQualityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pilotwave
