#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "pilotwave/errors.hpp"

namespace pilotwave::cli {

enum class ValueKind { real, integer, boolean, text, real_list };

/// One documented key. An empty default leaves the key unset unless given.
struct KeySpec {
  std::string key;  // "section.name"
  ValueKind kind = ValueKind::real;
  std::string fallback;
  std::string doc;
};

using Schema = std::vector<KeySpec>;

/// Floats print with 17 significant digits so they round-trip exactly.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", v);
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// SI prefix multipliers accepted as a trailing suffix ("1f" = 1e-15, "2k" = 2e3).
inline std::optional<double> si_multiplier(const std::string& suffix) {
  static const std::map<std::string, double> table{
      {"y", 1e-24}, {"z", 1e-21}, {"a", 1e-18}, {"f", 1e-15}, {"p", 1e-12}, {"n", 1e-9},
      {"u", 1e-6},  {"m", 1e-3},  {"c", 1e-2},  {"k", 1e3},   {"M", 1e6},   {"G", 1e9},
      {"T", 1e12},  {"P", 1e15},  {"E", 1e18},  {"Z", 1e21},  {"Y", 1e24}};
  const auto it = table.find(suffix);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

inline double parse_real(const std::string& key, const std::string& raw, bool allow_si) {
  const std::string s = trim(raw);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("{}: '{}' is not a number", key, raw));
  }
  const std::string rest = trim(s.substr(used));
  if (!rest.empty()) {
    const auto m = allow_si ? si_multiplier(rest) : std::nullopt;
    if (!m) {
      throw ValidationError(allow_si ? fmt::format("{}: unknown SI suffix '{}'", key, rest)
                                     : fmt::format("{}: '{}' is not a plain number (SI suffixes only in [bounds])", key, raw));
    }
    v *= *m;
  }
  if (!std::isfinite(v)) throw ValidationError(fmt::format("{}: value must be finite", key));
  return v;
}

inline std::int64_t parse_integer(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("{}: '{}' is not an integer", key, raw));
  }
  if (used != s.size()) throw ValidationError(fmt::format("{}: '{}' is not an integer", key, raw));
  return v;
}

inline bool parse_boolean(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ValidationError(fmt::format("{}: '{}' is not a boolean", key, raw));
}

inline std::vector<double> parse_real_list(const std::string& key, const std::string& raw) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_real(key, item, false));
  }
  return out;
}

inline bool allows_si(const std::string& key) { return key.rfind("bounds.", 0) == 0; }

}  // namespace detail

/// Sectioned key-value configuration checked against a schema. Unknown keys
/// and malformed values are errors; defaults fill the rest.
class Config {
public:
  Config(Schema schema, std::map<std::string, std::string> given) : schema_(std::move(schema)), given_(std::move(given)) {
    for (const auto& [k, v] : given_) {
      if (!find(k)) throw ValidationError(fmt::format("unknown configuration key '{}'", k));
    }
    for (const auto& spec : schema_) {
      if (const auto raw = raw_value(spec.key)) canonical_value(spec, *raw);
    }
  }

  /// Parses INI text, then applies "section.key=value" overrides in order.
  static Config parse(Schema schema, const std::string& ini_text, const std::vector<std::string>& overrides = {}) {
    std::map<std::string, std::string> given;
    if (!detail::trim(ini_text).empty()) {
      boost::property_tree::ptree tree;
      std::istringstream in(ini_text);
      try {
        boost::property_tree::ini_parser::read_ini(in, tree);
      } catch (const boost::property_tree::ini_parser_error& e) {
        throw ValidationError(fmt::format("config line {}: {}", e.line(), e.message()));
      }
      for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ValidationError(fmt::format("key '{}' must sit inside a [section]", section));
        for (const auto& [name, value] : body) {
          if (!value.empty()) throw ValidationError(fmt::format("nested key '{}.{}' is not supported", section, name));
          given[section + "." + name] = value.data();
        }
      }
    }
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos || eq == 0) throw ValidationError(fmt::format("override '{}' must look like section.key=value", o));
      const std::string key = detail::trim(o.substr(0, eq));
      if (key.find('.') == std::string::npos)
        throw ValidationError(fmt::format("override key '{}' needs a section prefix", key));
      given[key] = o.substr(eq + 1);
    }
    return Config(std::move(schema), std::move(given));
  }

  const Schema& schema() const { return schema_; }

  bool has(const std::string& key) const { return raw_value(key).has_value(); }

  double real(const std::string& key) const {
    return detail::parse_real(key, require(key, ValueKind::real), detail::allows_si(key));
  }
  std::optional<double> optional_real(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return real(key);
  }
  std::int64_t integer(const std::string& key) const { return detail::parse_integer(key, require(key, ValueKind::integer)); }
  std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw ValidationError(fmt::format("{} must be >= 0", key));
    return static_cast<std::size_t>(v);
  }
  bool boolean(const std::string& key) const { return detail::parse_boolean(key, require(key, ValueKind::boolean)); }
  std::string text(const std::string& key) const { return detail::trim(require(key, ValueKind::text)); }
  std::vector<double> real_list(const std::string& key) const {
    return detail::parse_real_list(key, require(key, ValueKind::real_list));
  }

  /// Effective configuration as INI text: sections and keys sorted, numbers
  /// normalized. Independent of file order and spelling, and loadable again.
  /// Keys in `skip` (settings that cannot change results) are left out.
  std::string canonical(const std::vector<std::string>& skip = {}) const {
    std::map<std::string, std::map<std::string, std::string>> sections;
    for (const auto& spec : schema_) {
      if (std::find(skip.begin(), skip.end(), spec.key) != skip.end()) continue;
      if (const auto raw = raw_value(spec.key)) {
        const auto dot = spec.key.find('.');
        sections[spec.key.substr(0, dot)][spec.key.substr(dot + 1)] = canonical_value(spec, *raw);
      }
    }
    std::string out;
    for (const auto& [section, keys] : sections) {
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
      for (const auto& [k, v] : keys) out += k + " = " + v + "\n";
    }
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    if (!find(key)) throw ValidationError(fmt::format("unknown configuration key '{}'", key));
    given_[key] = value;
    canonical_value(*find(key), value);
  }

private:
  const KeySpec* find(const std::string& key) const {
    for (const auto& s : schema_)
      if (s.key == key) return &s;
    return nullptr;
  }

  std::optional<std::string> raw_value(const std::string& key) const {
    if (auto it = given_.find(key); it != given_.end()) return it->second;
    const auto* spec = find(key);
    if (spec && !spec->fallback.empty()) return spec->fallback;
    return std::nullopt;
  }

  std::string require(const std::string& key, ValueKind kind) const {
    const auto* spec = find(key);
    if (!spec) throw ValidationError(fmt::format("key '{}' is not in the schema", key));
    if (spec->kind != kind) throw ValidationError(fmt::format("key '{}' read with the wrong type", key));
    const auto raw = raw_value(key);
    if (!raw) throw ValidationError(fmt::format("required key '{}' is missing", key));
    return *raw;
  }

  static std::string canonical_value(const KeySpec& spec, const std::string& raw) {
    switch (spec.kind) {
      case ValueKind::real:
        return format_real(detail::parse_real(spec.key, raw, detail::allows_si(spec.key)));
      case ValueKind::integer:
        return std::to_string(detail::parse_integer(spec.key, raw));
      case ValueKind::boolean:
        return detail::parse_boolean(spec.key, raw) ? "true" : "false";
      case ValueKind::text:
        return detail::trim(raw);
      case ValueKind::real_list: {
        std::string out;
        for (double v : detail::parse_real_list(spec.key, raw)) out += (out.empty() ? "" : ",") + format_real(v);
        return out;
      }
    }
    return raw;
  }

  Schema schema_;
  std::map<std::string, std::string> given_;
};

}  // namespace pilotwave::cli
