#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "pilotwave/cli/config.hpp"
#include "pilotwave/errors.hpp"

namespace pilotwave::cli {

using Json = nlohmann::ordered_json;

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

namespace detail {

inline void dump_json(const Json& j, std::string& out, int indent, int depth) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      out += std::isfinite(v) ? format_real(v) : "null";
      return;
    }
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        out += pad + Json(k).dump() + ": ";
        dump_json(v, out, indent, depth + 1);
      }
      out += "\n" + close + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool scalars = true;
      for (const auto& v : j) scalars = scalars && !v.is_structured();
      out += "[";
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += scalars ? ", " : ",";
        first = false;
        if (!scalars) out += "\n" + pad;
        dump_json(v, out, indent, depth + 1);
      }
      if (!scalars) out += "\n" + close;
      out += "]";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// JSON text with every float at 17 significant digits; non-finite floats
/// become null.
inline std::string to_json_text(const Json& j) {
  std::string out;
  detail::dump_json(j, out, 2, 0);
  out += "\n";
  return out;
}

/// Columnar text: a header of name[unit] fields, then one row per record.
class TsvTable {
public:
  using Cell = std::variant<double, std::int64_t, std::string>;

  struct Column {
    std::string name;
    std::string unit;
  };

  explicit TsvTable(std::vector<Column> columns) : columns_(std::move(columns)) {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      text_ += (i ? "\t" : "") + columns_[i].name;
      if (!columns_[i].unit.empty()) text_ += "[" + columns_[i].unit + "]";
    }
    text_ += "\n";
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != columns_.size())
      throw std::logic_error(fmt::format("row has {} cells, table has {} columns", cells.size(), columns_.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += "\t";
      if (const auto* d = std::get_if<double>(&cells[i])) text_ += format_real(*d);
      else if (const auto* n = std::get_if<std::int64_t>(&cells[i])) text_ += std::to_string(*n);
      else text_ += std::get<std::string>(cells[i]);
    }
    text_ += "\n";
  }

  const std::string& text() const { return text_; }

private:
  std::vector<Column> columns_;
  std::string text_;
};

struct FileRecord {
  std::string name;
  std::uintmax_t bytes = 0;
  std::string sha256;
};

/// Single writer for a run directory. Every file goes to a temporary name
/// first and is renamed into place once complete.
class OutputDirectory {
public:
  explicit OutputDirectory(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw ValidationError(fmt::format("cannot create output directory '{}': {}", root_.string(), ec.message()));
  }

  const std::filesystem::path& root() const { return root_; }
  const std::vector<FileRecord>& files() const { return files_; }

  void write(const std::string& name, const std::string& content, bool record = true) {
    const auto target = root_ / name;
    const auto temp = root_ / ("." + name + ".tmp");
    {
      std::ofstream out(temp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", temp.string()));
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
      out.flush();
      if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", temp.string()));
    }
    std::filesystem::rename(temp, target);
    if (record) files_.push_back({name, content.size(), sha256_hex(content)});
  }

private:
  std::filesystem::path root_;
  std::vector<FileRecord> files_;
};

inline constexpr const char* kToolVersion = "0.1.0";

inline const std::map<std::string, std::string>& module_versions() {
  static const std::map<std::string, std::string> v{
      {"grids", "0.1.0"},    {"evolution", "0.1.0"}, {"guidance", "0.1.0"}, {"equilibrium", "0.1.0"},
      {"fieldmodes", "0.1.0"}, {"adequacy", "0.1.0"},  {"scenarios", "0.1.0"}, {"cli", "0.1.0"}};
  return v;
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(t);
  const std::time_t tt = std::chrono::system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                     tm.tm_min, tm.tm_sec);
}

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  int exit_code = 0;
  std::vector<FileRecord> files;

  Json to_json() const {
    Json j;
    j["tool"] = "pilotwave";
    j["tool_version"] = kToolVersion;
    j["command"] = command;
    j["config_sha256"] = config_hash;
    j["seed"] = seed;
    j["started"] = started;
    j["finished"] = finished;
    j["exit_code"] = exit_code;
    Json mods = Json::object();
    for (const auto& [k, v] : module_versions()) mods[k] = v;
    j["modules"] = mods;
    Json fs = Json::array();
    for (const auto& f : files) fs.push_back({{"name", f.name}, {"bytes", f.bytes}, {"sha256", f.sha256}});
    j["files"] = fs;
    return j;
  }
};

}  // namespace pilotwave::cli
