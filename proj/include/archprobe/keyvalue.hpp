#pragma once

// Line-oriented `key = value [unit]` text used for synthetic model configs
// and datasheet claims. `#` starts a comment; a value of `N/A` marks an
// absent entry.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "archprobe/error.hpp"

namespace archprobe {

struct KeyValueEntry {
  std::string key;
  std::optional<double> value;  // empty for N/A
  std::string unit;
  std::size_t line = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace detail

inline std::vector<KeyValueEntry> parse_key_values(std::string_view text) {
  std::vector<KeyValueEntry> entries;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected 'metric = value unit', got '" + line + "'");
    KeyValueEntry entry;
    entry.line = lineno;
    entry.key = detail::trim(std::string_view(line).substr(0, eq));
    if (entry.key.empty() || entry.key.find_first_of(" \t") != std::string::npos) {
      throw ParseError(lineno, "bad metric name '" + entry.key + "'");
    }
    std::istringstream rest(line.substr(eq + 1));
    std::string value_text;
    if (!(rest >> value_text)) throw ParseError(lineno, "missing value for '" + entry.key + "'");
    std::string unit;
    std::getline(rest, unit);
    entry.unit = detail::trim(unit);
    if (detail::lower(value_text) == "n/a") {
      entry.value.reset();
    } else {
      double v = 0.0;
      const char* end = value_text.data() + value_text.size();
      const auto [ptr, ec] = std::from_chars(value_text.data(), end, v);
      if (ec != std::errc() || !std::isfinite(v)) {
        throw ParseError(lineno, "bad number '" + value_text + "' for '" + entry.key + "'");
      }
      // A unit may be glued to the number, as in `32KB`.
      if (ptr != end) {
        if (!entry.unit.empty() || !std::isalpha(static_cast<unsigned char>(*ptr))) {
          throw ParseError(lineno, "bad number '" + value_text + "' for '" + entry.key + "'");
        }
        entry.unit = std::string(ptr, end);
      }
      entry.value = v;
    }
    for (const auto& prev : entries) {
      if (prev.key == entry.key) throw ParseError(lineno, "duplicate metric '" + entry.key + "'");
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Multiplier that converts `unit` to bytes (B, KB/KiB, MB/MiB, GB/GiB are
/// all binary multiples), or nullopt for a non-size unit.
inline std::optional<double> byte_multiplier(std::string_view unit) {
  const std::string u = detail::lower(std::string(unit));
  if (u.empty() || u == "b" || u == "byte" || u == "bytes") return 1.0;
  if (u == "kb" || u == "kib" || u == "k") return 1024.0;
  if (u == "mb" || u == "mib" || u == "m") return 1024.0 * 1024.0;
  if (u == "gb" || u == "gib" || u == "g") return 1024.0 * 1024.0 * 1024.0;
  return std::nullopt;
}

/// Parses sizes such as `4096`, `32K`, `512KB`, `1G`.
inline std::uint64_t parse_byte_size(std::string_view text) {
  std::string s = detail::trim(text);
  std::size_t digits = 0;
  while (digits < s.size() && (std::isdigit(static_cast<unsigned char>(s[digits])) || s[digits] == '.')) ++digits;
  if (digits == 0) throw Error(ErrorCode::InvalidArgument, "bad size '" + s + "'");
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + digits, value);
  if (ec != std::errc() || ptr != s.data() + digits) throw Error(ErrorCode::InvalidArgument, "bad size '" + s + "'");
  const auto mult = byte_multiplier(detail::trim(std::string_view(s).substr(digits)));
  if (!mult) throw Error(ErrorCode::InvalidArgument, "bad size unit in '" + s + "'");
  return static_cast<std::uint64_t>(std::llround(value * *mult));
}

}  // namespace archprobe
