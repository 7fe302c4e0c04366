#pragma once

// Flat `key = value` configuration text. '#' starts a comment; blank lines are ignored.

#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "tcs/errors.hpp"

namespace tcs {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::pair<std::string, std::string> parse_assignment(std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value, got '" + std::string(line) + "'");
  std::string key = trim(line.substr(0, eq));
  if (key.empty()) throw ConfigError(where + ": empty key");
  return {std::move(key), trim(line.substr(eq + 1))};
}

inline KeyValues parse_key_values(std::string_view text, const std::string& source = "config") {
  KeyValues out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    auto [k, v] = parse_assignment(line, source + ":" + std::to_string(lineno));
    out[k] = v;
  }
  return out;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace tcs
