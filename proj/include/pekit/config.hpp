#pragma once

// Plain-text experiment configuration: named sections of key = value pairs.
//
//   # comment
//   [train]
//   samples = 1000
//   power_budget_dbm = 30
//
// Parsing is strict: keys must live inside a section, duplicates are errors,
// and every key a command does not consume is rejected by name, so a typo
// cannot silently fall back to a default.  Physical quantities may be given
// in watts or dBm (one of the two); conversion happens here at parse time and
// everything downstream runs in linear-scale watts.

#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pekit/channels.hpp"

namespace pekit {

struct ConfigData {
  // section -> key -> raw value; std::map keeps iteration deterministic.
  std::map<std::string, std::map<std::string, std::string>> sections;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace config_detail

inline ConfigData parse_config(const std::string& text) {
  ConfigData out;
  std::istringstream lines(text);
  std::string line;
  std::string section;
  bool in_section = false;
  int number = 0;
  while (std::getline(lines, line)) {
    ++number;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("config line " + std::to_string(number) +
                          ": unterminated section header");
      }
      section = config_detail::trim(t.substr(1, t.size() - 2));
      if (section.empty()) {
        throw ConfigError("config line " + std::to_string(number) + ": empty section name");
      }
      in_section = true;
      out.sections[section];  // a section may legitimately stay empty
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) +
                        ": expected 'key = value' or '[section]'");
    }
    if (!in_section) {
      throw ConfigError("config line " + std::to_string(number) +
                        ": key outside any [section]");
    }
    const std::string key = config_detail::trim(t.substr(0, eq));
    const std::string value = config_detail::trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(number) + ": empty key");
    }
    auto [it, inserted] = out.sections[section].emplace(key, value);
    (void)it;
    if (!inserted) {
      throw ConfigError("config line " + std::to_string(number) + ": duplicate key '" +
                        key + "' in [" + section + "]");
    }
  }
  return out;
}

// Typed access that remembers which keys were read, so a command can reject
// everything it did not understand, naming each stray [section] key.
class ConfigReader {
 public:
  explicit ConfigReader(ConfigData data) : data_(std::move(data)) {}

  bool has(const std::string& section, const std::string& key) const {
    const auto s = data_.sections.find(section);
    return s != data_.sections.end() && s->second.count(key) > 0;
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto s = data_.sections.find(section);
    if (s == data_.sections.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    consumed_.insert({section, key});
    return k->second;
  }

  std::string get_string(const std::string& section, const std::string& key) const {
    const auto v = raw(section, key);
    if (!v) throw ConfigError("missing required key '" + key + "' in [" + section + "]");
    return *v;
  }

  std::string get_string_or(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    const auto v = raw(section, key);
    return v ? *v : fallback;
  }

  std::int64_t get_int(const std::string& section, const std::string& key) const {
    return parse_int(section, key, get_string(section, key));
  }

  std::int64_t get_int_or(const std::string& section, const std::string& key,
                          std::int64_t fallback) const {
    const auto v = raw(section, key);
    return v ? parse_int(section, key, *v) : fallback;
  }

  std::uint64_t get_uint(const std::string& section, const std::string& key) const {
    const std::int64_t v = get_int(section, key);
    if (v < 0) throw ConfigError(where(section, key) + ": must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  double get_double(const std::string& section, const std::string& key) const {
    return parse_double(section, key, get_string(section, key));
  }

  double get_double_or(const std::string& section, const std::string& key,
                       double fallback) const {
    const auto v = raw(section, key);
    return v ? parse_double(section, key, *v) : fallback;
  }

  bool get_bool_or(const std::string& section, const std::string& key, bool fallback) const {
    const auto v = raw(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(where(section, key) + ": expected true/false, got '" + *v + "'");
  }

  std::vector<std::int64_t> get_int_list(const std::string& section,
                                         const std::string& key) const {
    const std::string text = get_string(section, key);
    std::vector<std::int64_t> out;
    std::istringstream parts(text);
    std::string part;
    while (std::getline(parts, part, ',')) {
      const std::string item = config_detail::trim(part);
      if (item.empty()) {
        throw ConfigError(where(section, key) + ": empty entry in list '" + text + "'");
      }
      out.push_back(parse_int(section, key, item));
    }
    if (out.empty()) throw ConfigError(where(section, key) + ": empty list");
    return out;
  }

  // A power-like quantity given either as <base>_watts or <base>_dbm.
  std::optional<double> get_watts(const std::string& section, const std::string& base) const {
    const bool w = has(section, base + "_watts");
    const bool d = has(section, base + "_dbm");
    if (w && d) {
      throw ConfigError("[" + section + "] sets both " + base + "_watts and " + base +
                        "_dbm; give one");
    }
    if (w) return get_double(section, base + "_watts");
    if (d) return dbm_to_watt(get_double(section, base + "_dbm"));
    return std::nullopt;
  }

  double get_watts_or(const std::string& section, const std::string& base,
                      double fallback) const {
    const auto v = get_watts(section, base);
    return v ? *v : fallback;
  }

  // Every key that was never consumed is an error, reported with its section.
  void reject_unknown() const {
    std::vector<std::string> stray;
    for (const auto& [section, keys] : data_.sections) {
      for (const auto& [key, value] : keys) {
        (void)value;
        if (consumed_.count({section, key}) == 0) {
          stray.push_back("[" + section + "] " + key);
        }
      }
    }
    if (!stray.empty()) {
      std::string msg = "unknown config key" + std::string(stray.size() > 1 ? "s" : "") + ": ";
      for (std::size_t i = 0; i < stray.size(); ++i) {
        if (i > 0) msg += ", ";
        msg += stray[i];
      }
      throw ConfigError(msg);
    }
  }

 private:
  static std::string where(const std::string& section, const std::string& key) {
    return "[" + section + "] " + key;
  }

  static std::int64_t parse_int(const std::string& section, const std::string& key,
                                const std::string& text) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return static_cast<std::int64_t>(v);
    } catch (const std::exception&) {
      throw ConfigError(where(section, key) + ": expected an integer, got '" + text + "'");
    }
  }

  static double parse_double(const std::string& section, const std::string& key,
                             const std::string& text) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(section, key) + ": expected a number, got '" + text + "'");
    }
  }

  ConfigData data_;
  mutable std::set<std::pair<std::string, std::string>> consumed_;
};

// Deterministic re-emission, used for the resolved-config echo: sections and
// keys in sorted order, one key = value per line.
inline std::string config_to_string(const ConfigData& data) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [section, keys] : data.sections) {
    if (!first) os << "\n";
    first = false;
    os << "[" << section << "]\n";
    for (const auto& [key, value] : keys) {
      os << key << " = " << value << "\n";
    }
  }
  return os.str();
}

}  // namespace pekit
