#pragma once

// Flat key-value configuration with sections.
//
//   # comment            (also ';'; whole lines only)
//   [section]
//   key = value          (stored as "section.key"; value runs to end of line)
//
// Keys outside any section are stored without a prefix. Repeating a key is an
// error. Every key must be consumed by a getter; leftovers are reported by
// `check_all_used` so typos fail loudly.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bdk/error.hpp"

namespace bdk {

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& is, const std::string& origin = "<config>") {
    Config c;
    c.origin_ = origin;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      const std::string where = origin + ":" + std::to_string(lineno);
      if (t.front() == '[') {
        if (t.back() != ']' || t.size() < 3) throw ConfigError(where, "malformed section header '" + t + "'");
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(where, "expected 'key = value', got '" + t + "'");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw ConfigError(where, "empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (c.values_.count(full)) throw ConfigError(where, "duplicate key '" + full + "'");
      c.values_[full] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path.string(), "cannot open config file");
    return parse(is, path.string());
  }

  const std::string& origin() const noexcept { return origin_; }

  // "section.key=value" override; replaces or adds.
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like section.key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> find(const std::string& key) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(const std::string& key) const {
    auto v = find(key);
    if (!v) throw ConfigError(key, "required key is missing");
    return *v;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    return find(key).value_or(fallback);
  }

  double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const {
    auto v = find(key);
    return v ? to_double(key, *v) : fallback;
  }

  std::uint64_t get_u64(const std::string& key) const { return to_u64(key, get_string(key)); }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto v = find(key);
    return v ? to_u64(key, *v) : fallback;
  }

  std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_u64(key)); }
  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "yes" || *v == "1" || *v == "on") return true;
    if (*v == "false" || *v == "no" || *v == "0" || *v == "off") return false;
    throw ConfigError(key, "expected a boolean, got '" + *v + "'");
  }

  // Comma- or whitespace-separated reals.
  std::vector<double> get_doubles(const std::string& key) const {
    std::string s = get_string(key);
    for (char& ch : s)
      if (ch == ',') ch = ' ';
    std::istringstream is(s);
    std::vector<double> out;
    std::string tok;
    while (is >> tok) out.push_back(to_double(key, tok));
    if (out.empty()) throw ConfigError(key, "expected at least one number");
    return out;
  }

  void check_all_used() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError(k, "unknown key");
  }

  // Sorted by section, one "[section]" block each.
  std::string dump() const {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> by_section;
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      by_section[dot == std::string::npos ? "" : k.substr(0, dot)].emplace_back(
          dot == std::string::npos ? k : k.substr(dot + 1), v);
    }
    std::ostringstream os;
    bool first = true;
    for (const auto& [section, kvs] : by_section) {
      if (!first) os << '\n';
      first = false;
      if (!section.empty()) os << '[' << section << "]\n";
      for (const auto& [k, v] : kvs) os << k << " = " << v << '\n';
    }
    return os.str();
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw ConfigError(key, "expected a number, got '" + s + "'");
    }
    if (pos != s.size() || !std::isfinite(v)) throw ConfigError(key, "expected a finite number, got '" + s + "'");
    return v;
  }

  static std::uint64_t to_u64(const std::string& key, const std::string& s) {
    // Accept integral reals such as 1e5.
    const double d = to_double(key, s);
    if (d < 0.0 || d != std::floor(d) || d > 1.8e19)
      throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
    if (s.find_first_of(".eE") == std::string::npos) return std::stoull(s);
    return static_cast<std::uint64_t>(d);
  }

  std::string origin_ = "<config>";
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace bdk
