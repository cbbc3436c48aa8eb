#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pushlab/util.hpp"

namespace pushlab::config {

// Key/value run settings: `key = value` lines, '#' comments. Values from the
// command line override the file. Every key actually consulted is recorded
// with the value used, so long runs can persist their fully resolved config.
class RunConfig {
 public:
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const size_t eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: missing '=' at " + path + ":" + std::to_string(lineno));
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config: empty key at " + path + ":" + std::to_string(lineno));
      values_[key] = value;
    }
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) {
    const auto it = values_.find(key);
    const std::string v = it == values_.end() ? fallback : it->second;
    resolved_[key] = v;
    return v;
  }

  double get_double(const std::string& key, double fallback) {
    const std::string v = get(key, format_double(fallback));
    try {
      return std::stod(v);
    } catch (...) {
      throw ConfigError("config: '" + key + "' is not a number: " + v);
    }
  }

  long get_long(const std::string& key, long fallback) {
    const std::string v = get(key, std::to_string(fallback));
    try {
      return std::stol(v);
    } catch (...) {
      throw ConfigError("config: '" + key + "' is not an integer: " + v);
    }
  }

  int get_int(const std::string& key, int fallback) {
    return static_cast<int>(get_long(key, fallback));
  }

  bool get_bool(const std::string& key, bool fallback) {
    const std::string v = get(key, fallback ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: '" + key + "' is not a boolean: " + v);
  }

  std::vector<int> get_int_list(const std::string& key, const std::string& fallback) {
    const std::string v = get(key, fallback);
    std::vector<int> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      try {
        out.push_back(std::stoi(tok));
      } catch (...) {
        throw ConfigError("config: '" + key + "' is not an integer list: " + v);
      }
    }
    return out;
  }

  // reject settings outside the command's vocabulary
  void require_known(const std::set<std::string>& allowed) const {
    for (const auto& [key, value] : values_) {
      if (!allowed.count(key))
        throw ConfigError("config: unknown key '" + key + "'");
    }
  }

  void write_resolved(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("config: cannot write " + path);
    for (const auto& [key, value] : resolved_) out << key << " = " << value << "\n";
  }

  const std::map<std::string, std::string>& resolved() const { return resolved_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return buf;
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
};

}  // namespace pushlab::config
