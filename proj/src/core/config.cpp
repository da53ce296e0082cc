#include "realtalk/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace rt::cfg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    c.entries_[key] = val;
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

void Config::set_kv(const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--set expects key=value, got '" + kv + "'");
  std::string key = trim(kv.substr(0, eq));
  if (key.empty()) throw ConfigError("--set: empty key in '" + kv + "'");
  entries_[key] = trim(kv.substr(eq + 1));
}

std::string Config::str(const std::string& key, const std::string& dflt) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? dflt : it->second;
}

double Config::num(const std::string& key, double dflt) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return dflt;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected number, got '" +
                      it->second + "'");
  }
}

int64_t Config::integer(const std::string& key, int64_t dflt) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return dflt;
  try {
    size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected integer, got '" +
                      it->second + "'");
  }
}

bool Config::flag(const std::string& key, bool dflt) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return dflt;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v +
                    "'");
}

void Config::require_known(const std::vector<std::string>& allowed) const {
  for (const auto& [key, value] : entries_) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [key, value] : entries_)
    out += key + " = " + value + "\n";
  return out;
}

}  // namespace rt::cfg
