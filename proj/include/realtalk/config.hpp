#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rt::cfg {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Flat dotted-key configuration: one "key = value" per line, '#' comments.
// Unknown keys are rejected when a schema is supplied.
class Config {
 public:
  static Config load_file(const std::string& path);
  static Config parse(const std::string& text);

  void set(const std::string& key, const std::string& value);
  void set_kv(const std::string& kv);  // "key=value" form used by --set

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& dflt) const;
  double num(const std::string& key, double dflt) const;
  int64_t integer(const std::string& key, int64_t dflt) const;
  bool flag(const std::string& key, bool dflt) const;

  // Throws ConfigError naming the first unknown key.
  void require_known(const std::vector<std::string>& allowed) const;

  std::string dump() const;  // sorted "key = value" lines
  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace rt::cfg
