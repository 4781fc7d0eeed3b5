#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avg/error.hpp"

namespace avg::cfg {

// Flat key=value configuration with a declared schema. Files use INI-style
// text: `key = value` lines, optional `[section]` headers that prefix the
// keys that follow ("section.key"), comments with '#' or ';'. Keys not
// declared ahead of time are rejected, both from files and overrides.
class Config {
 public:
  void declare(const std::string& key, const std::string& default_value,
               const std::string& doc);

  bool is_declared(const std::string& key) const { return schema_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  void apply_override(const std::string& spec);  // "key=value"

  const std::string& get_str(const std::string& key) const;
  double get_num(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // resolved key = value lines, sorted; stable across runs
  std::string canonical() const;
  uint64_t hash() const;
  void echo_to(const std::string& path) const;

  std::vector<std::string> keys() const;
  const std::string& doc(const std::string& key) const;

 private:
  struct Entry {
    std::string value;
    std::string doc;
  };
  std::map<std::string, Entry> schema_;
};

// Every key the pipeline understands, with desk-scale defaults.
Config default_config();

// Budget profiles: named override bundles applied before user overrides.
void apply_profile(Config& c, const std::string& profile);

}  // namespace avg::cfg
