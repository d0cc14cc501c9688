#pragma once

// Flat "key = value" text files. '#' starts a comment; blank lines are ignored.
// Consumers take the keys they know and call finish() so leftovers are errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace hcrn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  bool empty() const { return values_.empty(); }
  void set(const std::string& key, const std::string& value) { values_[key] = {value, 0}; }

  // Each accessor marks the key as consumed and returns `fallback` when absent.
  std::string take_string(const std::string& key, const std::string& fallback);
  std::int64_t take_int(const std::string& key, std::int64_t fallback);
  std::size_t take_size(const std::string& key, std::size_t fallback);
  double take_double(const std::string& key, double fallback);
  bool take_bool(const std::string& key, bool fallback);

  // Moves every "<prefix>key" entry into a new config as "key" and marks it taken here.
  KeyValueConfig extract(const std::string& prefix);

  // Throws ConfigError naming every key that was never taken.
  void finish() const;

 private:
  struct Value {
    std::string text;
    int line = 0;
  };
  const Value* lookup(const std::string& key);
  [[noreturn]] void fail(const std::string& key, const Value& v, const std::string& expected) const;

  std::string origin_;
  std::map<std::string, Value> values_;
  std::map<std::string, bool> taken_;
};

}  // namespace hcrn
