#include "hcrn/kv_config.hpp"

#include <fstream>
#include <sstream>

namespace hcrn {

namespace {

std::string trim(const std::string& s) {
  const auto* ws = " \t\r";
  auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value', got '" + line + "'");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
    if (cfg.values_.count(key)) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    }
    cfg.values_[key] = {value, number};
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

const KeyValueConfig::Value* KeyValueConfig::lookup(const std::string& key) {
  taken_[key] = true;
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

void KeyValueConfig::fail(const std::string& key, const Value& v, const std::string& expected) const {
  throw ConfigError(origin_ + ":" + std::to_string(v.line) + ": key '" + key + "' expects " + expected + ", got '" +
                    v.text + "'");
}

std::string KeyValueConfig::take_string(const std::string& key, const std::string& fallback) {
  const auto* v = lookup(key);
  return v ? v->text : fallback;
}

std::int64_t KeyValueConfig::take_int(const std::string& key, std::int64_t fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v->text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v->text.size()) fail(key, *v, "an integer");
  return out;
}

std::size_t KeyValueConfig::take_size(const std::string& key, std::size_t fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  auto out = take_int(key, 0);
  if (out < 0) fail(key, *v, "a non-negative integer");
  return static_cast<std::size_t>(out);
}

double KeyValueConfig::take_double(const std::string& key, double fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v->text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v->text.size()) fail(key, *v, "a number");
  return out;
}

bool KeyValueConfig::take_bool(const std::string& key, bool fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  if (v->text == "true" || v->text == "1" || v->text == "yes") return true;
  if (v->text == "false" || v->text == "0" || v->text == "no") return false;
  fail(key, *v, "true or false");
}

KeyValueConfig KeyValueConfig::extract(const std::string& prefix) {
  KeyValueConfig out;
  out.origin_ = origin_;
  for (const auto& [key, v] : values_) {
    if (key.size() > prefix.size() && key.compare(0, prefix.size(), prefix) == 0) {
      out.values_[key.substr(prefix.size())] = v;
      taken_[key] = true;
    }
  }
  return out;
}

void KeyValueConfig::finish() const {
  std::string unknown;
  for (const auto& [key, v] : values_) {
    if (!taken_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key + " (line " + std::to_string(v.line) + ")";
  }
  if (!unknown.empty()) throw ConfigError(origin_ + ": unknown keys: " + unknown);
}

}  // namespace hcrn
