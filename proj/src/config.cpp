#include "msggan/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace msggan::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + what);
}

std::vector<std::string> split_commas(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ConfigError(where + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("config: cannot read " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str(), file.string());
}

double to_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    bad(key, value, "a finite number");
  }
  return v;
}

std::int64_t to_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (value.empty() || *end != '\0' || errno == ERANGE) bad(key, value, "an integer");
  return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  if (value.empty() || value[0] == '-') bad(key, value, "a non-negative integer");
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) bad(key, value, "a non-negative integer");
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  bad(key, value, "a boolean");
}

std::vector<std::int64_t> to_int_list(const std::string& key, const std::string& value) {
  std::vector<std::int64_t> out;
  for (const auto& item : split_commas(value)) out.push_back(to_int(key, item));
  if (out.empty()) bad(key, value, "a comma-separated integer list");
  return out;
}

std::vector<std::uint64_t> to_uint_list(const std::string& key, const std::string& value) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_commas(value)) out.push_back(to_uint(key, item));
  if (out.empty()) bad(key, value, "a comma-separated list of non-negative integers");
  return out;
}

bool take(KeyValues& kv, const std::string& key, std::string& value) {
  const auto it = kv.find(key);
  if (it == kv.end()) return false;
  value = it->second;
  kv.erase(it);
  return true;
}

void reject_unknown(const KeyValues& kv, const std::string& context) {
  if (kv.empty()) return;
  std::string keys;
  for (const auto& [k, v] : kv) keys += (keys.empty() ? "" : ", ") + k;
  throw ConfigError(context + ": unknown key(s): " + keys);
}

}  // namespace msggan::config
