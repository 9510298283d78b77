#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

// Flat key/value configuration text: one `key = value` per line, `#` starts a
// comment, blank lines are ignored.
namespace msggan::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using KeyValues = std::map<std::string, std::string>;

// Throws ConfigError on a line without '=', an empty key or a duplicate key.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "config");
KeyValues read_key_values(const std::filesystem::path& file);

// Typed conversions; `key` only appears in error messages.
double to_double(const std::string& key, const std::string& value);
std::int64_t to_int(const std::string& key, const std::string& value);
std::uint64_t to_uint(const std::string& key, const std::string& value);
bool to_bool(const std::string& key, const std::string& value);
std::vector<std::int64_t> to_int_list(const std::string& key, const std::string& value);
std::vector<std::uint64_t> to_uint_list(const std::string& key, const std::string& value);

// Moves the value of `key` out of kv; false when absent.
bool take(KeyValues& kv, const std::string& key, std::string& value);
// Throws ConfigError naming every key left in kv.
void reject_unknown(const KeyValues& kv, const std::string& context);

}  // namespace msggan::config
