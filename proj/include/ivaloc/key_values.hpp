#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ivaloc {

/// Flat, ordered `dotted.key -> value` map used for configs and file headers.
using KeyValues = std::map<std::string, std::string>;

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

double parse_double(std::string_view text, std::string_view key);
std::int64_t parse_int(std::string_view text, std::string_view key);
std::uint64_t parse_uint(std::string_view text, std::string_view key);
bool parse_bool(std::string_view text, std::string_view key);

double get_double(const KeyValues& kv, const std::string& key);
std::size_t get_size(const KeyValues& kv, const std::string& key);
std::string get_string(const KeyValues& kv, const std::string& key);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

/// "k=v\n" lines in key order.
std::string to_text(const KeyValues& kv);
KeyValues parse_text(std::string_view text);

/// FNV-1a 64-bit digest rendered as 16 lowercase hex digits.
std::string hash_hex(std::string_view text);

}  // namespace ivaloc
