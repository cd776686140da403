#include "ivaloc/key_values.hpp"

#include <charconv>
#include <cstdio>

#include "ivaloc/error.hpp"

namespace ivaloc {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

template <typename T>
T parse_number(std::string_view text, std::string_view key, const char* what) {
    const std::string t = trim(text);
    T v{};
    const char* first = t.data();
    if (!t.empty() && t[0] == '+') ++first;
    auto res = std::from_chars(first, t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw ConfigError("'" + std::string(key) + "': expected " + what + ", got '" + std::string(text) + "'");
    return v;
}

}  // namespace

double parse_double(std::string_view text, std::string_view key) { return parse_number<double>(text, key, "a number"); }
std::int64_t parse_int(std::string_view text, std::string_view key) {
    return parse_number<std::int64_t>(text, key, "an integer");
}
std::uint64_t parse_uint(std::string_view text, std::string_view key) {
    return parse_number<std::uint64_t>(text, key, "a non-negative integer");
}

bool parse_bool(std::string_view text, std::string_view key) {
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw ConfigError("'" + std::string(key) + "': expected a boolean, got '" + std::string(text) + "'");
}

std::string get_string(const KeyValues& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
}

double get_double(const KeyValues& kv, const std::string& key) { return parse_double(get_string(kv, key), key); }
std::size_t get_size(const KeyValues& kv, const std::string& key) { return parse_uint(get_string(kv, key), key); }

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = text.find(sep, start);
        out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string trim(std::string_view text) {
    const auto ws = " \t\r\n";
    const auto b = text.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = text.find_last_not_of(ws);
    return std::string(text.substr(b, e - b + 1));
}

std::string to_text(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

KeyValues parse_text(std::string_view text) {
    KeyValues kv;
    for (const auto& line : split(text, '\n')) {
        const std::string l = trim(line);
        if (l.empty()) continue;
        const auto eq = l.find('=');
        if (eq == std::string::npos) throw ConfigError("malformed key=value line: '" + l + "'");
        kv[trim(l.substr(0, eq))] = trim(l.substr(eq + 1));
    }
    return kv;
}

std::string hash_hex(std::string_view text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace ivaloc
