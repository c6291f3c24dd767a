#include "squad/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace squad {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(trim(item));
    return parts;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

double parse_double(const std::string& text, const std::string& what) {
    const std::string t = trim(text);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size())
        throw std::invalid_argument(what + ": expected a number, got '" + text + "'");
    return v;
}

long long parse_int(const std::string& text, const std::string& what) {
    const std::string t = trim(text);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc{} || ptr != t.data() + t.size())
        throw std::invalid_argument(what + ": expected an integer, got '" + text + "'");
    return v;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
    std::vector<double> out;
    for (const auto& part : split_csv(text)) {
        if (part.empty()) continue;
        out.push_back(parse_double(part, what));
    }
    return out;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source) {
    KeyValueConfig cfg;
    cfg.source_ = source;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": empty key");
        cfg.set(key, trim(t.substr(eq + 1)));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

std::optional<std::string> KeyValueConfig::find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    return find(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto v = find(key);
    return v ? parse_double(*v, source_ + ": " + key) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
    auto v = find(key);
    return v ? parse_int(*v, source_ + ": " + key) : fallback;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& fallback) const {
    auto v = find(key);
    return v ? parse_double_list(*v, source_ + ": " + key) : fallback;
}

std::vector<long long> KeyValueConfig::get_int_list(const std::string& key,
                                                    const std::vector<long long>& fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    std::vector<long long> out;
    for (const auto& part : split_csv(*v)) {
        if (!part.empty()) out.push_back(parse_int(part, source_ + ": " + key));
    }
    return out;
}

std::string KeyValueConfig::require_string(const std::string& key) const {
    auto v = find(key);
    if (!v) throw std::invalid_argument(source_ + ": missing key '" + key + "'");
    return *v;
}

long long KeyValueConfig::require_int(const std::string& key) const {
    return parse_int(require_string(key), source_ + ": " + key);
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    if (values_.count(key) == 0) order_.push_back(key);
    values_[key] = value;
}

void KeyValueConfig::set(const std::string& key, double value) { set(key, format_double(value)); }

void KeyValueConfig::set(const std::string& key, long long value) { set(key, std::to_string(value)); }

std::string KeyValueConfig::to_string() const {
    std::string out;
    for (const auto& key : order_) out += key + "=" + values_.at(key) + "\n";
    return out;
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_string();
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace squad
