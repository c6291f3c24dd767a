#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace squad {

/// Ordered `key = value` text store. Blank lines and lines starting with '#'
/// are ignored when parsing; whitespace around keys and values is trimmed.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& source = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool contains(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> find(const std::string& key) const;

    /// Typed getters throw std::invalid_argument naming the key on malformed values.
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<long long> get_int_list(const std::string& key, const std::vector<long long>& fallback) const;

    std::string require_string(const std::string& key) const;
    long long require_int(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, double value);
    void set(const std::string& key, long long value);
    void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }
    void set(const std::string& key, std::size_t value) { set(key, static_cast<long long>(value)); }

    /// Serializes as `key=value` lines in insertion order.
    std::string to_string() const;
    void save(const std::filesystem::path& path) const;

    const std::vector<std::string>& keys() const { return order_; }

private:
    std::string source_ = "<config>";
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double v);

double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);
std::vector<double> parse_double_list(const std::string& text, const std::string& what);

}  // namespace squad
