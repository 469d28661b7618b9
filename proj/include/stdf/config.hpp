#pragma once

// Key-value text configuration: one `key = value` per line, '#' comments.
// The config hash is order-independent so that logically identical files
// produce identical artifact fingerprints.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stdf {

class RunConfig {
public:
    RunConfig() = default;

    static RunConfig parse_file(const std::string& path);
    static RunConfig parse_text(const std::string& text);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double get_num(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_list(const std::string& key,
                                 const std::vector<double>& fallback) const;

    // FNV-1a over sorted canonical "key=value" lines
    uint64_t hash() const;
    std::string hash_hex() const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t v);

}  // namespace stdf
