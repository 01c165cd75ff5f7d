#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace dca {

// `key = value` UTF-8 config file; '#' starts a comment. Unknown keys are
// kept so a digest covers the whole file.
struct KVConfig {
    std::map<std::string, std::string> values;

    static KVConfig load(const std::string& path);
    static KVConfig parse(const std::string& text);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    std::string canonical() const;  // sorted "key=value" lines
    std::string digest() const;    // hex digest of the canonical form
};

} // namespace dca
