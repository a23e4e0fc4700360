#pragma once

// Key=value run configuration: plain-text config file plus command-line
// overrides (overrides win). Every key is validated against the closed
// schema of its subcommand.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dxf/common.hpp"

namespace dxf::cli {

struct KeyValues {
    std::map<std::string, std::string> kv;

    bool has(const std::string& k) const { return kv.count(k) > 0; }

    std::string get(const std::string& k, const std::string& def) const {
        auto it = kv.find(k);
        return it == kv.end() ? def : it->second;
    }

    std::string require(const std::string& k) const {
        auto it = kv.find(k);
        if (it == kv.end()) throw ConfigError("missing required key '" + k + "'");
        return it->second;
    }

    long long get_int(const std::string& k, long long def) const;
    double get_double(const std::string& k, double def) const;
    bool get_bool(const std::string& k, bool def) const;
};

// Parses "key=value" / "--key=value" arguments.
KeyValues parse_args(const std::vector<std::string>& args);

KeyValues parse_config_file(const std::string& path);

// Inserts fallback entries that are absent from primary.
void merge_defaults(KeyValues& primary, const KeyValues& fallback);

void check_schema(const KeyValues& kvs, const std::set<std::string>& allowed, const std::string& cmd);

}  // namespace dxf::cli
