#include "dxf/cli_config.hpp"

#include <fstream>

namespace dxf::cli {

namespace {

long long parse_int(const std::string& k, const std::string& v) {
    try {
        size_t pos = 0;
        long long r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + k + "': expected an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& k, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + k + "': expected a number, got '" + v + "'");
    }
}

}  // namespace

long long KeyValues::get_int(const std::string& k, long long def) const {
    return has(k) ? parse_int(k, kv.at(k)) : def;
}

double KeyValues::get_double(const std::string& k, double def) const {
    return has(k) ? parse_double(k, kv.at(k)) : def;
}

bool KeyValues::get_bool(const std::string& k, bool def) const {
    if (!has(k)) return def;
    const std::string& v = kv.at(k);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("key '" + k + "': expected a boolean, got '" + v + "'");
}

KeyValues parse_args(const std::vector<std::string>& args) {
    KeyValues out;
    for (const auto& raw : args) {
        std::string a = raw;
        if (a.rfind("--", 0) == 0) a = a.substr(2);
        auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("malformed argument '" + raw + "', expected key=value");
        out.kv[a.substr(0, eq)] = a.substr(eq + 1);
    }
    return out;
}

KeyValues parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    KeyValues out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        out.kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

void merge_defaults(KeyValues& primary, const KeyValues& fallback) {
    for (const auto& [k, v] : fallback.kv)
        if (!primary.has(k)) primary.kv[k] = v;
}

void check_schema(const KeyValues& kvs, const std::set<std::string>& allowed, const std::string& cmd) {
    for (const auto& [k, v] : kvs.kv)
        if (allowed.count(k) == 0) throw ConfigError("unknown key '" + k + "' for subcommand '" + cmd + "'");
}

}  // namespace dxf::cli
