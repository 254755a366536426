#pragma once

// INI-style run configuration: [section] headers, key = value lines and
// '#' comments. Readers mark the keys they consume so anything left over
// can be rejected as unknown.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace strainflow::cli {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& where) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) throw ConfigError(where + ": cannot parse '" + text + "'");
    return value;
}

}  // namespace detail

class Config;

/// One [section]; every accessor records the key as consumed.
class Section {
public:
    Section() = default;
    Section(std::string name, std::map<std::string, std::string> values) : name_(std::move(name)), values_(std::move(values)) {}

    const std::string& name() const noexcept { return name_; }
    bool has(const std::string& key) const { return values_.contains(key); }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto* v = lookup(key);
        return v ? *v : fallback;
    }
    std::string require_string(const std::string& key) const {
        const auto* v = lookup(key);
        if (!v) throw ConfigError("[" + name_ + "] missing required key '" + key + "'");
        return *v;
    }
    double get_double(const std::string& key, double fallback) const {
        const auto* v = lookup(key);
        return v ? detail::parse_number<double>(*v, where(key)) : fallback;
    }
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        const auto* v = lookup(key);
        return v ? detail::parse_number<std::int64_t>(*v, where(key)) : fallback;
    }
    std::size_t get_count(const std::string& key, std::size_t fallback) const {
        const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
        if (v < 0) throw ConfigError(where(key) + ": must be non-negative");
        return static_cast<std::size_t>(v);
    }
    bool get_bool(const std::string& key, bool fallback) const {
        const auto* v = lookup(key);
        if (!v) return fallback;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw ConfigError(where(key) + ": expected true/false, got '" + *v + "'");
    }
    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
        const auto* v = lookup(key);
        if (!v) return fallback;
        std::vector<double> out;
        for (const std::string& item : detail::split(*v, ',')) out.push_back(detail::parse_number<double>(item, where(key)));
        return out;
    }
    std::vector<std::size_t> get_counts(const std::string& key, std::vector<std::size_t> fallback) const {
        const auto* v = lookup(key);
        if (!v) return fallback;
        std::vector<std::size_t> out;
        for (const std::string& item : detail::split(*v, ',')) out.push_back(detail::parse_number<std::size_t>(item, where(key)));
        return out;
    }
    std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const {
        const auto* v = lookup(key);
        return v ? detail::split(*v, ',') : fallback;
    }

    const std::map<std::string, std::string>& values() const noexcept { return values_; }
    std::vector<std::string> unused() const {
        std::vector<std::string> out;
        for (const auto& [k, _] : values_)
            if (!used_.contains(k)) out.push_back(k);
        return out;
    }

private:
    const std::string* lookup(const std::string& key) const {
        used_.insert(key);
        const auto it = values_.find(key);
        return it == values_.end() ? nullptr : &it->second;
    }
    std::string where(const std::string& key) const { return "[" + name_ + "] " + key; }

    std::string name_;
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

class Config {
public:
    static Config parse(std::istream& in, std::filesystem::path base_dir = ".") {
        Config cfg;
        cfg.base_dir_ = std::move(base_dir);
        std::map<std::string, std::map<std::string, std::string>> raw;
        std::string current = "global";
        raw[current];
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const std::string at = "line " + std::to_string(lineno);
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(at + ": malformed section header");
                current = detail::trim(line.substr(1, line.size() - 2));
                if (current.empty()) throw ConfigError(at + ": empty section name");
                raw[current];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(at + ": expected key = value");
            const std::string key = detail::trim(line.substr(0, eq));
            const std::string value = detail::trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(at + ": empty key");
            if (!raw[current].emplace(key, value).second)
                throw ConfigError(at + ": duplicate key '" + key + "' in [" + current + "]");
        }
        for (auto& [name, values] : raw) cfg.sections_.emplace(name, Section(name, std::move(values)));
        return cfg;
    }

    static Config parse_string(const std::string& text) {
        std::istringstream in(text);
        return parse(in);
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
        return parse(in, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
    }

    /// The named section; an empty one when absent.
    const Section& section(const std::string& name) const {
        requested_.insert(name);
        const auto it = sections_.find(name);
        if (it != sections_.end()) return it->second;
        return empty_.try_emplace(name, Section(name, {})).first->second;
    }
    bool has_section(const std::string& name) const { return sections_.contains(name); }

    /// Paths in the config are relative to the config file.
    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir_ / path;
    }

    /// Throws on sections nobody asked for and keys nobody read.
    void reject_unknown() const {
        std::string problems;
        for (const auto& [name, sec] : sections_) {
            if (!requested_.contains(name)) {
                if (!sec.values().empty()) problems += " unknown section [" + name + "];";
                continue;
            }
            for (const std::string& key : sec.unused()) problems += " unknown key '" + key + "' in [" + name + "];";
        }
        if (!problems.empty()) throw ConfigError("config:" + problems);
    }

    /// Sections and values in sorted order, for manifests.
    const std::map<std::string, Section>& sections() const noexcept { return sections_; }

private:
    std::filesystem::path base_dir_ = ".";
    std::map<std::string, Section> sections_;
    mutable std::set<std::string> requested_;
    mutable std::map<std::string, Section> empty_;
};

}  // namespace strainflow::cli
