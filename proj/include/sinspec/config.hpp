#pragma once

// Flat "key=value" text used for model configs and run configs. Lines
// starting with '#' are comments.

#include <cstdint>
#include <cstdlib>
#include <map>
#include <string>
#include <string_view>

#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"

namespace sinspec {

class KeyValues {
public:
    static KeyValues parse(std::string_view text) {
        KeyValues kv;
        std::size_t lineno = 0;
        for (auto line : lines_of(text)) {
            ++lineno;
            line = trim(line);
            if (line.empty() || line.front() == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string_view::npos) throw ParseError(lineno, "expected key=value, got '" + std::string(line) + "'");
            kv.set(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
        }
        return kv;
    }

    void set(const std::string& k, std::string v) { values_[k] = std::move(v); }
    bool has(const std::string& k) const { return values_.count(k) != 0; }

    const std::string& str(const std::string& k) const {
        auto it = values_.find(k);
        if (it == values_.end()) throw ConfigError("missing config key '" + k + "'");
        return it->second;
    }
    std::string str_or(const std::string& k, const std::string& dflt) const { return has(k) ? str(k) : dflt; }

    double real(const std::string& k) const {
        const auto& s = str(k);
        char* end = nullptr;
        double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size()) throw ConfigError("config key '" + k + "' is not a number: " + s);
        return v;
    }
    double real_or(const std::string& k, double dflt) const { return has(k) ? real(k) : dflt; }

    std::uint64_t integer(const std::string& k) const {
        const auto& s = str(k);
        char* end = nullptr;
        auto v = std::strtoull(s.c_str(), &end, 10);
        if (s.empty() || end != s.c_str() + s.size() || s.front() == '-')
            throw ConfigError("config key '" + k + "' is not a non-negative integer: " + s);
        return v;
    }
    std::uint64_t integer_or(const std::string& k, std::uint64_t dflt) const { return has(k) ? integer(k) : dflt; }

    const std::map<std::string, std::string>& entries() const { return values_; }

    /// "key=value" lines in key order; parse(text()) reproduces the entries.
    std::string text() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace sinspec
