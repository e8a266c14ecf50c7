#pragma once

// Mascot Generic Format reader and canonical writer.
//
// Canonical form, as produced by serialize_mgf:
//   BEGIN IONS
//   TITLE=<id>
//   PEPMASS=<mz>[ <intensity>]
//   STRUCTUREID=<structure>        (only when set)
//   <other headers in source order>
//   <mz> <intensity>               (sorted by m/z, then intensity)
//   END IONS
//   <blank line>
// Numbers are written in fixed notation with the decimal count they were
// read with.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"
#include "sinspec/spectrum.hpp"

namespace sinspec {

inline constexpr int kDefaultMzDecimals = 6;
inline constexpr int kDefaultIntensityDecimals = 4;

namespace detail {

struct ParsedNumber {
    double value = 0.0;
    int decimals = 0;
};

/// Strict decimal parse; the whole token must be consumed.
inline bool parse_number(std::string_view tok, ParsedNumber& out) {
    if (tok.empty()) return false;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) return false;
    if (!std::isfinite(v)) return false;
    int frac = 0;
    auto dot = tok.find('.');
    auto exp = tok.find_first_of("eE");
    if (dot != std::string_view::npos) {
        auto end = exp == std::string_view::npos ? tok.size() : exp;
        frac = static_cast<int>(end - dot - 1);
    }
    if (exp != std::string_view::npos) {
        int e = 0;
        auto sub = tok.substr(exp + 1);
        if (!sub.empty() && sub.front() == '+') sub.remove_prefix(1);
        std::from_chars(sub.data(), sub.data() + sub.size(), e);
        frac = std::max(0, frac - e);
    }
    out = {v, frac};
    return true;
}

inline std::vector<std::string_view> tokens(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace detail

/// Parses every BEGIN IONS ... END IONS block. Blank lines and lines starting
/// with '#', ';' or '!' are allowed between blocks; anything else outside a
/// block is an error.
inline std::vector<Spectrum> parse_mgf(std::string_view text) {
    std::vector<Spectrum> out;
    std::unordered_set<std::string> ids;
    bool in_block = false;
    bool have_pepmass = false;
    bool have_title = false;
    std::size_t block_start = 0;
    Spectrum cur;
    const auto lines = lines_of(text);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
        const std::size_t lineno = ln + 1;
        const auto line = trim(lines[ln]);
        if (!in_block) {
            if (line.empty() || line.front() == '#' || line.front() == ';' || line.front() == '!') continue;
            if (line != "BEGIN IONS") throw ParseError(lineno, "expected BEGIN IONS, got '" + std::string(line) + "'");
            in_block = true;
            have_pepmass = have_title = false;
            block_start = lineno;
            cur = Spectrum{};
            continue;
        }
        if (line.empty()) continue;
        if (line == "BEGIN IONS") throw ParseError(lineno, "BEGIN IONS inside an open block");
        if (line == "END IONS") {
            if (!have_title) throw ParseError(lineno, "block starting at line " + std::to_string(block_start) + " has no TITLE");
            if (!have_pepmass)
                throw ParseError(lineno, "block starting at line " + std::to_string(block_start) + " has no PEPMASS");
            if (cur.fragments.empty()) throw ParseError(lineno, "spectrum '" + cur.id + "' has no fragment peaks");
            if (!ids.insert(cur.id).second) throw ParseError(lineno, "duplicate spectrum id '" + cur.id + "'");
            out.push_back(std::move(cur));
            cur = Spectrum{};
            in_block = false;
            continue;
        }
        auto eq = line.find('=');
        if (eq != std::string_view::npos) {
            auto key = std::string(trim(line.substr(0, eq)));
            auto val = trim(line.substr(eq + 1));
            if (key == "TITLE") {
                if (val.empty()) throw ParseError(lineno, "empty TITLE");
                cur.id = std::string(val);
                have_title = true;
            } else if (key == "PEPMASS") {
                auto toks = detail::tokens(val);
                if (toks.empty() || toks.size() > 2) throw ParseError(lineno, "malformed PEPMASS '" + std::string(val) + "'");
                detail::ParsedNumber mz, inten;
                if (!detail::parse_number(toks[0], mz) || !(mz.value > 0.0))
                    throw ParseError(lineno, "bad precursor m/z '" + std::string(toks[0]) + "'");
                cur.precursor.mz = mz.value;
                cur.precursor.mz_decimals = mz.decimals;
                if (toks.size() == 2) {
                    if (!detail::parse_number(toks[1], inten) || inten.value < 0.0)
                        throw ParseError(lineno, "bad precursor intensity '" + std::string(toks[1]) + "'");
                    cur.precursor.intensity = inten.value;
                    cur.precursor.intensity_decimals = inten.decimals;
                    cur.precursor_has_intensity = true;
                }
                have_pepmass = true;
            } else if (key == "STRUCTUREID") {
                cur.structure_id = std::string(val);
            } else {
                cur.metadata.emplace_back(std::move(key), std::string(val));
            }
            continue;
        }
        auto toks = detail::tokens(line);
        if (toks.size() != 2) throw ParseError(lineno, "peak line must be '<mz> <intensity>', got '" + std::string(line) + "'");
        detail::ParsedNumber mz, inten;
        if (!detail::parse_number(toks[0], mz)) throw ParseError(lineno, "non-numeric m/z '" + std::string(toks[0]) + "'");
        if (!detail::parse_number(toks[1], inten))
            throw ParseError(lineno, "non-numeric intensity '" + std::string(toks[1]) + "'");
        if (!(mz.value > 0.0)) throw ParseError(lineno, "m/z must be positive");
        if (inten.value < 0.0) throw ParseError(lineno, "intensity must be non-negative");
        cur.fragments.push_back({mz.value, inten.value, mz.decimals, inten.decimals});
    }
    if (in_block) throw ParseError(lines.size(), "unterminated block starting at line " + std::to_string(block_start));
    return out;
}

namespace detail {

inline std::string format_mz(const Peak& p) {
    return fixed(p.mz, p.mz_decimals >= 0 ? p.mz_decimals : kDefaultMzDecimals);
}
inline std::string format_intensity(const Peak& p) {
    return fixed(p.intensity, p.intensity_decimals >= 0 ? p.intensity_decimals : kDefaultIntensityDecimals);
}

}  // namespace detail

inline std::string serialize_mgf(const std::vector<Spectrum>& spectra) {
    std::string out;
    for (const auto& s : spectra) {
        out += "BEGIN IONS\nTITLE=" + s.id + "\nPEPMASS=" + detail::format_mz(s.precursor);
        if (s.precursor_has_intensity) out += " " + detail::format_intensity(s.precursor);
        out += "\n";
        if (!s.structure_id.empty()) out += "STRUCTUREID=" + s.structure_id + "\n";
        for (const auto& [k, v] : s.metadata) out += k + "=" + v + "\n";
        for (const auto& p : canonical_fragments(s))
            out += detail::format_mz(p) + " " + detail::format_intensity(p) + "\n";
        out += "END IONS\n\n";
    }
    return out;
}

}  // namespace sinspec
