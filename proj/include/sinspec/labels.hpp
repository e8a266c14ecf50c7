#pragma once

// Molecule labels: fingerprints ("structure_id<TAB>hex") and the ten
// regression properties (tab-separated table with a fixed header).

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"
#include "sinspec/spectrum.hpp"

namespace sinspec {

inline constexpr std::size_t kNumProperties = 10;

/// Column keys of the property table, in order.
inline constexpr std::array<std::string_view, kNumProperties> kPropertyKeys = {
    "atomic_logp",     "h_bond_acceptors", "h_bond_donors", "polar_surface_area", "rotatable_bonds",
    "aromatic_rings",  "aliphatic_rings",  "heteroatoms",   "fraction_sp3",       "qed"};

inline constexpr std::array<std::string_view, kNumProperties> kPropertyNames = {
    "atomic log P",
    "number of hydrogen bond acceptors",
    "number of hydrogen bond donors",
    "polar surface area",
    "number of rotatable bonds",
    "number of aromatic rings",
    "number of aliphatic rings",
    "number of heteroatoms",
    "fraction of sp3 carbons",
    "quantitative estimate of druglikeness"};

using PropertyVector = std::array<double, kNumProperties>;

/// Fixed-width bit set. Hex text is read left to right as a bit string: bit
/// 4k+j is bit (3-j) of the k-th hex digit.
class Fingerprint {
public:
    Fingerprint() = default;
    explicit Fingerprint(std::size_t width) : width_(width), words_((width + 63) / 64, 0) {}

    static Fingerprint from_bits(std::size_t width, const std::vector<std::size_t>& on) {
        Fingerprint f(width);
        for (auto b : on) f.set(b);
        return f;
    }

    static Fingerprint from_hex(std::string_view hex) {
        Fingerprint f(hex.size() * 4);
        for (std::size_t k = 0; k < hex.size(); ++k) {
            const char c = hex[k];
            int v;
            if (c >= '0' && c <= '9') v = c - '0';
            else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
            else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
            else throw LoadError("invalid hex digit '" + std::string(1, c) + "' in fingerprint");
            for (int j = 0; j < 4; ++j)
                if (v & (8 >> j)) f.set(4 * k + static_cast<std::size_t>(j));
        }
        return f;
    }

    std::string to_hex() const {
        std::string out;
        for (std::size_t k = 0; k < width_ / 4; ++k) {
            int v = 0;
            for (int j = 0; j < 4; ++j)
                if (test(4 * k + static_cast<std::size_t>(j))) v |= 8 >> j;
            out.push_back("0123456789abcdef"[v]);
        }
        return out;
    }

    std::size_t width() const noexcept { return width_; }
    void set(std::size_t i) {
        if (i >= width_) throw ContractError("bit " + std::to_string(i) + " outside fingerprint width " + std::to_string(width_));
        words_[i / 64] |= std::uint64_t{1} << (i % 64);
    }
    bool test(std::size_t i) const { return (words_.at(i / 64) >> (i % 64)) & 1u; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
        return n;
    }
    const std::vector<std::uint64_t>& words() const noexcept { return words_; }

    friend bool operator==(const Fingerprint&, const Fingerprint&) = default;

private:
    std::size_t width_ = 0;
    std::vector<std::uint64_t> words_;
};

struct MoleculeRecord {
    std::string structure_id;
    Fingerprint fingerprint;
    PropertyVector properties{};
};

class LabelTable {
public:
    void insert(MoleculeRecord r) {
        if (!records_.empty() && r.fingerprint.width() != width_)
            throw LoadError("fingerprint width " + std::to_string(r.fingerprint.width()) + " for " + r.structure_id +
                            " differs from " + std::to_string(width_));
        width_ = r.fingerprint.width();
        auto key = r.structure_id;
        if (!records_.emplace(key, std::move(r)).second) throw LoadError("duplicate structure id " + key);
    }

    const MoleculeRecord& at(const std::string& structure_id) const {
        auto it = records_.find(structure_id);
        if (it == records_.end()) throw LoadError("unknown structure id " + structure_id);
        return it->second;
    }
    bool contains(const std::string& structure_id) const { return records_.count(structure_id) != 0; }
    std::size_t size() const noexcept { return records_.size(); }
    std::size_t fingerprint_width() const noexcept { return width_; }
    const std::map<std::string, MoleculeRecord>& records() const noexcept { return records_; }

    /// Throws listing every structure id referenced by `spectra` but absent here.
    void check_resolves(const std::vector<Spectrum>& spectra) const {
        std::set<std::string> missing;
        for (const auto& s : spectra)
            if (!contains(s.structure_id)) missing.insert(s.structure_id.empty() ? "<empty>" : s.structure_id);
        if (missing.empty()) return;
        std::string msg = "unresolved structure ids:";
        for (const auto& m : missing) msg += " " + m;
        throw LoadError(msg);
    }

private:
    std::map<std::string, MoleculeRecord> records_;
    std::size_t width_ = 0;
};

inline std::string property_header() {
    std::string h = "structure_id";
    for (auto k : kPropertyKeys) h += "\t" + std::string(k);
    return h;
}

/// Parses both label files. Structure ids must match one-to-one between them.
inline LabelTable load_labels(std::string_view fingerprint_text, std::string_view property_text) {
    std::map<std::string, Fingerprint> fps;
    std::size_t lineno = 0;
    for (auto line : lines_of(fingerprint_text)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        auto cols = split_view(line, '\t');
        if (cols.size() != 2) throw ParseError(lineno, "fingerprint line needs 'structure_id<TAB>hex'");
        auto id = std::string(trim(cols[0]));
        if (!fps.emplace(id, Fingerprint::from_hex(trim(cols[1]))).second)
            throw ParseError(lineno, "duplicate fingerprint for " + id);
    }

    LabelTable table;
    lineno = 0;
    bool header_seen = false;
    std::set<std::string> with_props;
    for (auto line : lines_of(property_text)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        auto cols = split_view(line, '\t');
        if (!header_seen) {
            if (line != property_header())
                throw ParseError(lineno, "property header must be '" + property_header() + "'");
            header_seen = true;
            continue;
        }
        if (cols.size() != kNumProperties + 1)
            throw ParseError(lineno, "expected " + std::to_string(kNumProperties) + " property values, got " +
                                         std::to_string(cols.size() - 1));
        MoleculeRecord r;
        r.structure_id = std::string(trim(cols[0]));
        for (std::size_t k = 0; k < kNumProperties; ++k) {
            auto tok = std::string(trim(cols[k + 1]));
            char* end = nullptr;
            double v = std::strtod(tok.c_str(), &end);
            if (tok.empty() || end != tok.c_str() + tok.size() || !std::isfinite(v))
                throw ParseError(lineno, "property " + std::string(kPropertyKeys[k]) + " is not a finite number: '" + tok + "'");
            r.properties[k] = v;
        }
        auto it = fps.find(r.structure_id);
        if (it == fps.end()) throw LoadError("structure " + r.structure_id + " has properties but no fingerprint");
        r.fingerprint = it->second;
        with_props.insert(r.structure_id);
        table.insert(std::move(r));
    }
    if (!header_seen && !fps.empty()) throw ParseError(1, "property table lacks a header");
    for (const auto& [id, fp] : fps)
        if (!with_props.count(id)) throw LoadError("structure " + id + " has a fingerprint but no properties");
    return table;
}

inline std::string fingerprint_text(const LabelTable& t) {
    std::string out;
    for (const auto& [id, r] : t.records()) out += id + "\t" + r.fingerprint.to_hex() + "\n";
    return out;
}

inline std::string property_text(const LabelTable& t) {
    std::string out = property_header() + "\n";
    for (const auto& [id, r] : t.records()) {
        out += id;
        for (double v : r.properties) out += "\t" + general(v, 17);
        out += "\n";
    }
    return out;
}

}  // namespace sinspec
