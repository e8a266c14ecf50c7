#pragma once

// Structure-disjoint train / known / novel partition.
//
// Novel structures are sampled first and take all of their spectra with them.
// Known spectra are then sampled from what remains, one spectrum at a time,
// only while the spectrum's structure keeps at least one spectrum in train.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"
#include "sinspec/rng.hpp"
#include "sinspec/spectrum.hpp"

namespace sinspec {

enum class SplitName { Train, Known, Novel };

inline const char* split_label(SplitName s) {
    switch (s) {
        case SplitName::Train: return "train";
        case SplitName::Known: return "known";
        case SplitName::Novel: return "novel";
    }
    return "?";
}

struct SplitCounts {
    std::size_t novel_structures = 0;
    std::size_t known_spectra = 0;
};

struct SplitAssignment {
    std::set<std::string> train_spectra, known_spectra, novel_spectra;
    std::set<std::string> train_structures, known_structures, novel_structures;
    std::map<std::string, SplitName> by_spectrum;
};

inline SplitAssignment split_dataset(const std::vector<Spectrum>& spectra, SplitCounts counts, std::uint64_t seed) {
    std::map<std::string, std::vector<std::string>> spectra_of;  // structure -> spectrum ids, sorted
    for (const auto& s : spectra) {
        if (s.structure_id.empty()) throw InputError("spectrum " + s.id + " has no structure id");
        spectra_of[s.structure_id].push_back(s.id);
    }
    for (auto& [k, v] : spectra_of) std::sort(v.begin(), v.end());

    std::vector<std::string> structures;
    for (const auto& [k, v] : spectra_of) structures.push_back(k);
    if (counts.novel_structures > structures.size())
        throw SizingError("requested " + std::to_string(counts.novel_structures) + " novel structures but only " +
                          std::to_string(structures.size()) + " exist");
    auto rng = Rng::derive(seed, {0x5117});
    rng.shuffle(structures);

    SplitAssignment a;
    for (std::size_t i = 0; i < structures.size(); ++i) {
        const auto& st = structures[i];
        const bool novel = i < counts.novel_structures;
        for (const auto& id : spectra_of[st]) {
            (novel ? a.novel_spectra : a.train_spectra).insert(id);
            a.by_spectrum[id] = novel ? SplitName::Novel : SplitName::Train;
        }
        (novel ? a.novel_structures : a.train_structures).insert(st);
    }

    std::map<std::string, std::string> structure_of;
    for (const auto& s : spectra) structure_of[s.id] = s.structure_id;
    std::map<std::string, std::size_t> remaining;
    for (const auto& st : a.train_structures) remaining[st] = spectra_of[st].size();

    std::vector<std::string> candidates(a.train_spectra.begin(), a.train_spectra.end());
    rng.shuffle(candidates);
    std::size_t taken = 0;
    for (const auto& id : candidates) {
        if (taken == counts.known_spectra) break;
        const auto& st = structure_of[id];
        if (remaining[st] < 2) continue;
        --remaining[st];
        a.train_spectra.erase(id);
        a.known_spectra.insert(id);
        a.known_structures.insert(st);
        a.by_spectrum[id] = SplitName::Known;
        ++taken;
    }
    if (taken < counts.known_spectra)
        throw SizingError("only " + std::to_string(taken) + " spectra can be held out as known, requested " +
                          std::to_string(counts.known_spectra));
    return a;
}

/// Throws if any partition invariant is violated.
inline void check_split(const SplitAssignment& a, const std::vector<Spectrum>& spectra) {
    std::map<std::string, std::string> structure_of;
    for (const auto& s : spectra) structure_of[s.id] = s.structure_id;
    std::set<std::string> train_structs;
    for (const auto& id : a.train_spectra) train_structs.insert(structure_of.at(id));
    for (const auto& id : a.known_spectra) {
        if (a.train_spectra.count(id) || a.novel_spectra.count(id))
            throw ContractError("spectrum " + id + " is in more than one split");
        if (!train_structs.count(structure_of.at(id)))
            throw ContractError("known spectrum " + id + " has a structure absent from train");
    }
    for (const auto& id : a.novel_spectra) {
        if (a.train_spectra.count(id)) throw ContractError("spectrum " + id + " is in more than one split");
        if (train_structs.count(structure_of.at(id)))
            throw ContractError("novel spectrum " + id + " shares its structure with train");
    }
    if (a.train_spectra.size() + a.known_spectra.size() + a.novel_spectra.size() != spectra.size())
        throw ContractError("split does not cover every spectrum exactly once");
}

/// "spectrum_id<TAB>split" rows sorted by spectrum id.
inline std::string manifest_text(const SplitAssignment& a) {
    std::string out = "spectrum_id\tsplit\n";
    for (const auto& [id, s] : a.by_spectrum) out += id + "\t" + split_label(s) + "\n";
    return out;
}

inline SplitAssignment parse_manifest(std::string_view text, const std::vector<Spectrum>& spectra) {
    std::map<std::string, std::string> structure_of;
    for (const auto& s : spectra) structure_of[s.id] = s.structure_id;
    SplitAssignment a;
    std::size_t lineno = 0;
    for (auto line : lines_of(text)) {
        ++lineno;
        if (lineno == 1 || trim(line).empty()) continue;
        auto cols = split_view(line, '\t');
        if (cols.size() != 2) throw ParseError(lineno, "manifest row needs 'spectrum_id<TAB>split'");
        std::string id(cols[0]);
        auto st = structure_of.find(id);
        if (st == structure_of.end()) throw LoadError("manifest names unknown spectrum " + id);
        SplitName which;
        if (cols[1] == "train") which = SplitName::Train;
        else if (cols[1] == "known") which = SplitName::Known;
        else if (cols[1] == "novel") which = SplitName::Novel;
        else throw ParseError(lineno, "unknown split '" + std::string(cols[1]) + "'");
        a.by_spectrum[id] = which;
        switch (which) {
            case SplitName::Train: a.train_spectra.insert(id); a.train_structures.insert(st->second); break;
            case SplitName::Known: a.known_spectra.insert(id); a.known_structures.insert(st->second); break;
            case SplitName::Novel: a.novel_spectra.insert(id); a.novel_structures.insert(st->second); break;
        }
    }
    return a;
}

/// Spectra grouped by split, each group in input order.
struct Dataset {
    std::vector<Spectrum> train, known, novel;
};

inline Dataset partition(const std::vector<Spectrum>& spectra, const SplitAssignment& a) {
    Dataset d;
    for (const auto& s : spectra) {
        auto it = a.by_spectrum.find(s.id);
        if (it == a.by_spectrum.end()) throw LoadError("spectrum " + s.id + " is missing from the split");
        switch (it->second) {
            case SplitName::Train: d.train.push_back(s); break;
            case SplitName::Known: d.known.push_back(s); break;
            case SplitName::Novel: d.novel.push_back(s); break;
        }
    }
    return d;
}

}  // namespace sinspec
