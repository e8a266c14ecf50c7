#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace sinspec {

/// One (m/z, intensity) pair. The decimal counts record how the values were
/// written in source text (-1 when the peak did not come from text).
struct Peak {
    double mz = 0.0;
    double intensity = 0.0;
    int mz_decimals = -1;
    int intensity_decimals = -1;

    friend bool operator==(const Peak& a, const Peak& b) { return a.mz == b.mz && a.intensity == b.intensity; }
};

/// Total order used wherever a canonical fragment order is needed.
inline bool peak_less(const Peak& a, const Peak& b) {
    if (a.mz != b.mz) return a.mz < b.mz;
    return a.intensity < b.intensity;
}

/// A precursor plus an unordered collection of fragment peaks.
struct Spectrum {
    std::string id;
    Peak precursor;
    bool precursor_has_intensity = false;
    std::vector<Peak> fragments;
    std::string structure_id;
    std::vector<std::pair<std::string, std::string>> metadata;  // unrecognised headers, source order

    std::size_t peak_count() const { return fragments.size() + 1; }
};

/// Fragments sorted by (m/z, intensity).
inline std::vector<Peak> canonical_fragments(const Spectrum& s) {
    auto f = s.fragments;
    std::sort(f.begin(), f.end(), peak_less);
    return f;
}

}  // namespace sinspec
