#pragma once

#include <string>
#include <vector>

#include "sinspec/spectrum.hpp"

namespace sinspec {

inline constexpr std::size_t kMinPeaks = 5;          // precursor included
inline constexpr int kMinMzDecimals = 3;

struct Rejection {
    std::string spectrum_id;
    std::string reason;
};

struct CleanResult {
    std::vector<Spectrum> kept;
    std::vector<Rejection> rejected;
};

/// Drops spectra with fewer than five peaks (precursor counted) or with any
/// m/z written to fewer than three decimal places. Peaks without source-text
/// tracking are taken at face value.
inline CleanResult clean_spectra(const std::vector<Spectrum>& spectra) {
    CleanResult r;
    for (const auto& s : spectra) {
        if (s.peak_count() < kMinPeaks) {
            r.rejected.push_back({s.id, "too few peaks (" + std::to_string(s.peak_count()) + " < " +
                                            std::to_string(kMinPeaks) + ")"});
            continue;
        }
        auto low_res = [](const Peak& p) { return p.mz_decimals >= 0 && p.mz_decimals < kMinMzDecimals; };
        bool bad = low_res(s.precursor);
        for (const auto& p : s.fragments) bad = bad || low_res(p);
        if (bad) {
            r.rejected.push_back({s.id, "m/z written with fewer than " + std::to_string(kMinMzDecimals) + " decimals"});
            continue;
        }
        r.kept.push_back(s);
    }
    return r;
}

inline std::string rejection_log_text(const std::vector<Rejection>& rejected) {
    std::string out = "spectrum_id\treason\n";
    for (const auto& r : rejected) out += r.spectrum_id + "\t" + r.reason + "\n";
    return out;
}

}  // namespace sinspec
