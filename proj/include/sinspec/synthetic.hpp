#pragma once

// Synthetic spectra and labels with known structure for toy-scale training,
// tests and demonstrations.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "sinspec/labels.hpp"
#include "sinspec/rng.hpp"
#include "sinspec/spectrum.hpp"

namespace sinspec::synthetic {

struct ToyData {
    std::vector<Spectrum> spectra;
    LabelTable labels;
};

inline double round_to(double v, int decimals) {
    const double s = std::pow(10.0, decimals);
    return std::nearbyint(v * s) / s;
}

/// A spectrum whose values are exactly what four-decimal m/z text and
/// two-decimal intensity text would parse to.
inline Spectrum make_spectrum(const std::string& id, const std::string& structure, double precursor,
                              const std::vector<double>& fragment_mz, Rng& rng, double jitter) {
    Spectrum s;
    s.id = id;
    s.structure_id = structure;
    s.precursor = {round_to(precursor + rng.uniform(-jitter, jitter), 4), 0.0, 4, -1};
    for (double mz : fragment_mz)
        s.fragments.push_back({round_to(mz + rng.uniform(-jitter, jitter), 4), round_to(rng.uniform(5.0, 100.0), 2), 4, 2});
    return s;
}

inline PropertyVector index_properties(std::size_t k) {
    PropertyVector p{};
    for (std::size_t j = 0; j < kNumProperties; ++j) p[j] = static_cast<double>((k * (j + 3)) % 11) + 0.5 * j;
    return p;
}

inline std::string structure_name(const std::string& prefix, std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03zu", prefix.c_str(), k);
    return buf;
}

/// Five structures with four spectra each. Fingerprints are overlapping
/// 16-bit windows shifted by 4 bits, so pair similarities are 1, 0.6, 1/3,
/// 1/7 and 0.
inline ToyData toy_siamese_data(std::uint64_t seed) {
    Rng rng = Rng::derive(seed, {0x70e5});
    ToyData d;
    for (std::size_t s = 0; s < 5; ++s) {
        const auto st = structure_name("TOY", s);
        std::vector<std::size_t> bits;
        for (std::size_t b = 4 * s; b < 4 * s + 16; ++b) bits.push_back(b);
        d.labels.insert({st, Fingerprint::from_bits(36, bits), index_properties(s)});
        const double precursor = rng.uniform(300, 700);
        std::vector<double> base;
        for (int f = 0; f < 7; ++f) base.push_back(rng.uniform(60, precursor - 20));
        for (std::size_t k = 0; k < 4; ++k)
            d.spectra.push_back(make_spectrum(st + "_" + std::to_string(k), st, precursor, base, rng, 0.002));
    }
    return d;
}

/// Twenty structures whose fingerprints are nested prefixes of 1..20 bits,
/// so pair similarities min/max cover every tenth of [0, 1].
inline ToyData uniform_bins_data() {
    Rng rng(3);
    ToyData d;
    for (std::size_t s = 0; s < 20; ++s) {
        const auto st = structure_name("NEST", s);
        std::vector<std::size_t> bits;
        for (std::size_t b = 0; b <= s; ++b) bits.push_back(b);
        d.labels.insert({st, Fingerprint::from_bits(20, bits), index_properties(s)});
        for (std::size_t k = 0; k < 2; ++k)
            d.spectra.push_back(make_spectrum(st + "_" + std::to_string(k), st, 500.0 + s, {100.0, 150.0, 200.0, 250.0},
                                              rng, 0.001));
    }
    return d;
}

/// Isobaric families for the precision ablation. Each family picks nominal
/// fragment masses from a shared pool on a 0.5 Da grid in [512, 1000]; its
/// variants shift every mass (precursor included) by a variant-specific
/// offset of at most 0.15 Da. Binary16 spacing there is 0.5 Da, so the
/// variants of a family collapse to the same input while their fingerprints
/// differ: a family block (one bit per pool mass used) plus a variant block.
inline ToyData precision_data(std::uint64_t seed, std::size_t families = 24, std::size_t spectra_per = 3) {
    Rng rng = Rng::derive(seed, {0x9e1f});
    const std::vector<double> offsets = {-0.15, 0.0, 0.15};
    const std::size_t pool_size = 20, per_family = 6, variant_bits = 8;
    std::vector<double> pool;
    for (std::size_t i = 0; i < pool_size; ++i) pool.push_back(520.0 + 0.5 * std::floor(rng.uniform(0, 2) * 1.0) + 23.5 * i);
    ToyData d;
    for (std::size_t f = 0; f < families; ++f) {
        std::vector<std::size_t> idx(pool_size);
        for (std::size_t i = 0; i < pool_size; ++i) idx[i] = i;
        rng.shuffle(idx);
        idx.resize(per_family);
        std::sort(idx.begin(), idx.end());
        const double precursor = 990.0 + 0.5 * static_cast<double>(rng.uniform_index(10)) - 5.0;
        for (std::size_t v = 0; v < offsets.size(); ++v) {
            const auto st = structure_name("ISO", f * offsets.size() + v);
            std::vector<std::size_t> bits(idx.begin(), idx.end());
            for (std::size_t b = 0; b < variant_bits; ++b) bits.push_back(pool_size + v * variant_bits + b);
            d.labels.insert({st, Fingerprint::from_bits(pool_size + offsets.size() * variant_bits, bits),
                             index_properties(f * 3 + v)});
            std::vector<double> frags;
            for (auto i : idx) frags.push_back(pool[i] + offsets[v]);
            for (std::size_t k = 0; k < spectra_per; ++k)
                d.spectra.push_back(make_spectrum(st + "_" + std::to_string(k), st, precursor + offsets[v], frags, rng, 0.001));
        }
    }
    return d;
}

/// Property targets as smooth functions of the structure's masses.
inline PropertyVector mass_properties(double precursor, const std::vector<double>& frags) {
    double mean = 0.0, mn = frags.front(), mx = frags.front();
    for (double f : frags) {
        mean += f;
        mn = std::min(mn, f);
        mx = std::max(mx, f);
    }
    mean /= static_cast<double>(frags.size());
    double var = 0.0;
    for (double f : frags) var += (f - mean) * (f - mean);
    const double sd = std::sqrt(var / static_cast<double>(frags.size()));
    const double two_pi = 2.0 * 3.141592653589793;
    return {precursor / 100.0,
            mean / 100.0,
            mx / 100.0,
            mn / 100.0,
            precursor * precursor / 1e5,
            std::cos(two_pi * mean / 800.0),
            sd / 100.0,
            (precursor - mx) / 100.0,
            std::sin(two_pi * precursor / 1200.0),
            mean / precursor};
}

/// Structures with random masses; properties follow mass_properties. Each
/// structure gets its own masses, so held-out structures present m/z values
/// never seen in training.
inline ToyData property_data(std::uint64_t seed, std::size_t structures, std::size_t spectra_per,
                             std::size_t fragments = 8) {
    Rng rng = Rng::derive(seed, {0x960});
    ToyData d;
    for (std::size_t s = 0; s < structures; ++s) {
        const auto st = structure_name("PRP", s);
        const double precursor = round_to(rng.uniform(300, 900), 4);
        std::vector<double> frags;
        for (std::size_t f = 0; f < fragments; ++f) frags.push_back(round_to(rng.uniform(50, precursor - 10), 4));
        std::vector<std::size_t> bits;
        for (std::size_t b = 0; b < 32; ++b)
            if (rng.bernoulli(0.3)) bits.push_back(b);
        d.labels.insert({st, Fingerprint::from_bits(32, bits), mass_properties(precursor, frags)});
        for (std::size_t k = 0; k < spectra_per; ++k)
            d.spectra.push_back(make_spectrum(st + "_" + std::to_string(k), st, precursor, frags, rng, 0.001));
    }
    return d;
}

}  // namespace sinspec::synthetic
