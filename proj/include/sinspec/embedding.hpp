#pragma once

// Peak featurization: multi-scale sinusoidal m/z embedding, m/z tokens,
// intensity normalization, binned spectra, and the learned peak embeddings
// that feed the encoder.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"
#include "sinspec/nn.hpp"
#include "sinspec/precision.hpp"
#include "sinspec/spectrum.hpp"
#include "sinspec/tensor.hpp"

namespace sinspec {

// Default wavelength range in Daltons. Evaluated in long double: the binary64
// literal 3.3 is already off by 2e-16, which moves 10^3.3 by about 3 ulps.
inline const double kDefaultLambdaMin = static_cast<double>(std::pow(10.0L, -2.5L));
inline const double kDefaultLambdaMax = static_cast<double>(std::pow(10.0L, 3.3L));

struct SinusoidalConfig {
    double lambda_min = kDefaultLambdaMin;
    double lambda_max = kDefaultLambdaMax;
    std::size_t dim = 512;

    void validate() const {
        if (!(lambda_min > 0.0 && lambda_min < lambda_max))
            throw ConfigError("sinusoidal wavelengths need 0 < lambda_min < lambda_max");
        if (dim < 4 || dim % 2 != 0) throw ConfigError("sinusoidal dimension must be even and at least 4");
    }
};

/// Wavelength of sin/cos pair i: lambda_min * (lambda_max/lambda_min)^(2i/(d-2)),
/// i = 0 .. d/2-1. The end points are exactly lambda_min and lambda_max.
inline std::vector<double> wavelengths(const SinusoidalConfig& cfg) {
    cfg.validate();
    const std::size_t pairs = cfg.dim / 2;
    std::vector<double> lam(pairs);
    const double lo = std::log(cfg.lambda_min), hi = std::log(cfg.lambda_max);
    for (std::size_t i = 0; i < pairs; ++i) {
        const double t = static_cast<double>(2 * i) / static_cast<double>(cfg.dim - 2);
        lam[i] = std::exp(lo + t * (hi - lo));
    }
    lam.front() = cfg.lambda_min;
    lam.back() = cfg.lambda_max;
    return lam;
}

/// Component 2i = sin(2 pi mz / lambda_i), 2i+1 = cos(2 pi mz / lambda_i).
/// `mode` selects the precision the input (and, with FullEmulation, every
/// intermediate) is rounded to.
inline std::vector<double> sinusoidal_embed(double mz, const SinusoidalConfig& cfg, PrecisionMode mode = {}) {
    if (!(mz >= 0.0)) throw DomainError("sinusoidal_embed: m/z must be non-negative");
    const double m = cast_mz(mz, mode);
    const auto lam = wavelengths(cfg);
    std::vector<double> out(cfg.dim);
    if (mode.emulation == Emulation::InputOnly || mode.format == FloatFormat::Binary64) {
        for (std::size_t i = 0; i < lam.size(); ++i) {
            const double phase = 2.0 * std::numbers::pi * m / lam[i];
            out[2 * i] = std::sin(phase);
            out[2 * i + 1] = std::cos(phase);
        }
        return out;
    }
    auto q = [&](double v) { return quantize(v, mode.format); };
    const double two_pi = q(2.0 * std::numbers::pi);
    const double scaled = q(two_pi * m);
    for (std::size_t i = 0; i < lam.size(); ++i) {
        const double phase = q(scaled / q(lam[i]));
        if (!std::isfinite(phase))
            throw CastError("phase of m/z " + std::to_string(mz) + " on channel " + std::to_string(i) + " overflows " +
                            precision_label(mode));
        out[2 * i] = q(std::sin(phase));
        out[2 * i + 1] = q(std::cos(phase));
    }
    return out;
}

inline double fractional_mz(double mz) {
    if (!(mz >= 0.0)) throw DomainError("fractional_mz: m/z must be non-negative");
    return mz - std::floor(mz);
}

// ---------------------------------------------------------------------------
// Tokens

struct TokenVocab {
    double resolution = 0.1;  // Daltons
    double max_mz = 2000.0;

    std::size_t regular_tokens() const {
        return static_cast<std::size_t>(std::llround(max_mz / resolution)) + 1;
    }
    std::size_t unknown_token() const { return regular_tokens(); }
    std::size_t size() const { return regular_tokens() + 1; }

    void validate() const {
        if (!(resolution > 0.0) || !(max_mz > 0.0)) throw ConfigError("token vocabulary needs positive resolution and max m/z");
    }
};

/// Rounds m/z to the vocabulary resolution (ties to even); values above
/// max_mz map to the unknown token.
inline std::size_t tokenize_mz(double mz, const TokenVocab& vocab) {
    if (!(mz >= 0.0)) throw DomainError("tokenize_mz: m/z must be non-negative");
    if (mz > vocab.max_mz) return vocab.unknown_token();
    const double idx = std::nearbyint(mz / vocab.resolution);
    const auto id = static_cast<std::size_t>(idx);
    return id < vocab.regular_tokens() ? id : vocab.unknown_token();
}

// ---------------------------------------------------------------------------
// Intensities and bins

inline constexpr double kPrecursorIntensity = 2.0;

/// Fragment intensities scaled to a maximum of 1; precursor intensity set to 2.
inline Spectrum normalize_intensities(const Spectrum& s) {
    double mx = 0.0;
    for (const auto& p : s.fragments) mx = std::max(mx, p.intensity);
    if (!(mx > 0.0)) throw NumericError("spectrum " + s.id + " has no positive fragment intensity");
    Spectrum out = s;
    for (auto& p : out.fragments) {
        p.intensity /= mx;
        p.intensity_decimals = -1;
    }
    out.precursor.intensity = kPrecursorIntensity;
    out.precursor.intensity_decimals = -1;
    out.precursor_has_intensity = true;
    return out;
}

inline std::size_t bin_count(double bin_width, double max_mz) {
    return static_cast<std::size_t>(std::ceil(max_mz / bin_width - 1e-9));
}

/// Fixed-length binned spectrum: fragment i adds its max-normalized intensity
/// to bin floor(mz / width); bins saturate at 1. Fragments past max_mz are
/// dropped.
inline std::vector<double> bin_spectrum(const Spectrum& s, double bin_width, double max_mz) {
    if (!(bin_width > 0.0)) throw ContractError("bin width must be positive");
    std::vector<double> bins(bin_count(bin_width, max_mz), 0.0);
    double mx = 0.0;
    for (const auto& p : s.fragments) mx = std::max(mx, p.intensity);
    if (!(mx > 0.0)) return bins;
    for (const auto& p : canonical_fragments(s)) {
        const auto b = static_cast<std::size_t>(std::floor(p.mz / bin_width));
        if (b >= bins.size()) continue;
        bins[b] = std::min(1.0, bins[b] + p.intensity / mx);
    }
    return bins;
}

// ---------------------------------------------------------------------------
// Learned peak embeddings

/// FF(FF(SE(mz)) || I): a sinusoidal m/z embedding refined by one
/// feed-forward block, concatenated with intensity, then a second block.
template <typename T>
struct SinPeakEmbedding {
    SinusoidalConfig se;
    PrecisionMode precision;
    FeedForward<T> mz_ff;
    FeedForward<T> peak_ff;

    SinPeakEmbedding() = default;
    SinPeakEmbedding(SinusoidalConfig cfg, PrecisionMode mode, std::size_t d, Rng& rng)
        : se(cfg), precision(mode), mz_ff(cfg.dim, d, d, rng), peak_ff(d + 1, d, d, rng) {}

    /// [n, se.dim] matrix of raw sinusoidal features, cast to T.
    Tensor<T> features(std::span<const double> mzs) const {
        std::vector<T> v;
        v.reserve(mzs.size() * se.dim);
        for (double mz : mzs)
            for (double x : sinusoidal_embed(mz, se, precision)) v.push_back(static_cast<T>(x));
        return Tensor<T>({mzs.size(), se.dim}, std::move(v));
    }

    /// FF(SE(mz)) for each m/z (the intensity-free m/z embedding).
    Tensor<T> mz_embedding(std::span<const double> mzs) const { return mz_ff(features(mzs)); }

    Tensor<T> from_features(const Tensor<T>& feats, std::span<const double> intensities) const {
        std::vector<T> iv(intensities.begin(), intensities.end());
        const std::size_t n = iv.size();
        auto icol = Tensor<T>({n, 1}, std::move(iv));
        return peak_ff(concat_cols<T>({mz_ff(feats), icol}));
    }

    Tensor<T> operator()(std::span<const Peak> peaks) const {
        std::vector<double> mzs, is;
        for (const auto& p : peaks) {
            mzs.push_back(p.mz);
            is.push_back(p.intensity);
        }
        return from_features(features(mzs), is);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        mz_ff.collect(prefix + ".mz_ff", out);
        peak_ff.collect(prefix + ".peak_ff", out);
    }
};

/// FF(TE(mz) || I) with TE a learned table over 0.1 Da tokens.
template <typename T>
struct TokenPeakEmbedding {
    TokenVocab vocab;
    Tensor<T> table;  // [vocab.size(), d]
    FeedForward<T> peak_ff;

    TokenPeakEmbedding() = default;
    TokenPeakEmbedding(TokenVocab v, std::size_t d, Rng& rng) : vocab(v), peak_ff(d + 1, d, d, rng) {
        v.validate();
        const double bound = std::sqrt(3.0);  // unit variance
        std::vector<T> w(vocab.size() * d);
        for (auto& x : w) x = static_cast<T>(rng.uniform(-bound, bound));
        table = Tensor<T>({vocab.size(), d}, std::move(w), true);
    }

    Tensor<T> mz_embedding(std::span<const double> mzs) const {
        std::vector<std::size_t> ids;
        for (double mz : mzs) ids.push_back(tokenize_mz(mz, vocab));
        return gather_rows(table, ids);
    }

    Tensor<T> operator()(std::span<const Peak> peaks) const {
        std::vector<double> mzs;
        std::vector<T> iv;
        for (const auto& p : peaks) {
            mzs.push_back(p.mz);
            iv.push_back(static_cast<T>(p.intensity));
        }
        const std::size_t n = iv.size();
        auto icol = Tensor<T>({n, 1}, std::move(iv));
        return peak_ff(concat_cols<T>({mz_embedding(mzs), icol}));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".table", table});
        peak_ff.collect(prefix + ".peak_ff", out);
    }
};

template <typename T>
Tensor<T> peak_embed_sin(const Peak& peak, const SinPeakEmbedding<T>& weights) {
    return reshape(weights(std::span<const Peak>(&peak, 1)), {weights.peak_ff.outer.out_features()});
}

template <typename T>
Tensor<T> peak_embed_token(const Peak& peak, const TokenPeakEmbedding<T>& weights) {
    return reshape(weights(std::span<const Peak>(&peak, 1)), {weights.peak_ff.outer.out_features()});
}

// ---------------------------------------------------------------------------
// Embedding export

struct EmbeddingRow {
    double mz = 0.0;
    std::vector<double> values;
};

/// Header plus one row per m/z: "mz,frac_mz,precision,e0,...,e{d-1}".
inline std::string embedding_export_text(const std::vector<EmbeddingRow>& rows, const std::string& precision) {
    std::string out = "mz,frac_mz,precision";
    const std::size_t d = rows.empty() ? 0 : rows.front().values.size();
    for (std::size_t j = 0; j < d; ++j) out += ",e" + std::to_string(j);
    out += "\n";
    for (const auto& r : rows) {
        out += fixed(r.mz, 4) + "," + fixed(fractional_mz(r.mz), 4) + "," + precision;
        for (double v : r.values) out += "," + general(v, 9);
        out += "\n";
    }
    return out;
}

/// Mean circular distance in fractional mass between each sampled row and
/// its nearest (Euclidean) neighbour in embedding space. Lower means the
/// embedding groups m/z values with similar mass defects. Uses every
/// `stride`-th row.
inline double fractional_neighbor_error(const std::vector<EmbeddingRow>& rows, std::size_t stride = 1) {
    std::vector<const EmbeddingRow*> pts;
    for (std::size_t i = 0; i < rows.size(); i += std::max<std::size_t>(stride, 1)) pts.push_back(&rows[i]);
    if (pts.size() < 2) throw ContractError("fractional_neighbor_error needs at least two rows");
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = i;
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (j == i) continue;
            double dist = 0.0;
            for (std::size_t k = 0; k < pts[i]->values.size(); ++k) {
                const double dd = pts[i]->values[k] - pts[j]->values[k];
                dist += dd * dd;
            }
            if (dist < best) {
                best = dist;
                arg = j;
            }
        }
        const double df = std::fabs(fractional_mz(pts[i]->mz) - fractional_mz(pts[arg]->mz));
        total += std::min(df, 1.0 - df);
    }
    return total / static_cast<double>(pts.size());
}

}  // namespace sinspec
