#pragma once

// Set encoder over peak embeddings. The precursor occupies slot 0; fragments
// follow in canonical (m/z, intensity) order so that every reduction runs in
// the same order regardless of how the fragments were stored. There is no
// positional encoding. Blocks are pre-norm:
//   x += Dropout(MHA(LN(x)));  x += Dropout(FF(LN(x)))
// The final block computes only the precursor slot, whose output is the
// spectrum embedding.

#include <algorithm>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "sinspec/config.hpp"
#include "sinspec/embedding.hpp"
#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"
#include "sinspec/nn.hpp"
#include "sinspec/parallel.hpp"
#include "sinspec/precision.hpp"
#include "sinspec/spectrum.hpp"
#include "sinspec/tensor.hpp"

namespace sinspec {

enum class PeakEmbeddingKind { Sinusoidal, Tokenized };

struct EncoderConfig {
    std::size_t dim = 512;
    std::size_t layers = 6;
    std::size_t heads = 32;
    std::size_t ff_hidden = 512;
    double dropout = 0.1;
    PeakEmbeddingKind kind = PeakEmbeddingKind::Sinusoidal;
    double lambda_min = kDefaultLambdaMin;
    double lambda_max = kDefaultLambdaMax;
    TokenVocab vocab;
    PrecisionMode precision;
    std::size_t max_fragments = 512;

    SinusoidalConfig sinusoidal() const { return {lambda_min, lambda_max, dim}; }

    void validate() const {
        if (layers < 1) throw ConfigError("encoder needs at least one layer");
        if (heads == 0 || dim % heads != 0)
            throw ConfigError("model dimension " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                              " heads");
        if (ff_hidden == 0) throw ConfigError("feed-forward hidden dimension must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
        if (max_fragments < 1) throw ConfigError("max_fragments must be positive");
        sinusoidal().validate();
        vocab.validate();
    }

    void write(KeyValues& kv) const {
        kv.set("dim", std::to_string(dim));
        kv.set("layers", std::to_string(layers));
        kv.set("heads", std::to_string(heads));
        kv.set("ff_hidden", std::to_string(ff_hidden));
        kv.set("dropout", general(dropout, 17));
        kv.set("embedding", kind == PeakEmbeddingKind::Sinusoidal ? "sin" : "token");
        kv.set("lambda_min", general(lambda_min, 17));
        kv.set("lambda_max", general(lambda_max, 17));
        kv.set("token_resolution", general(vocab.resolution, 17));
        kv.set("token_max_mz", general(vocab.max_mz, 17));
        kv.set("precision", std::to_string(format_bits(precision.format)));
        kv.set("emulation", precision.emulation == Emulation::InputOnly ? "input" : "full");
        kv.set("max_fragments", std::to_string(max_fragments));
    }

    static EncoderConfig read(const KeyValues& kv) {
        EncoderConfig c;
        c.dim = kv.integer_or("dim", c.dim);
        c.layers = kv.integer_or("layers", c.layers);
        c.heads = kv.integer_or("heads", c.heads);
        c.ff_hidden = kv.integer_or("ff_hidden", c.dim);
        c.dropout = kv.real_or("dropout", c.dropout);
        const auto emb = kv.str_or("embedding", "sin");
        if (emb == "sin") c.kind = PeakEmbeddingKind::Sinusoidal;
        else if (emb == "token") c.kind = PeakEmbeddingKind::Tokenized;
        else throw ConfigError("embedding must be 'sin' or 'token', got '" + emb + "'");
        c.lambda_min = kv.real_or("lambda_min", c.lambda_min);
        c.lambda_max = kv.real_or("lambda_max", c.lambda_max);
        c.vocab.resolution = kv.real_or("token_resolution", c.vocab.resolution);
        c.vocab.max_mz = kv.real_or("token_max_mz", c.vocab.max_mz);
        c.precision.format = format_from_bits(static_cast<int>(kv.integer_or("precision", 64)));
        const auto em = kv.str_or("emulation", "input");
        if (em == "input") c.precision.emulation = Emulation::InputOnly;
        else if (em == "full") c.precision.emulation = Emulation::FullEmulation;
        else throw ConfigError("emulation must be 'input' or 'full', got '" + em + "'");
        c.max_fragments = kv.integer_or("max_fragments", c.max_fragments);
        c.validate();
        return c;
    }
};

template <typename T>
struct EncoderLayer {
    LayerNorm<T> attn_norm;
    AttentionWeights<T> attention;
    LayerNorm<T> ff_norm;
    FeedForward<T> ff;

    EncoderLayer() = default;
    EncoderLayer(std::size_t d, std::size_t hidden, Rng& rng)
        : attn_norm(d), attention(d, rng), ff_norm(d), ff(d, hidden, d, rng) {}

    Tensor<T> forward(const Tensor<T>& x, std::size_t heads, const DropoutContext& drop) const {
        auto h = attn_norm(x);
        auto a = multi_head_attention(h, h, h, attention, heads, drop);
        auto y = add(x, apply_dropout(a, drop));
        return add(y, apply_dropout(ff(ff_norm(y)), drop));
    }

    /// Only slot 0 queries; keys and values still span every slot.
    Tensor<T> forward_first(const Tensor<T>& x, std::size_t heads, const DropoutContext& drop) const {
        auto h = attn_norm(x);
        auto a = multi_head_attention(slice_rows(h, 0, 1), h, h, attention, heads, drop);
        auto y = add(slice_rows(x, 0, 1), apply_dropout(a, drop));
        return add(y, apply_dropout(ff(ff_norm(y)), drop));
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        attn_norm.collect(prefix + ".attn_norm", out);
        attention.collect(prefix + ".attn", out);
        ff_norm.collect(prefix + ".ff_norm", out);
        ff.collect(prefix + ".ff", out);
    }
};

enum class RunMode { Train, Infer };

/// Peaks in encoder order: precursor, then at most `max_fragments`
/// fragments (highest intensity kept) sorted by (m/z, intensity).
inline std::vector<Peak> encoder_peaks(const Spectrum& normalized, std::size_t max_fragments) {
    auto frags = normalized.fragments;
    if (frags.size() > max_fragments) {
        std::sort(frags.begin(), frags.end(), [](const Peak& a, const Peak& b) {
            if (a.intensity != b.intensity) return a.intensity > b.intensity;
            return peak_less(a, b);
        });
        frags.resize(max_fragments);
    }
    std::sort(frags.begin(), frags.end(), peak_less);
    std::vector<Peak> peaks;
    peaks.reserve(frags.size() + 1);
    peaks.push_back(normalized.precursor);
    peaks.insert(peaks.end(), frags.begin(), frags.end());
    return peaks;
}

template <typename T>
class SpectrumEncoder {
public:
    SpectrumEncoder() = default;
    SpectrumEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        auto rng = Rng::derive(seed, {0xe4c0de});
        if (cfg.kind == PeakEmbeddingKind::Sinusoidal)
            peak_ = SinPeakEmbedding<T>(cfg.sinusoidal(), cfg.precision, cfg.dim, rng);
        else
            peak_ = TokenPeakEmbedding<T>(cfg.vocab, cfg.dim, rng);
        for (std::size_t l = 0; l < cfg.layers; ++l) layers_.emplace_back(cfg.dim, cfg.ff_hidden, rng);
    }

    const EncoderConfig& config() const { return cfg_; }
    std::size_t dim() const { return cfg_.dim; }

    /// Peak embeddings for an already ordered peak list, [n, d].
    Tensor<T> embed_peaks(const std::vector<Peak>& peaks) const {
        return std::visit([&](const auto& pe) { return pe(std::span<const Peak>(peaks)); }, peak_);
    }

    /// m/z-only embedding: FF(SE(mz)) for sinusoidal models, TE(mz) for
    /// tokenized ones.
    Tensor<T> mz_embedding(std::span<const double> mzs) const {
        return std::visit([&](const auto& pe) { return pe.mz_embedding(mzs); }, peak_);
    }

    /// Spectrum embedding of shape [d]. Intensities are normalized here.
    /// Inference is deterministic; training draws dropout masks from `seed`.
    Tensor<T> encode(const Spectrum& s, RunMode mode = RunMode::Infer, std::uint64_t seed = 0) const {
        if (s.fragments.empty()) throw ContractError("spectrum " + s.id + " has no fragments to encode");
        const auto peaks = encoder_peaks(normalize_intensities(s), cfg_.max_fragments);
        Rng rng = Rng::derive(seed, {0xd809});
        DropoutContext drop{cfg_.dropout, mode == RunMode::Train, &rng};
        auto x = embed_peaks(peaks);
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) x = layers_[l].forward(x, cfg_.heads, drop);
        auto y = layers_.back().forward_first(x, cfg_.heads, drop);
        return reshape(y, {cfg_.dim});
    }

    ParamList<T> parameters() const {
        ParamList<T> out;
        std::visit([&](const auto& pe) { pe.collect("peak", out); }, peak_);
        for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("layer" + std::to_string(l), out);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.tensor.numel();
        return n;
    }

    std::vector<EncoderLayer<T>>& layers() { return layers_; }
    std::variant<SinPeakEmbedding<T>, TokenPeakEmbedding<T>>& peak_embedding() { return peak_; }

private:
    EncoderConfig cfg_;
    std::variant<SinPeakEmbedding<T>, TokenPeakEmbedding<T>> peak_;
    std::vector<EncoderLayer<T>> layers_;
};

template <typename T>
Tensor<T> encode_spectrum(const Spectrum& s, const SpectrumEncoder<T>& weights, RunMode mode = RunMode::Infer,
                          std::uint64_t seed = 0) {
    return weights.encode(s, mode, seed);
}

/// Inference-mode embeddings, one row per spectrum, in input order.
template <typename T>
std::vector<std::vector<double>> infer_embeddings(const SpectrumEncoder<T>& enc,
                                                  const std::vector<const Spectrum*>& spectra,
                                                  std::size_t threads = 1) {
    std::vector<std::vector<double>> out(spectra.size());
    parallel_for(spectra.size(), threads, [&](std::size_t i) {
        NoGradGuard guard;
        try {
            const auto e = enc.encode(*spectra[i]);
            out[i].assign(e.data().begin(), e.data().end());
        } catch (const InputError& e) {
            throw InputError("spectrum " + spectra[i]->id + ": " + e.what());
        } catch (const Error& e) {
            throw Error("spectrum " + spectra[i]->id + ": " + e.what());
        }
    });
    return out;
}

}  // namespace sinspec
