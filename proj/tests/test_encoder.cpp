#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "sinspec/checkpoint.hpp"
#include "sinspec/encoder.hpp"

using namespace sinspec;

namespace {

EncoderConfig small_config(std::size_t d = 16, std::size_t layers = 2, std::size_t heads = 4) {
    EncoderConfig c;
    c.dim = d;
    c.layers = layers;
    c.heads = heads;
    c.ff_hidden = d;
    c.dropout = 0.1;
    return c;
}

Spectrum random_spectrum(Rng& rng, std::size_t n, const std::string& id = "s") {
    Spectrum s;
    s.id = id;
    s.precursor = {rng.uniform(300, 900), 0.0};
    for (std::size_t i = 0; i < n; ++i) s.fragments.push_back({rng.uniform(50, 300), rng.uniform(0.01, 100)});
    return s;
}

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Vec affine(const Linear<double>& l, const Vec& x) {
    const std::size_t out = l.out_features(), in = l.in_features();
    Vec y(out);
    for (std::size_t o = 0; o < out; ++o) {
        y[o] = l.bias[o];
        for (std::size_t i = 0; i < in; ++i) y[o] += l.weight[o * in + i] * x[i];
    }
    return y;
}

Vec ff(const FeedForward<double>& f, const Vec& x) {
    auto h = affine(f.inner, x);
    for (auto& v : h) v = std::max(0.0, v);
    return affine(f.outer, h);
}

Vec norm(const LayerNorm<double>& ln, const Vec& x) {
    double mu = 0.0, var = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = ln.gain[i] * (x[i] - mu) / std::sqrt(var + 1e-5) + ln.bias[i];
    return y;
}

}  // namespace

TEST(Encoder, OutputShapeForAnyFragmentCount) {
    SpectrumEncoder<double> enc(small_config(), 1);
    Rng rng(2);
    for (std::size_t n : {1u, 4u, 17u, 600u}) {
        auto e = enc.encode(random_spectrum(rng, n));
        EXPECT_EQ(e.shape(), (Shape{16}));
    }
}

TEST(Encoder, EmptyFragmentsIsContractError) {
    SpectrumEncoder<double> enc(small_config(), 1);
    Spectrum s;
    s.precursor = {100.0, 0.0};
    EXPECT_THROW(enc.encode(s), ContractError);
}

TEST(Encoder, PermutationInvariantBitExact) {
    SpectrumEncoder<double> enc(small_config(), 3);
    Rng rng(4);
    for (int t = 0; t < 5; ++t) {
        auto s = random_spectrum(rng, 9);
        s.fragments[3].mz = s.fragments[5].mz;  // duplicate m/z exercises the tie order
        const auto ref = enc.encode(s);
        for (int p = 0; p < 20; ++p) {
            rng.shuffle(s.fragments);
            const auto e = enc.encode(s);
            for (std::size_t i = 0; i < 16; ++i) ASSERT_EQ(e[i], ref[i]);
        }
    }
}

TEST(Encoder, InferenceDeterministicTrainingReproducible) {
    SpectrumEncoder<double> enc(small_config(), 5);
    Rng rng(6);
    auto s = random_spectrum(rng, 8);
    auto a = enc.encode(s, RunMode::Infer, 1), b = enc.encode(s, RunMode::Infer, 2);
    auto t1 = enc.encode(s, RunMode::Train, 7), t2 = enc.encode(s, RunMode::Train, 7);
    auto t3 = enc.encode(s, RunMode::Train, 8);
    bool differs = false;
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_EQ(a[i], b[i]);
        EXPECT_EQ(t1[i], t2[i]);
        differs = differs || t1[i] != t3[i];
    }
    EXPECT_TRUE(differs);
}

TEST(Encoder, ParameterCountIsAFunctionOfConfig) {
    auto cfg = small_config(8, 3, 2);
    SpectrumEncoder<double> a(cfg, 1), b(cfg, 99);
    EXPECT_EQ(a.parameter_count(), b.parameter_count());
    const std::size_t d = 8;
    const std::size_t ffd = [](std::size_t in, std::size_t h, std::size_t out) { return in * h + h + h * out + out; }(d, d, d);
    const std::size_t peak = ffd + ((d + 1) * d + d + d * d + d);
    const std::size_t layer = 2 * (2 * d) + 4 * (d * d + d) + ffd;
    EXPECT_EQ(a.parameter_count(), peak + 3 * layer);
    cfg.kind = PeakEmbeddingKind::Tokenized;
    SpectrumEncoder<double> t(cfg, 1);
    EXPECT_EQ(t.parameter_count(), cfg.vocab.size() * d + ((d + 1) * d + d + d * d + d) + 3 * layer);
}

TEST(Encoder, IndivisibleHeadsRejected) {
    EXPECT_THROW(SpectrumEncoder<double>(small_config(10, 1, 4), 1), ConfigError);
}

TEST(Encoder, SingleLayerMatchesUnrolledOracle) {
    auto cfg = small_config(4, 1, 1);
    cfg.lambda_min = 0.05;
    cfg.lambda_max = 500.0;
    SpectrumEncoder<double> enc(cfg, 11);
    // Perturb the norms so gain and bias are exercised.
    auto& layer = enc.layers()[0];
    Rng rng(12);
    for (auto* ln : {&layer.attn_norm, &layer.ff_norm}) {
        for (auto& g : ln->gain.mutable_data()) g = rng.uniform(0.5, 1.5);
        for (auto& b : ln->bias.mutable_data()) b = rng.uniform(-0.5, 0.5);
    }
    Spectrum s;
    s.id = "toy";
    s.precursor = {412.3456, 0.0};
    s.fragments = {{201.118, 40.0}, {97.0531, 80.0}};

    const auto& pe = std::get<SinPeakEmbedding<double>>(enc.peak_embedding());
    // Slot order: precursor, then fragments by m/z; intensities normalized.
    const std::vector<std::pair<double, double>> slots = {{412.3456, 2.0}, {97.0531, 1.0}, {201.118, 0.5}};
    Mat x;
    for (auto [mz, inten] : slots) {
        auto h = ff(pe.mz_ff, sinusoidal_embed(mz, pe.se));
        h.push_back(inten);
        x.push_back(ff(pe.peak_ff, h));
    }
    Mat h;
    for (const auto& r : x) h.push_back(norm(layer.attn_norm, r));
    const auto q = affine(layer.attention.query, h[0]);
    Vec scores;
    Mat vals;
    for (const auto& r : h) {
        const auto k = affine(layer.attention.key, r);
        scores.push_back(std::inner_product(q.begin(), q.end(), k.begin(), 0.0) / 2.0);
        vals.push_back(affine(layer.attention.value, r));
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (auto& sc : scores) z += (sc = std::exp(sc - mx));
    Vec mixed(4, 0.0);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t c = 0; c < 4; ++c) mixed[c] += scores[j] / z * vals[j][c];
    auto attn = affine(layer.attention.output, mixed);
    Vec y(4);
    for (std::size_t c = 0; c < 4; ++c) y[c] = x[0][c] + attn[c];
    auto f = ff(layer.ff, norm(layer.ff_norm, y));
    for (std::size_t c = 0; c < 4; ++c) y[c] += f[c];

    const auto e = enc.encode(s);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(e[c], y[c], 1e-10);
}

TEST(Encoder, CapsFragmentsByIntensity) {
    Spectrum s;
    s.precursor = {500.0, 0.0};
    for (int i = 0; i < 10; ++i) s.fragments.push_back({100.0 + i, static_cast<double>(i + 1)});
    auto peaks = encoder_peaks(normalize_intensities(s), 4);
    ASSERT_EQ(peaks.size(), 5u);
    EXPECT_EQ(peaks[0].mz, 500.0);
    EXPECT_EQ(peaks[1].mz, 106.0);
    EXPECT_EQ(peaks[4].mz, 109.0);
}

TEST(EncoderConfig, KeyValueRoundTripAndValidation) {
    auto cfg = small_config(8, 3, 2);
    cfg.kind = PeakEmbeddingKind::Tokenized;
    cfg.precision = {FloatFormat::Binary16, Emulation::InputOnly};
    KeyValues kv;
    cfg.write(kv);
    auto back = EncoderConfig::read(kv);
    KeyValues kv2;
    back.write(kv2);
    EXPECT_EQ(kv.entries(), kv2.entries());
    kv.set("embedding", "bogus");
    EXPECT_THROW(EncoderConfig::read(kv), ConfigError);
}

TEST(Encoder, CheckpointRestoresOutputs) {
    auto cfg = small_config(8, 2, 2);
    SpectrumEncoder<float> a(cfg, 1), b(cfg, 2);
    Rng rng(3);
    auto s = random_spectrum(rng, 6);
    auto bytes = encode_checkpoint(snapshot(a.parameters(), 42));
    auto params = b.parameters();
    restore(params, decode_checkpoint(bytes), 42);
    auto ea = a.encode(s), eb = b.encode(s);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(ea[i], eb[i]);
    EXPECT_EQ(encode_checkpoint(snapshot(b.parameters(), 42)), bytes);
}
