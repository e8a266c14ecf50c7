#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sinspec/embedding.hpp"
#include "sinspec/precision.hpp"
#include "support/gradcheck.hpp"
#include "support/ieee_oracle.hpp"

using namespace sinspec;
using sinspec::testing::Binary16Oracle;
using sinspec::testing::grad_check;
using sinspec::testing::round_binary32;

namespace {

constexpr PrecisionMode kHalf{FloatFormat::Binary16, Emulation::InputOnly};
constexpr PrecisionMode kSingle{FloatFormat::Binary32, Emulation::InputOnly};

double ulp(double x) { return std::nextafter(x, INFINITY) - x; }

}  // namespace

TEST(Wavelengths, EndpointsAndLogProgression) {
    SinusoidalConfig cfg;
    const auto lam = wavelengths(cfg);
    ASSERT_EQ(lam.size(), 256u);
    // Decimal expansions of 10^-2.5 and 10^3.3, rounded by the compiler.
    const double lo = 0.0031622776601683793319988935444327, hi = 1995.2623149688796013524553967395;
    EXPECT_LE(std::fabs(lam.front() - lo), ulp(lo));
    EXPECT_LE(std::fabs(lam.back() - hi), ulp(hi));
    const double step = std::log(lam[1]) - std::log(lam[0]);
    EXPECT_NEAR(step, (3.3 + 2.5) * std::log(10.0) / 255.0, 1e-12);
    for (std::size_t i = 1; i < lam.size(); ++i) EXPECT_NEAR(std::log(lam[i]) - std::log(lam[i - 1]), step, 1e-12);
}

TEST(Wavelengths, RejectsBadConfig) {
    EXPECT_THROW(wavelengths({1.0, 0.5, 8}), ConfigError);
    EXPECT_THROW(wavelengths({0.1, 1.0, 7}), ConfigError);
    EXPECT_THROW(wavelengths({0.1, 1.0, 2}), ConfigError);
}

TEST(SinusoidalEmbed, ZeroGivesSinCosPattern) {
    auto e = sinusoidal_embed(0.0, {});
    for (std::size_t i = 0; i < e.size(); i += 2) {
        EXPECT_EQ(e[i], 0.0);
        EXPECT_EQ(e[i + 1], 1.0);
    }
}

TEST(SinusoidalEmbed, PythagoreanIdentity) {
    Rng rng(12);
    SinusoidalConfig cfg;
    for (int t = 0; t < 2000; ++t) {
        auto e = sinusoidal_embed(rng.uniform(0, 2000), cfg);
        for (std::size_t i = 0; i < e.size(); i += 2) EXPECT_NEAR(e[i] * e[i] + e[i + 1] * e[i + 1], 1.0, 1e-12);
    }
}

TEST(SinusoidalEmbed, LongestWavelengthFullPeriod) {
    auto e = sinusoidal_embed(std::pow(10.0, 3.3), {});
    EXPECT_NEAR(e[510], 0.0, 1e-9);
    EXPECT_NEAR(e[511], 1.0, 1e-9);
}

TEST(SinusoidalEmbed, FinestChannelChord) {
    auto a = sinusoidal_embed(100.000, {});
    auto b = sinusoidal_embed(100.001, {});
    const double chord = std::hypot(a[0] - b[0], a[1] - b[1]);
    const double expect = 2.0 * std::fabs(std::sin(std::numbers::pi * 0.001 / std::pow(10.0, -2.5)));
    EXPECT_NEAR(chord, expect, 1e-6);
    EXPECT_NEAR(chord, 1.66, 0.02);
}

TEST(SinusoidalEmbed, NegativeIsDomainError) { EXPECT_THROW(sinusoidal_embed(-1.0, {}), DomainError); }

TEST(CastMz, Examples) {
    EXPECT_EQ(cast_mz(500.0005, kHalf), 500.0);
    for (int e = -10; e <= 10; ++e) EXPECT_EQ(cast_mz(std::ldexp(1.0, e), kHalf), std::ldexp(1.0, e));
    EXPECT_EQ(cast_mz(0.1, kSingle), 0.100000001490116119384765625);
    EXPECT_EQ(cast_mz(123.456, {}), 123.456);
    EXPECT_THROW(cast_mz(70000.0, kHalf), CastError);
    EXPECT_THROW(cast_mz(NAN, {}), CastError);
}

TEST(CastMz, MatchesBinary16Oracle) {
    Binary16Oracle oracle;
    Rng rng(99);
    for (int t = 0; t < 20000; ++t) {
        const double x = t % 2 ? rng.uniform(0, 2000) : std::ldexp(rng.uniform(1, 2), static_cast<int>(rng.uniform_index(40)) - 25);
        EXPECT_EQ(quantize(x, FloatFormat::Binary16), oracle.round(x)) << x;
    }
    // Exact midpoints between neighbouring encodings exercise ties-to-even.
    for (double base : {1.0, 3.0, 500.0, 1000.0, 1001.0, 33.3}) {
        const double q = std::ldexp(1.0, std::ilogb(base) - 10);
        for (int k = 0; k < 4; ++k) {
            const double mid = (std::floor(base / q) + k + 0.5) * q;
            EXPECT_EQ(quantize(mid, FloatFormat::Binary16), oracle.round(mid)) << mid;
        }
    }
    EXPECT_EQ(quantize(65519.0, FloatFormat::Binary16), 65504.0);
    EXPECT_TRUE(std::isinf(quantize(65520.0, FloatFormat::Binary16)));
}

TEST(CastMz, MatchesBinary32Cast) {
    Rng rng(7);
    for (int t = 0; t < 20000; ++t) {
        const double x = std::ldexp(rng.uniform(1, 2), static_cast<int>(rng.uniform_index(300)) - 150);
        EXPECT_EQ(quantize(x, FloatFormat::Binary32), round_binary32(x)) << x;
    }
}

TEST(SinusoidalEmbed, HalfPrecisionLosesFineStructure) {
    Binary16Oracle oracle;
    SinusoidalConfig cfg;
    Rng rng(4);
    for (int t = 0; t < 500; ++t) {
        const double mz = rng.uniform(100, 1000);
        auto e64 = sinusoidal_embed(mz, cfg);
        auto e16 = sinusoidal_embed(mz, cfg, kHalf);
        auto want = sinusoidal_embed(oracle.round(mz), cfg);
        EXPECT_EQ(e16, want);
        double worst = 0.0;
        for (std::size_t i = 0; i < 20; ++i) worst = std::max(worst, std::fabs(e16[i] - e64[i]));
        EXPECT_GE(worst, 0.1) << mz;
    }
}

TEST(SinusoidalEmbed, FullEmulationRoundsEveryStep) {
    SinusoidalConfig cfg{std::pow(10.0, -2.5), std::pow(10.0, 3.3), 16};
    PrecisionMode full32{FloatFormat::Binary32, Emulation::FullEmulation};
    auto e = sinusoidal_embed(321.5, cfg, full32);
    for (double v : e) EXPECT_EQ(v, round_binary32(v));
    // The finest phases exceed the binary16 range well below 2000 Da.
    EXPECT_THROW(sinusoidal_embed(321.5, cfg, {FloatFormat::Binary16, Emulation::FullEmulation}), CastError);
    SinusoidalConfig coarse{1.0, 2000.0, 8};
    auto h = sinusoidal_embed(321.5, coarse, {FloatFormat::Binary16, Emulation::FullEmulation});
    for (double v : h) EXPECT_LE(std::fabs(v), 1.0);
}

TEST(Tokenize, Rounding) {
    TokenVocab v;
    EXPECT_EQ(tokenize_mz(123.456, v), 1235u);
    EXPECT_EQ(tokenize_mz(123.44999, v), 1234u);
    EXPECT_EQ(tokenize_mz(2000.5, v), v.unknown_token());
    EXPECT_EQ(v.size(), v.regular_tokens() + 1);
    TokenVocab half{0.5, 100.0};
    EXPECT_EQ(tokenize_mz(1.25, half), 2u);  // tie to even
    EXPECT_EQ(tokenize_mz(1.75, half), 4u);
}

TEST(Normalize, Examples) {
    Spectrum s;
    s.precursor = {300.0, 55.0};
    s.fragments = {{100.0, 10.0}, {150.0, 5.0}};
    auto n = normalize_intensities(s);
    EXPECT_EQ(n.fragments[0].intensity, 1.0);
    EXPECT_EQ(n.fragments[1].intensity, 0.5);
    EXPECT_EQ(n.precursor.intensity, 2.0);
    auto nn = normalize_intensities(n);
    EXPECT_EQ(nn.fragments, n.fragments);
    Spectrum one;
    one.fragments = {{50.0, 7.0}};
    EXPECT_EQ(normalize_intensities(one).fragments[0].intensity, 1.0);
    Spectrum zero;
    zero.fragments = {{50.0, 0.0}};
    EXPECT_THROW(normalize_intensities(zero), NumericError);
}

TEST(BinSpectrum, Examples) {
    Spectrum s;
    s.fragments = {{100.05, 1.0}};
    auto b = bin_spectrum(s, 0.1, 2000.0);
    ASSERT_EQ(b.size(), 20000u);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i], i == 1000 ? 1.0 : 0.0);
    Spectrum two;
    two.fragments = {{50.01, 0.6}, {50.02, 0.7}, {70.0, 1.0}};
    EXPECT_EQ(bin_spectrum(two, 0.1, 2000.0)[500], 1.0);
    Spectrum empty;
    auto z = bin_spectrum(empty, 0.1, 100.0);
    EXPECT_EQ(std::count(z.begin(), z.end(), 0.0), static_cast<long>(z.size()));
}

TEST(FractionalMz, Examples) {
    EXPECT_NEAR(fractional_mz(123.456), 0.456, 1e-12);
    EXPECT_EQ(fractional_mz(100.0), 0.0);
    EXPECT_EQ(fractional_mz(0.999), 0.999);
}

namespace {

SinPeakEmbedding<double> small_sin(std::uint64_t seed) {
    Rng rng(seed);
    return SinPeakEmbedding<double>({0.01, 1000.0, 8}, {}, 6, rng);
}

}  // namespace

TEST(PeakEmbedSin, ShapeAndIntensitySensitivity) {
    auto w = small_sin(1);
    auto a = peak_embed_sin<double>({250.123, 0.3}, w);
    auto b = peak_embed_sin<double>({250.123, 0.9}, w);
    ASSERT_EQ(a.shape(), (Shape{6}));
    double diff = 0.0;
    for (std::size_t i = 0; i < 6; ++i) diff += std::fabs(a[i] - b[i]);
    EXPECT_GT(diff, 1e-6);
}

TEST(PeakEmbedSin, FiniteDifferenceThroughBothBlocks) {
    auto w = small_sin(2);
    ParamList<double> params;
    w.collect("pe", params);
    const std::vector<Peak> peaks = {{123.4567, 0.4}, {88.1, 1.0}, {400.02, 2.0}};
    Rng rng(3);
    auto probe = sinspec::testing::random_tensor({3, 6}, rng, -1, 1, false);
    auto r = grad_check([&] { return sum(mul(w(std::span<const Peak>(peaks)), probe)); }, tensors_of(params));
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(PeakEmbedToken, CollisionAndSparseGradient) {
    Rng rng(5);
    TokenPeakEmbedding<double> w(TokenVocab{0.1, 50.0}, 4, rng);
    auto a = peak_embed_token<double>({12.31, 0.5}, w);
    auto b = peak_embed_token<double>({12.34, 0.5}, w);
    ASSERT_EQ(a.shape(), (Shape{4}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a[i], b[i]);

    backward(sum(add(peak_embed_token<double>({12.31, 0.5}, w), peak_embed_token<double>({40.0, 1.0}, w))));
    const std::size_t d = 4;
    for (std::size_t r = 0; r < w.table.dim(0); ++r) {
        double g = 0.0;
        for (std::size_t c = 0; c < d; ++c) g += std::fabs(w.table.grad()[r * d + c]);
        if (r == 123 || r == 400) EXPECT_GT(g, 0.0) << r;
        else EXPECT_EQ(g, 0.0) << r;
    }
}

TEST(PeakEmbed, TokenConstantOnCellsSinusoidalIsNot) {
    Rng rng(8);
    TokenPeakEmbedding<double> tok(TokenVocab{}, 6, rng);
    auto sin = small_sin(9);
    int sin_differs = 0;
    for (int t = 0; t < 100; ++t) {
        const double cell = std::floor(rng.uniform(50, 900)) + 0.1 * static_cast<double>(rng.uniform_index(10));
        const double a = cell - 0.04, b = cell + 0.04;
        auto ta = peak_embed_token<double>({a, 0.5}, tok), tb = peak_embed_token<double>({b, 0.5}, tok);
        for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(ta[i], tb[i]);
        auto sa = peak_embed_sin<double>({a, 0.5}, sin), sb = peak_embed_sin<double>({b, 0.5}, sin);
        double diff = 0.0;
        for (std::size_t i = 0; i < 6; ++i) diff += std::fabs(sa[i] - sb[i]);
        sin_differs += diff > 1e-9;
    }
    EXPECT_EQ(sin_differs, 100);
}

TEST(EmbeddingExport, HeaderAndRows) {
    std::vector<EmbeddingRow> rows = {{1.25, {0.5, -1.0}}, {2.5, {0.25, 2.0}}};
    auto text = embedding_export_text(rows, "binary64");
    EXPECT_EQ(text, "mz,frac_mz,precision,e0,e1\n1.2500,0.2500,binary64,0.5,-1\n2.5000,0.5000,binary64,0.25,2\n");
}

TEST(EmbeddingExport, FractionalNeighborError) {
    // Embedding equal to (cos, sin) of the fractional mass: neighbours share it.
    std::vector<EmbeddingRow> rows;
    for (int i = 0; i < 200; ++i) {
        const double mz = 100.0 + i * 0.37;
        const double f = fractional_mz(mz) * 2 * std::numbers::pi;
        rows.push_back({mz, {std::cos(f), std::sin(f)}});
    }
    EXPECT_LT(fractional_neighbor_error(rows), 0.02);
}
