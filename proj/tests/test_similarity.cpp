#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "sinspec/similarity.hpp"
#include "sinspec/synthetic.hpp"
#include "support/oracles.hpp"

using namespace sinspec;
using sinspec::testing::tanimoto_oracle;
using sinspec::synthetic::ToyData;

namespace {

Fingerprint fp(std::size_t width, std::vector<std::size_t> bits) { return Fingerprint::from_bits(width, bits); }

EncoderConfig tiny_encoder(std::size_t d = 16) {
    EncoderConfig c;
    c.dim = d;
    c.layers = 1;
    c.heads = 2;
    c.ff_hidden = d;
    c.dropout = 0.0;
    return c;
}

Dataset all_train(const ToyData& d) {
    Dataset ds;
    ds.train = d.spectra;
    return ds;
}

}  // namespace

TEST(Tanimoto, Examples) {
    EXPECT_DOUBLE_EQ(tanimoto(fp(8, {1, 2, 3}), fp(8, {2, 3, 4})), 0.5);
    EXPECT_DOUBLE_EQ(tanimoto(fp(8, {}), fp(8, {})), 0.0);
    EXPECT_DOUBLE_EQ(tanimoto(fp(8, {0}), fp(8, {})), 0.0);
    EXPECT_DOUBLE_EQ(tanimoto(fp(8, {0, 7}), fp(8, {0, 7})), 1.0);
    EXPECT_THROW(tanimoto(fp(8, {}), fp(16, {})), ContractError);
}

TEST(Tanimoto, MatchesSetOracleAndIsSymmetricBounded) {
    Rng rng(21);
    for (int t = 0; t < 300; ++t) {
        const std::size_t w = 4 * (1 + rng.uniform_index(80));
        std::set<std::size_t> sa, sb;
        for (std::size_t i = 0; i < w; ++i) {
            if (rng.bernoulli(0.3)) sa.insert(i);
            if (rng.bernoulli(0.3)) sb.insert(i);
        }
        const auto a = fp(w, {sa.begin(), sa.end()}), b = fp(w, {sb.begin(), sb.end()});
        const double s = tanimoto(a, b);
        EXPECT_DOUBLE_EQ(s, tanimoto_oracle(sa, sb));
        EXPECT_EQ(s, tanimoto(b, a));
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
        if (!sa.empty()) {
            EXPECT_EQ(tanimoto(a, a), 1.0);
        }
    }
}

TEST(SimilarityBins, EdgesUseExactCounts) {
    SimilarityBins bins{10};
    EXPECT_EQ(bins.bin_of(TanimotoCounts{3, 10}), 3u);  // 0.3 exactly, not 0.29999
    EXPECT_EQ(bins.bin_of(TanimotoCounts{10, 10}), 9u);
    EXPECT_EQ(bins.bin_of(TanimotoCounts{0, 0}), 0u);
    EXPECT_EQ(bins.bin_of(0.999), 9u);
    EXPECT_EQ(bins.bin_of(1.0), 9u);
}

TEST(PairSampler, UniformOverReachableBins) {
    const auto d = sinspec::synthetic::uniform_bins_data();
    PairSampler sampler(d.labels, d.spectra, SimilarityBins{10});
    ASSERT_EQ(sampler.reachable_bins().size(), 10u);
    EXPECT_TRUE(sampler.unreachable_bins().empty());
    auto rng = Rng::derive(5, {1});
    const std::size_t n = 10000;
    const auto pairs = sampler.sample(n, rng);
    ASSERT_EQ(pairs.size(), n);
    std::map<std::string, std::string> structure_of;
    for (const auto& s : d.spectra) structure_of[s.id] = s.structure_id;
    std::vector<double> counts(10, 0.0);
    for (const auto& p : pairs) {
        const double label = tanimoto(d.labels.at(structure_of[p.a]).fingerprint, d.labels.at(structure_of[p.b]).fingerprint);
        EXPECT_EQ(label, p.label);
        counts[SimilarityBins{10}.bin_of(label)] += 1.0;
    }
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
    EXPECT_LT(chi2, 21.666);  // chi-square, 9 dof, p = 0.01
}

TEST(PairSampler, UnreachableBinsReportedAndSkipped) {
    ToyData d;
    d.labels.insert({"A", fp(4, {0, 1}), {}});
    d.labels.insert({"B", fp(4, {2, 3}), {}});
    Rng r(1);
    d.spectra.push_back(sinspec::synthetic::make_spectrum("a", "A", 300, {100}, r, 0));
    d.spectra.push_back(sinspec::synthetic::make_spectrum("b", "B", 300, {100}, r, 0));
    PairSampler sampler(d.labels, d.spectra, SimilarityBins{10});
    EXPECT_EQ(sampler.reachable_bins(), (std::vector<std::size_t>{0, 9}));
    EXPECT_EQ(sampler.unreachable_bins().size(), 8u);
    auto rng = Rng::derive(1, {});
    for (const auto& p : sampler.sample(200, rng)) EXPECT_TRUE(p.label == 0.0 || p.label == 1.0);
}

TEST(PairSampler, ZeroCountAndEmptySet) {
    const auto d = sinspec::synthetic::uniform_bins_data();
    EXPECT_TRUE(sample_uniform_pairs(d.labels, d.spectra, SimilarityBins{10}, 0, 1).empty());
    PairSampler empty(d.labels, {}, SimilarityBins{10});
    auto rng = Rng::derive(1, {});
    EXPECT_TRUE(empty.sample(0, rng).empty());
    EXPECT_THROW(empty.sample(3, rng), SamplingError);
    EXPECT_THROW(PairSampler(d.labels, d.spectra, SimilarityBins{0}), ConfigError);
}

TEST(PairSampler, DeterministicForSeed) {
    const auto d = sinspec::synthetic::uniform_bins_data();
    auto a = sample_uniform_pairs(d.labels, d.spectra, SimilarityBins{10}, 500, 9);
    auto b = sample_uniform_pairs(d.labels, d.spectra, SimilarityBins{10}, 500, 9);
    auto c = sample_uniform_pairs(d.labels, d.spectra, SimilarityBins{10}, 500, 10);
    ASSERT_EQ(a.size(), b.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].a, b[i].a);
        EXPECT_EQ(a[i].b, b[i].b);
        differs = differs || a[i].a != c[i].a || a[i].b != c[i].b;
    }
    EXPECT_TRUE(differs);
}

TEST(SiameseLoss, ExamplesAndSymmetry) {
    Tensor<double> a({3}, {1, 0, 0}), b({3}, {0, 2, 0}), c({3}, {3, 0, 0});
    EXPECT_DOUBLE_EQ(siamese_loss(a, b, 0.0).item(), 0.0);
    EXPECT_DOUBLE_EQ(siamese_loss(a, b, 1.0).item(), 1.0);
    EXPECT_DOUBLE_EQ(siamese_loss(a, c, 1.0).item(), 0.0);
    EXPECT_DOUBLE_EQ(siamese_loss(a, c, 0.25).item(), 0.5625);
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        Tensor<double> x(Shape{5}, std::vector<double>(5)), y(Shape{5}, std::vector<double>(5));
        for (std::size_t i = 0; i < 5; ++i) {
            x.mutable_data()[i] = rng.uniform(-1, 1);
            y.mutable_data()[i] = rng.uniform(-1, 1);
        }
        const double l = rng.uniform();
        EXPECT_NEAR(siamese_loss(x, y, l).item(), siamese_loss(y, x, l).item(), 1e-15);
        EXPECT_GE(siamese_loss(x, y, l).item(), 0.0);
    }
    EXPECT_DOUBLE_EQ(siamese_loss<double>({a, a}, {b, c}, {1.0, 1.0}).item(), 0.5);
    EXPECT_THROW(siamese_loss(std::vector<Tensor<double>>{}, std::vector<Tensor<double>>{}, std::vector<double>{}), ContractError);
}

TEST(TrainConfig, ValidationAndRoundTrip) {
    TrainConfig c;
    c.epochs = 1001;
    EXPECT_THROW(c.validate(), ConfigError);
    c.epochs = 3;
    c.adam.learning_rate = 1e-3;
    KeyValues kv;
    c.write(kv);
    auto back = TrainConfig::read(kv);
    EXPECT_EQ(back.epochs, 3u);
    EXPECT_EQ(back.adam.learning_rate, 1e-3);
    kv.set("batch_size", "0");
    EXPECT_THROW(TrainConfig::read(kv), ConfigError);
}

TEST(SiamesePlan, PairListRoundTrip) {
    const auto d = sinspec::synthetic::toy_siamese_data(1);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.pairs_per_epoch = 7;
    cfg.eval_pairs = 5;
    const auto plan = plan_siamese(all_train(d), d.labels, cfg);
    ASSERT_EQ(plan.epochs.size(), 2u);
    EXPECT_TRUE(plan.eval_known.empty());
    const auto text = pair_list_text(plan);
    const auto back = parse_pair_list(text);
    EXPECT_EQ(pair_list_text(back), text);
    EXPECT_THROW(parse_pair_list("h\nbogus\t0\ta\tb\t1\n"), ParseError);
}

TEST(TrainSiamese, ZeroEpochsLeavesWeightsUnchanged) {
    const auto d = sinspec::synthetic::toy_siamese_data(2);
    TrainConfig cfg;
    cfg.epochs = 0;
    SpectrumEncoder<double> model(tiny_encoder(), 3);
    const auto before = encode_checkpoint(snapshot(model.parameters(), 0));
    const auto lookup = lookup_of(d.spectra);
    const auto log = train_siamese(model, plan_siamese(all_train(d), d.labels, cfg), lookup, cfg);
    EXPECT_TRUE(log.epochs.empty());
    EXPECT_EQ(encode_checkpoint(snapshot(model.parameters(), 0)), before);
}

TEST(TrainSiamese, SameSeedGivesIdenticalWeightsAndLog) {
    const auto d = sinspec::synthetic::toy_siamese_data(3);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.pairs_per_epoch = 32;
    cfg.batch_size = 8;
    cfg.eval_pairs = 20;
    cfg.adam.learning_rate = 1e-3;
    cfg.seed = 17;
    auto enc = tiny_encoder();
    enc.dropout = 0.1;
    const auto lookup = lookup_of(d.spectra);
    std::vector<std::string> weights;
    std::vector<std::string> logs;
    for (int run = 0; run < 2; ++run) {
        SpectrumEncoder<float> model(enc, 4);
        const auto log = train_siamese(model, plan_siamese(all_train(d), d.labels, cfg), lookup, cfg, {2, "", 0});
        weights.push_back(encode_checkpoint(snapshot(model.parameters(), 0)));
        logs.push_back(log.text(false));
    }
    EXPECT_EQ(weights[0], weights[1]);
    EXPECT_EQ(logs[0], logs[1]);
}

TEST(TrainSiamese, LossDecreasesOnToyData) {
    const auto d = sinspec::synthetic::toy_siamese_data(4);
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.pairs_per_epoch = 64;
    cfg.batch_size = 16;
    cfg.eval_pairs = 100;
    cfg.adam.learning_rate = 3e-3;
    cfg.adam.weight_decay = 0.0;
    const auto lookup = lookup_of(d.spectra);
    SpectrumEncoder<double> model(tiny_encoder(), 5);
    const auto plan = plan_siamese(all_train(d), d.labels, cfg);
    const double start = pair_mse(model, plan.eval_train, lookup);
    const auto log = train_siamese(model, plan, lookup, cfg);
    ASSERT_EQ(log.epochs.size(), 15u);
    EXPECT_LT(log.epochs.back().train_mse, 0.5 * start);
    EXPECT_TRUE(std::isnan(log.epochs.back().known_mse));
    EXPECT_NE(log.text(false).find("\tNA\tNA"), std::string::npos);
}
