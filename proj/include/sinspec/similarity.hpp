#pragma once

// Siamese training on molecular similarity: Tanimoto labels, pair sampling
// that is uniform over similarity bins, and the cosine-vs-label loop.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "sinspec/checkpoint.hpp"
#include "sinspec/config.hpp"
#include "sinspec/encoder.hpp"
#include "sinspec/errors.hpp"
#include "sinspec/labels.hpp"
#include "sinspec/optim.hpp"
#include "sinspec/split.hpp"

namespace sinspec {

struct TanimotoCounts {
    std::size_t intersection = 0;
    std::size_t union_size = 0;
};

inline TanimotoCounts tanimoto_counts(const Fingerprint& a, const Fingerprint& b) {
    if (a.width() != b.width())
        throw ContractError("fingerprint widths differ: " + std::to_string(a.width()) + " vs " + std::to_string(b.width()));
    TanimotoCounts c;
    for (std::size_t w = 0; w < a.words().size(); ++w) {
        c.intersection += static_cast<std::size_t>(std::popcount(a.words()[w] & b.words()[w]));
        c.union_size += static_cast<std::size_t>(std::popcount(a.words()[w] | b.words()[w]));
    }
    return c;
}

/// |a & b| / |a | b|; two empty fingerprints score 0.
inline double tanimoto(const Fingerprint& a, const Fingerprint& b) {
    const auto c = tanimoto_counts(a, b);
    return c.union_size == 0 ? 0.0 : static_cast<double>(c.intersection) / static_cast<double>(c.union_size);
}

struct PairSample {
    std::string a;
    std::string b;
    double label = 0.0;
};

/// Equal-width bins over [0, 1]; 1.0 falls in the last bin.
struct SimilarityBins {
    std::size_t count = 10;

    std::size_t bin_of(const TanimotoCounts& c) const {
        if (c.union_size == 0) return 0;
        return std::min(count - 1, count * c.intersection / c.union_size);
    }
    std::size_t bin_of(double s) const {
        return std::min(count - 1, static_cast<std::size_t>(std::floor(s * static_cast<double>(count))));
    }
};

/// Structure-pair reservoirs per similarity bin over one set of spectra.
class PairSampler {
public:
    static constexpr std::size_t kExactLimit = 2000;
    static constexpr std::size_t kReservoirCap = 4096;

    PairSampler(const LabelTable& labels, const std::vector<Spectrum>& spectra, SimilarityBins bins,
                std::uint64_t seed = 0)
        : bins_(bins) {
        if (bins.count == 0) throw ConfigError("similarity bin count must be positive");
        std::map<std::string, std::vector<std::string>> by_structure;
        for (const auto& s : spectra) by_structure[s.structure_id].push_back(s.id);
        for (auto& [st, ids] : by_structure) {
            std::sort(ids.begin(), ids.end());
            structures_.push_back(st);
            spectra_of_.push_back(ids);
            fingerprints_.push_back(&labels.at(st).fingerprint);
        }
        reservoirs_.assign(bins.count, {});
        const std::size_t n = structures_.size();
        if (n <= kExactLimit) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i; j < n; ++j) add(i, j);
        } else {
            // Rejection sampling: random pairs fill each bin up to the cap.
            auto rng = Rng::derive(seed, {0x7e5e});
            const std::size_t budget = 200 * n;
            for (std::size_t t = 0; t < budget; ++t) {
                const auto i = rng.uniform_index(n), j = rng.uniform_index(n);
                const auto c = tanimoto_counts(*fingerprints_[i], *fingerprints_[j]);
                auto& r = reservoirs_[bins_.bin_of(c)];
                if (r.size() < kReservoirCap) r.push_back({static_cast<std::uint32_t>(std::min(i, j)),
                                                           static_cast<std::uint32_t>(std::max(i, j)), ratio(c)});
            }
        }
        for (std::size_t b = 0; b < bins.count; ++b)
            if (!reservoirs_[b].empty()) reachable_.push_back(b);
    }

    const std::vector<std::size_t>& reachable_bins() const noexcept { return reachable_; }
    std::vector<std::size_t> unreachable_bins() const {
        std::vector<std::size_t> out;
        for (std::size_t b = 0; b < bins_.count; ++b)
            if (reservoirs_[b].empty()) out.push_back(b);
        return out;
    }
    std::size_t reservoir_size(std::size_t bin) const { return reservoirs_.at(bin).size(); }

    /// Bin uniformly among reachable bins, structure pair uniformly within the
    /// bin, then one spectrum uniformly per structure.
    std::vector<PairSample> sample(std::size_t count, Rng& rng) const {
        std::vector<PairSample> out;
        if (count == 0) return out;
        if (reachable_.empty()) throw SamplingError("no similarity bin is reachable in this spectrum set");
        out.reserve(count);
        for (std::size_t k = 0; k < count; ++k) {
            const auto& bin = reservoirs_[reachable_[rng.uniform_index(reachable_.size())]];
            const auto& e = bin[rng.uniform_index(bin.size())];
            const auto& sa = spectra_of_[e.i];
            const auto& sb = spectra_of_[e.j];
            const auto& a = sa[rng.uniform_index(sa.size())];
            const auto& b = sb[rng.uniform_index(sb.size())];
            out.push_back({a, b, e.label});
        }
        return out;
    }

private:
    struct Entry {
        std::uint32_t i, j;
        double label;
    };

    static double ratio(const TanimotoCounts& c) {
        return c.union_size == 0 ? 0.0 : static_cast<double>(c.intersection) / static_cast<double>(c.union_size);
    }

    void add(std::size_t i, std::size_t j) {
        const auto c = tanimoto_counts(*fingerprints_[i], *fingerprints_[j]);
        reservoirs_[bins_.bin_of(c)].push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), ratio(c)});
    }

    SimilarityBins bins_;
    std::vector<std::string> structures_;
    std::vector<std::vector<std::string>> spectra_of_;
    std::vector<const Fingerprint*> fingerprints_;
    std::vector<std::vector<Entry>> reservoirs_;
    std::vector<std::size_t> reachable_;
};

inline std::vector<PairSample> sample_uniform_pairs(const LabelTable& labels, const std::vector<Spectrum>& spectra,
                                                    SimilarityBins bins, std::size_t count, std::uint64_t seed) {
    if (count == 0) return {};
    PairSampler sampler(labels, spectra, bins, seed);
    auto rng = Rng::derive(seed, {0x9a1f});
    return sampler.sample(count, rng);
}

/// (cos(a, b) - label)^2 for one pair.
template <typename T>
Tensor<T> siamese_loss(const Tensor<T>& emb_a, const Tensor<T>& emb_b, double label) {
    return square(add_scalar(cosine_similarity(emb_a, emb_b), static_cast<T>(-label)));
}

/// Batch mean of the per-pair loss.
template <typename T>
Tensor<T> siamese_loss(const std::vector<Tensor<T>>& a, const std::vector<Tensor<T>>& b,
                       const std::vector<double>& labels) {
    if (a.size() != b.size() || a.size() != labels.size() || a.empty())
        throw ContractError("siamese_loss needs equally sized, non-empty batches");
    std::vector<Tensor<T>> terms;
    terms.reserve(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) terms.push_back(siamese_loss(a[k], b[k], labels[k]));
    return scale(add_n(terms), static_cast<T>(1.0 / static_cast<double>(a.size())));
}

struct TrainConfig {
    std::size_t epochs = 25;
    std::size_t max_epochs = 1000;
    std::size_t batch_size = 64;
    std::size_t pairs_per_epoch = 4096;
    std::size_t eval_pairs = 10000;
    std::size_t bins = 10;
    AdamConfig adam;
    std::uint64_t seed = 0;
    double stop_below = 0.0;  // stop once train MSE drops below this; 0 disables

    void validate() const {
        if (epochs > max_epochs)
            throw ConfigError("epochs " + std::to_string(epochs) + " exceeds the allowed maximum " +
                              std::to_string(max_epochs));
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (pairs_per_epoch == 0) throw ConfigError("pairs_per_epoch must be positive");
        if (bins == 0) throw ConfigError("bins must be positive");
        if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0 && adam.beta2 > 0.0 && adam.beta2 < 1.0))
            throw ConfigError("Adam betas must lie in (0, 1)");
        if (!(adam.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
        if (adam.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
        if (!(adam.clip > 0.0)) throw ConfigError("clip must be positive");
        if (stop_below < 0.0) throw ConfigError("stop_below must be non-negative");
    }

    void write(KeyValues& kv) const {
        kv.set("epochs", std::to_string(epochs));
        kv.set("max_epochs", std::to_string(max_epochs));
        kv.set("batch_size", std::to_string(batch_size));
        kv.set("pairs_per_epoch", std::to_string(pairs_per_epoch));
        kv.set("eval_pairs", std::to_string(eval_pairs));
        kv.set("bins", std::to_string(bins));
        kv.set("learning_rate", general(adam.learning_rate, 17));
        kv.set("beta1", general(adam.beta1, 17));
        kv.set("beta2", general(adam.beta2, 17));
        kv.set("epsilon", general(adam.epsilon, 17));
        kv.set("weight_decay", general(adam.weight_decay, 17));
        kv.set("clip", general(adam.clip, 17));
        kv.set("seed", std::to_string(seed));
        kv.set("stop_below", general(stop_below, 17));
    }

    static TrainConfig read(const KeyValues& kv) {
        TrainConfig c;
        c.epochs = kv.integer_or("epochs", c.epochs);
        c.max_epochs = kv.integer_or("max_epochs", c.max_epochs);
        c.batch_size = kv.integer_or("batch_size", c.batch_size);
        c.pairs_per_epoch = kv.integer_or("pairs_per_epoch", c.pairs_per_epoch);
        c.eval_pairs = kv.integer_or("eval_pairs", c.eval_pairs);
        c.bins = kv.integer_or("bins", c.bins);
        c.adam.learning_rate = kv.real_or("learning_rate", c.adam.learning_rate);
        c.adam.beta1 = kv.real_or("beta1", c.adam.beta1);
        c.adam.beta2 = kv.real_or("beta2", c.adam.beta2);
        c.adam.epsilon = kv.real_or("epsilon", c.adam.epsilon);
        c.adam.weight_decay = kv.real_or("weight_decay", c.adam.weight_decay);
        c.adam.clip = kv.real_or("clip", c.adam.clip);
        c.seed = kv.integer_or("seed", c.seed);
        c.stop_below = kv.real_or("stop_below", c.stop_below);
        c.validate();
        return c;
    }
};

/// Every pair a run will touch, fixed up front so a run can be replayed
/// from its pair-list file.
struct SiamesePlan {
    std::vector<std::vector<PairSample>> epochs;
    std::vector<PairSample> eval_train, eval_known, eval_novel;
};

inline SiamesePlan plan_siamese(const Dataset& data, const LabelTable& labels, const TrainConfig& cfg) {
    cfg.validate();
    SiamesePlan plan;
    const SimilarityBins bins{cfg.bins};
    if (data.train.empty()) throw SizingError("training split is empty");
    PairSampler train(labels, data.train, bins, cfg.seed);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        auto rng = Rng::derive(cfg.seed, {0xe90c, e});
        plan.epochs.push_back(train.sample(cfg.pairs_per_epoch, rng));
    }
    auto eval_rng = Rng::derive(cfg.seed, {0xe7a1});
    plan.eval_train = train.sample(cfg.eval_pairs, eval_rng);
    if (!data.known.empty()) {
        PairSampler known(labels, data.known, bins, cfg.seed);
        plan.eval_known = known.sample(cfg.eval_pairs, eval_rng);
    }
    if (!data.novel.empty()) {
        PairSampler novel(labels, data.novel, bins, cfg.seed);
        plan.eval_novel = novel.sample(cfg.eval_pairs, eval_rng);
    }
    return plan;
}

/// Pair-list cache: "set<TAB>epoch<TAB>spectrum_a<TAB>spectrum_b<TAB>label".
inline std::string pair_list_text(const SiamesePlan& plan) {
    std::string out = "set\tepoch\tspectrum_a\tspectrum_b\tlabel\n";
    auto rows = [&](const char* set, std::size_t epoch, const std::vector<PairSample>& v) {
        for (const auto& p : v)
            out += std::string(set) + "\t" + std::to_string(epoch) + "\t" + p.a + "\t" + p.b + "\t" + general(p.label, 17) + "\n";
    };
    for (std::size_t e = 0; e < plan.epochs.size(); ++e) rows("train", e + 1, plan.epochs[e]);
    rows("eval_train", 0, plan.eval_train);
    rows("eval_known", 0, plan.eval_known);
    rows("eval_novel", 0, plan.eval_novel);
    return out;
}

inline SiamesePlan parse_pair_list(std::string_view text) {
    SiamesePlan plan;
    std::size_t lineno = 0;
    for (auto line : lines_of(text)) {
        ++lineno;
        if (lineno == 1 || trim(line).empty()) continue;
        auto cols = split_view(line, '\t');
        if (cols.size() != 5) throw ParseError(lineno, "pair row needs 5 tab-separated columns");
        PairSample p{std::string(cols[2]), std::string(cols[3]), std::strtod(std::string(cols[4]).c_str(), nullptr)};
        const std::size_t epoch = std::strtoull(std::string(cols[1]).c_str(), nullptr, 10);
        if (cols[0] == "train") {
            if (epoch == 0) throw ParseError(lineno, "training pairs need an epoch >= 1");
            if (plan.epochs.size() < epoch) plan.epochs.resize(epoch);
            plan.epochs[epoch - 1].push_back(std::move(p));
        } else if (cols[0] == "eval_train") plan.eval_train.push_back(std::move(p));
        else if (cols[0] == "eval_known") plan.eval_known.push_back(std::move(p));
        else if (cols[0] == "eval_novel") plan.eval_novel.push_back(std::move(p));
        else throw ParseError(lineno, "unknown pair set '" + std::string(cols[0]) + "'");
    }
    return plan;
}

using SpectrumLookup = std::unordered_map<std::string, const Spectrum*>;

inline SpectrumLookup lookup_of(const std::vector<Spectrum>& spectra) {
    SpectrumLookup m;
    for (const auto& s : spectra) m[s.id] = &s;
    return m;
}

inline const Spectrum& find_spectrum(const SpectrumLookup& lookup, const std::string& id) {
    auto it = lookup.find(id);
    if (it == lookup.end()) throw LoadError("unknown spectrum id " + id);
    return *it->second;
}

/// Mean (cos - label)^2 over `pairs` in inference mode; NaN for no pairs.
template <typename T>
double pair_mse(const SpectrumEncoder<T>& model, const std::vector<PairSample>& pairs, const SpectrumLookup& lookup,
                std::size_t threads = 1) {
    if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::map<std::string, std::size_t> slot;
    std::vector<const Spectrum*> unique;
    for (const auto& p : pairs)
        for (const auto* id : {&p.a, &p.b})
            if (slot.emplace(*id, unique.size()).second) unique.push_back(&find_spectrum(lookup, *id));
    const auto emb = infer_embeddings(model, unique, threads);
    auto cosine = [](const std::vector<double>& x, const std::vector<double>& y) {
        double xy = 0, xx = 0, yy = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            xy += x[i] * y[i];
            xx += x[i] * x[i];
            yy += y[i] * y[i];
        }
        if (!(xx > 0.0 && yy > 0.0)) throw NumericError("zero-norm embedding during evaluation");
        return xy / (std::sqrt(xx) * std::sqrt(yy));
    };
    double total = 0.0;
    for (const auto& p : pairs) {
        const double d = cosine(emb[slot.at(p.a)], emb[slot.at(p.b)]) - p.label;
        total += d * d;
    }
    return total / static_cast<double>(pairs.size());
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_mse = 0.0;
    double known_mse = 0.0;
    double novel_mse = 0.0;
    double seconds = 0.0;
};

struct TrainingLog {
    std::size_t eval_pairs_train = 0, eval_pairs_known = 0, eval_pairs_novel = 0;
    std::vector<EpochRecord> epochs;

    /// Tab-separated; NaN metrics print as NA. Wall time varies run to run,
    /// so `with_time = false` gives a reproducible rendering.
    std::string text(bool with_time = true) const {
        auto num = [](double v) { return std::isnan(v) ? std::string("NA") : general(v, 9); };
        std::string out = "# eval_pairs train=" + std::to_string(eval_pairs_train) + " known=" +
                          std::to_string(eval_pairs_known) + " novel=" + std::to_string(eval_pairs_novel) + "\n";
        out += with_time ? "epoch\ttrain_mse\tknown_mse\tnovel_mse\twall_seconds\n" : "epoch\ttrain_mse\tknown_mse\tnovel_mse\n";
        for (const auto& r : epochs) {
            out += std::to_string(r.epoch) + "\t" + num(r.train_mse) + "\t" + num(r.known_mse) + "\t" + num(r.novel_mse);
            if (with_time) out += "\t" + fixed(r.seconds, 3);
            out += "\n";
        }
        return out;
    }
};

struct SiameseOptions {
    std::size_t threads = 1;
    std::string divergence_snapshot;  // checkpoint path written on divergence; empty disables
    std::uint64_t config_digest = 0;
};

/// Runs the planned epochs. Within a batch each distinct spectrum is encoded
/// once (one dropout mask) and reused by every pair that mentions it.
template <typename T>
TrainingLog train_siamese(SpectrumEncoder<T>& model, const SiamesePlan& plan, const SpectrumLookup& lookup,
                          const TrainConfig& cfg, const SiameseOptions& opt = {}) {
    cfg.validate();
    TrainingLog log;
    log.eval_pairs_train = plan.eval_train.size();
    log.eval_pairs_known = plan.eval_known.size();
    log.eval_pairs_novel = plan.eval_novel.size();
    auto named = model.parameters();
    auto params = tensors_of(named);
    OptimizerState<T> state(cfg.adam, params);
    const auto start = std::chrono::steady_clock::now();

    for (std::size_t e = 0; e < plan.epochs.size(); ++e) {
        const auto& pairs = plan.epochs[e];
        for (std::size_t b0 = 0, batch = 0; b0 < pairs.size(); b0 += cfg.batch_size, ++batch) {
            const std::size_t b1 = std::min(pairs.size(), b0 + cfg.batch_size);
            std::map<std::string, Tensor<T>> emb;
            std::vector<Tensor<T>> as, bs;
            std::vector<double> labels;
            for (std::size_t k = b0; k < b1; ++k) {
                for (const auto* id : {&pairs[k].a, &pairs[k].b})
                    if (!emb.count(*id)) {
                        const auto seed = Rng::derive(cfg.seed, {0xd0, e, batch, emb.size()}).next_u64();
                        emb.emplace(*id, model.encode(find_spectrum(lookup, *id), RunMode::Train, seed));
                    }
                as.push_back(emb.at(pairs[k].a));
                bs.push_back(emb.at(pairs[k].b));
                labels.push_back(pairs[k].label);
            }
            auto loss = siamese_loss(as, bs, labels);
            if (!std::isfinite(static_cast<double>(loss.item()))) {
                std::string where = "epoch " + std::to_string(e + 1) + " batch " + std::to_string(batch + 1);
                if (!opt.divergence_snapshot.empty()) {
                    save_checkpoint(opt.divergence_snapshot, snapshot(named, opt.config_digest));
                    where += "; weights saved to " + opt.divergence_snapshot;
                }
                throw DivergenceError("training loss is not finite at " + where);
            }
            backward(loss);
            clip_gradients<T>(params, cfg.adam.clip);
            adam_step<T>(params, state);
            zero_grads<T>(params);
        }
        EpochRecord r;
        r.epoch = e + 1;
        r.train_mse = pair_mse(model, plan.eval_train, lookup, opt.threads);
        r.known_mse = pair_mse(model, plan.eval_known, lookup, opt.threads);
        r.novel_mse = pair_mse(model, plan.eval_novel, lookup, opt.threads);
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log.epochs.push_back(r);
        if (cfg.stop_below > 0.0 && r.train_mse < cfg.stop_below) break;
    }
    return log;
}

}  // namespace sinspec
