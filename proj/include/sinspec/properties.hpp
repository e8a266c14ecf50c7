#pragma once

// Property regression from spectra: label standardization, the transformer
// head, the binned feed-forward baseline, R² evaluation and training.

#include <array>
#include <chrono>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sinspec/checkpoint.hpp"
#include "sinspec/embedding.hpp"
#include "sinspec/encoder.hpp"
#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"
#include "sinspec/labels.hpp"
#include "sinspec/optim.hpp"
#include "sinspec/parallel.hpp"
#include "sinspec/similarity.hpp"
#include "sinspec/split.hpp"

namespace sinspec {

/// Per-property standardization fitted on training labels only.
struct LabelScaler {
    PropertyVector mean{};
    PropertyVector sd{};

    static LabelScaler fit(const std::vector<PropertyVector>& rows) {
        if (rows.size() < 2) throw SizingError("label scaler needs at least two training molecules");
        LabelScaler s;
        const double n = static_cast<double>(rows.size());
        for (std::size_t p = 0; p < kNumProperties; ++p) {
            double mu = 0.0;
            for (const auto& r : rows) mu += r[p];
            mu /= n;
            double var = 0.0;
            for (const auto& r : rows) var += (r[p] - mu) * (r[p] - mu);
            s.mean[p] = mu;
            s.sd[p] = std::sqrt(var / n);
            if (!(s.sd[p] > 0.0))
                throw EvaluationError("property '" + std::string(kPropertyKeys[p]) + "' is constant on the training split");
        }
        return s;
    }

    PropertyVector apply(const PropertyVector& x) const {
        PropertyVector y;
        for (std::size_t p = 0; p < kNumProperties; ++p) y[p] = (x[p] - mean[p]) / sd[p];
        return y;
    }

    PropertyVector invert(const PropertyVector& z) const {
        PropertyVector y;
        for (std::size_t p = 0; p < kNumProperties; ++p) y[p] = sd[p] * z[p] + mean[p];
        return y;
    }

    void write(KeyValues& kv) const {
        for (std::size_t p = 0; p < kNumProperties; ++p) {
            kv.set("scaler.mean." + std::string(kPropertyKeys[p]), general(mean[p], 17));
            kv.set("scaler.sd." + std::string(kPropertyKeys[p]), general(sd[p], 17));
        }
    }

    static LabelScaler read(const KeyValues& kv) {
        LabelScaler s;
        for (std::size_t p = 0; p < kNumProperties; ++p) {
            s.mean[p] = kv.real("scaler.mean." + std::string(kPropertyKeys[p]));
            s.sd[p] = kv.real("scaler.sd." + std::string(kPropertyKeys[p]));
            if (!(s.sd[p] > 0.0)) throw ConfigError("scaler standard deviation must be positive");
        }
        return s;
    }
};

/// Training-split labels, one row per structure.
inline std::vector<PropertyVector> structure_labels(const std::vector<Spectrum>& train, const LabelTable& labels) {
    std::set<std::string> seen;
    std::vector<PropertyVector> rows;
    for (const auto& s : train)
        if (seen.insert(s.structure_id).second) rows.push_back(labels.at(s.structure_id).properties);
    return rows;
}

/// 1 - SS_res / SS_tot.
inline double r2_score(const std::vector<double>& predicted, const std::vector<double>& actual) {
    if (predicted.size() != actual.size()) throw ContractError("r2_score: length mismatch");
    if (actual.size() < 2) throw ContractError("r2_score needs at least two points");
    double mu = 0.0;
    for (double y : actual) mu += y;
    mu /= static_cast<double>(actual.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
        ss_tot += (actual[i] - mu) * (actual[i] - mu);
    }
    if (!(ss_tot > 0.0)) throw EvaluationError("r2_score is undefined for constant targets");
    return 1.0 - ss_res / ss_tot;
}

// ---------------------------------------------------------------------------
// Models

/// Encoder embedding followed by FF(d -> d -> 10).
template <typename T>
class PropertyModel {
public:
    PropertyModel() = default;
    PropertyModel(const EncoderConfig& cfg, std::uint64_t seed)
        : encoder_(cfg, seed) {
        auto rng = Rng::derive(seed, {0x4ead});
        head_ = FeedForward<T>(cfg.dim, cfg.dim, kNumProperties, rng);
    }

    /// Standardized predictions, shape [10].
    Tensor<T> forward(const Spectrum& s, RunMode mode = RunMode::Infer, std::uint64_t seed = 0) const {
        return reshape(head_(reshape(encoder_.encode(s, mode, seed), {1, encoder_.dim()})), {kNumProperties});
    }

    ParamList<T> parameters() const {
        auto out = encoder_.parameters();
        head_.collect("head", out);
        return out;
    }

    const SpectrumEncoder<T>& encoder() const { return encoder_; }

private:
    SpectrumEncoder<T> encoder_;
    FeedForward<T> head_;
};

struct BaselineConfig {
    double bin_width = 0.1;
    double max_mz = 2000.0;
    std::size_t hidden = 64;  // 2 * d by default

    void validate() const {
        if (!(bin_width > 0.0)) throw ConfigError("baseline bin_width must be positive");
        if (!(max_mz > bin_width)) throw ConfigError("baseline max_mz must exceed bin_width");
        if (hidden == 0) throw ConfigError("baseline hidden width must be positive");
    }
    void write(KeyValues& kv) const {
        kv.set("baseline_bin_width", general(bin_width, 17));
        kv.set("baseline_max_mz", general(max_mz, 17));
        kv.set("baseline_hidden", std::to_string(hidden));
    }
    static BaselineConfig read(const KeyValues& kv, std::size_t dim) {
        BaselineConfig c;
        c.hidden = 2 * dim;
        c.bin_width = kv.real_or("baseline_bin_width", c.bin_width);
        c.max_mz = kv.real_or("baseline_max_mz", c.max_mz);
        c.hidden = kv.integer_or("baseline_hidden", c.hidden);
        c.validate();
        return c;
    }
};

/// Binned spectrum -> Linear(h) -> ReLU -> Linear(h) -> ReLU -> Linear(10).
template <typename T>
class BaselineModel {
public:
    BaselineModel() = default;
    BaselineModel(const BaselineConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        auto rng = Rng::derive(seed, {0xba5e});
        const auto bins = bin_count(cfg.bin_width, cfg.max_mz);
        first_ = Linear<T>(bins, cfg.hidden, rng);
        second_ = Linear<T>(cfg.hidden, cfg.hidden, rng);
        out_ = Linear<T>(cfg.hidden, kNumProperties, rng);
    }

    Tensor<T> forward(const Spectrum& s, RunMode = RunMode::Infer, std::uint64_t = 0) const {
        const auto b = bin_spectrum(s, cfg_.bin_width, cfg_.max_mz);
        Tensor<T> x({1, b.size()}, std::vector<T>(b.begin(), b.end()));
        return reshape(out_(relu(second_(relu(first_(x))))), {kNumProperties});
    }

    ParamList<T> parameters() const {
        ParamList<T> out;
        first_.collect("baseline.l1", out);
        second_.collect("baseline.l2", out);
        out_.collect("baseline.out", out);
        return out;
    }

    const BaselineConfig& config() const { return cfg_; }

private:
    BaselineConfig cfg_;
    Linear<T> first_, second_, out_;
};

/// Natural-unit predictions in input order.
template <typename Model>
std::vector<PropertyVector> predict_properties(const Model& model, const LabelScaler& scaler,
                                               const std::vector<Spectrum>& spectra, std::size_t threads = 1) {
    std::vector<PropertyVector> out(spectra.size());
    parallel_for(spectra.size(), threads, [&](std::size_t i) {
        NoGradGuard guard;
        const auto y = model.forward(spectra[i]);
        PropertyVector z;
        for (std::size_t p = 0; p < kNumProperties; ++p) z[p] = static_cast<double>(y[p]);
        out[i] = scaler.invert(z);
    });
    return out;
}

/// Per-property R² over spectra; nullopt where the metric is undefined
/// (fewer than two spectra or a constant property in the set).
struct PropertyScores {
    std::array<std::optional<double>, kNumProperties> r2{};
    std::size_t spectra = 0;

    std::optional<double> average() const {
        double total = 0.0;
        std::size_t n = 0;
        for (const auto& v : r2)
            if (v) total += *v, ++n;
        if (n == 0) return std::nullopt;
        return total / static_cast<double>(n);
    }
};

inline PropertyScores score_properties(const std::vector<PropertyVector>& predicted, const std::vector<Spectrum>& spectra,
                                       const LabelTable& labels) {
    PropertyScores sc;
    sc.spectra = spectra.size();
    for (std::size_t p = 0; p < kNumProperties; ++p) {
        std::vector<double> pr, ac;
        for (std::size_t i = 0; i < spectra.size(); ++i) {
            pr.push_back(predicted[i][p]);
            ac.push_back(labels.at(spectra[i].structure_id).properties[p]);
        }
        try {
            sc.r2[p] = r2_score(pr, ac);
        } catch (const EvaluationError&) {
        } catch (const ContractError&) {
        }
    }
    return sc;
}

template <typename Model>
PropertyScores evaluate_properties(const Model& model, const LabelScaler& scaler, const std::vector<Spectrum>& spectra,
                                   const LabelTable& labels, std::size_t threads = 1) {
    return score_properties(predict_properties(model, scaler, spectra, threads), spectra, labels);
}

/// Property, known R², novel R², then the mean over properties.
inline std::string property_report(const PropertyScores& known, const PropertyScores& novel) {
    auto num = [](const std::optional<double>& v) { return v ? fixed(*v, 6) : std::string("NA"); };
    std::string out = "# r2 computed per spectrum; known spectra=" + std::to_string(known.spectra) +
                      " novel spectra=" + std::to_string(novel.spectra) + "\n";
    out += "property\tknown_r2\tnovel_r2\n";
    for (std::size_t p = 0; p < kNumProperties; ++p)
        out += std::string(kPropertyKeys[p]) + "\t" + num(known.r2[p]) + "\t" + num(novel.r2[p]) + "\n";
    out += "average\t" + num(known.average()) + "\t" + num(novel.average()) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Training

/// Mean over the batch of the mean squared error across all ten outputs.
template <typename T>
Tensor<T> property_loss(const std::vector<Tensor<T>>& predictions, const std::vector<PropertyVector>& targets) {
    if (predictions.size() != targets.size() || predictions.empty())
        throw ContractError("property_loss needs equally sized, non-empty batches");
    std::vector<Tensor<T>> terms;
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        std::vector<T> t(targets[k].begin(), targets[k].end());
        terms.push_back(mse_loss(predictions[k], Tensor<T>({kNumProperties}, std::move(t))));
    }
    return scale(add_n(terms), static_cast<T>(1.0 / static_cast<double>(terms.size())));
}

struct PropertyEpoch {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // standardized MSE, inference mode
    std::optional<double> known_r2, novel_r2;
    double seconds = 0.0;
};

struct PropertyLog {
    std::vector<PropertyEpoch> epochs;

    std::string text(bool with_time = true) const {
        auto num = [](const std::optional<double>& v) { return v ? general(*v, 9) : std::string("NA"); };
        std::string out = with_time ? "epoch\ttrain_loss\tknown_r2\tnovel_r2\twall_seconds\n"
                                    : "epoch\ttrain_loss\tknown_r2\tnovel_r2\n";
        for (const auto& r : epochs) {
            out += std::to_string(r.epoch) + "\t" + general(r.train_loss, 9) + "\t" + num(r.known_r2) + "\t" + num(r.novel_r2);
            if (with_time) out += "\t" + fixed(r.seconds, 3);
            out += "\n";
        }
        return out;
    }
};

template <typename Model>
double scaled_mse(const Model& model, const LabelScaler& scaler, const std::vector<Spectrum>& spectra,
                  const LabelTable& labels, std::size_t threads) {
    const auto pred = predict_properties(model, scaler, spectra, threads);
    double total = 0.0;
    for (std::size_t i = 0; i < spectra.size(); ++i) {
        const auto z = scaler.apply(pred[i]), t = scaler.apply(labels.at(spectra[i].structure_id).properties);
        for (std::size_t p = 0; p < kNumProperties; ++p) total += (z[p] - t[p]) * (z[p] - t[p]);
    }
    return total / static_cast<double>(spectra.size() * kNumProperties);
}

/// Shuffled mini-batches of training spectra; clip, Adam and decoupled decay
/// per step. R² on known and novel spectra is logged after every epoch.
template <typename T, typename Model>
PropertyLog train_properties(Model& model, const Dataset& data, const LabelTable& labels, const LabelScaler& scaler,
                             const TrainConfig& cfg, const SiameseOptions& opt = {}) {
    cfg.validate();
    if (data.train.empty()) throw SizingError("training split is empty");
    auto named = model.parameters();
    auto params = tensors_of(named);
    OptimizerState<T> state(cfg.adam, params);
    PropertyLog log;
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(data.train.size());
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto rng = Rng::derive(cfg.seed, {0x960e, e});
        rng.shuffle(order);
        for (std::size_t b0 = 0, batch = 0; b0 < order.size(); b0 += cfg.batch_size, ++batch) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            std::vector<Tensor<T>> preds;
            std::vector<PropertyVector> targets;
            for (std::size_t k = b0; k < b1; ++k) {
                const auto& s = data.train[order[k]];
                const auto seed = Rng::derive(cfg.seed, {0xd1, e, batch, k - b0}).next_u64();
                preds.push_back(model.forward(s, RunMode::Train, seed));
                targets.push_back(scaler.apply(labels.at(s.structure_id).properties));
            }
            auto loss = property_loss(preds, targets);
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
        PropertyEpoch r;
        r.epoch = e + 1;
        r.train_loss = scaled_mse(model, scaler, data.train, labels, opt.threads);
        if (!data.known.empty()) r.known_r2 = evaluate_properties(model, scaler, data.known, labels, opt.threads).average();
        if (!data.novel.empty()) r.novel_r2 = evaluate_properties(model, scaler, data.novel, labels, opt.threads).average();
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log.epochs.push_back(r);
        if (cfg.stop_below > 0.0 && r.train_loss < cfg.stop_below) break;
    }
    return log;
}

}  // namespace sinspec
