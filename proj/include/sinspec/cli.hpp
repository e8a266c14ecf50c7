#pragma once

// The sinspec command line: prepare, train, eval, search, predict and
// export-embeddings over a flat key=value run config. Exit codes: 0 on
// success, 1 on runtime failure, 2 on configuration or input errors.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "sinspec/cleaning.hpp"
#include "sinspec/config.hpp"
#include "sinspec/embedding.hpp"
#include "sinspec/labels.hpp"
#include "sinspec/mgf.hpp"
#include "sinspec/model_io.hpp"
#include "sinspec/properties.hpp"
#include "sinspec/search.hpp"
#include "sinspec/similarity.hpp"
#include "sinspec/split.hpp"

namespace sinspec::cli {

namespace fs = std::filesystem;

inline constexpr std::uint64_t kRunSchemaVersion = 1;

inline const std::set<std::string>& known_run_keys() {
    static const std::set<std::string> keys = {
        // run
        "schema_version", "spectra", "fingerprints", "properties", "workdir", "model", "queries", "seed", "threads",
        "mode", "novel_structures", "known_spectra", "top_k", "threshold", "export_min", "export_max", "export_step",
        // encoder
        "dim", "layers", "heads", "ff_hidden", "dropout", "embedding", "lambda_min", "lambda_max", "token_resolution",
        "token_max_mz", "precision", "emulation", "max_fragments",
        // training
        "epochs", "max_epochs", "batch_size", "pairs_per_epoch", "eval_pairs", "bins", "learning_rate", "beta1", "beta2",
        "epsilon", "weight_decay", "clip", "stop_below",
        // baseline
        "baseline_bin_width", "baseline_max_mz", "baseline_hidden"};
    return keys;
}

/// Command-line overrides; empty strings mean "not given".
struct Flags {
    std::string config;
    std::string seed, threads, precision, embedding, mode;
};

/// The run config file with flag overrides applied and checked.
inline KeyValues load_run_config(const Flags& f) {
    const fs::path path = f.config;
    if (!fs::is_regular_file(path)) throw LoadError("config file not found: " + path.string());
    auto kv = KeyValues::parse(read_file(path));
    if (!kv.has("schema_version")) throw ConfigError(path.string() + ": missing schema_version");
    if (kv.integer("schema_version") != kRunSchemaVersion)
        throw ConfigError(path.string() + ": unsupported schema_version " + kv.str("schema_version"));
    for (const auto& [k, v] : kv.entries())
        if (!known_run_keys().count(k)) throw ConfigError(path.string() + ": unknown key '" + k + "'");
    if (!f.seed.empty()) kv.set("seed", f.seed);
    if (!f.threads.empty()) kv.set("threads", f.threads);
    if (!f.precision.empty()) kv.set("precision", f.precision);
    if (!f.embedding.empty()) kv.set("embedding", f.embedding);
    if (!f.mode.empty()) kv.set("mode", f.mode);
    kv.integer_or("seed", 0);
    if (kv.integer_or("threads", 1) == 0) throw ConfigError("threads must be at least 1");
    return kv;
}

inline fs::path input_path(const KeyValues& kv, const std::string& key) {
    const fs::path p = kv.str(key);
    if (!fs::is_regular_file(p)) throw LoadError("input file for '" + key + "' not found: " + p.string());
    return p;
}

inline fs::path workdir(const KeyValues& kv) {
    const fs::path w = kv.str("workdir");
    fs::create_directories(w);
    return w;
}

inline fs::path model_prefix(const KeyValues& kv) { return workdir(kv) / kv.str_or("model", "model"); }

inline LabelTable load_label_files(const KeyValues& kv) {
    const auto fp = input_path(kv, "fingerprints");
    const auto pr = input_path(kv, "properties");
    return load_labels(read_file(fp), read_file(pr));
}

struct Prepared {
    std::vector<Spectrum> spectra;
    SplitAssignment split;
    Dataset data;
    LabelTable labels;
};

/// Reads the outputs of `prepare` back.
inline Prepared load_prepared(const KeyValues& kv) {
    const auto dir = workdir(kv);
    const auto cleaned = dir / "cleaned.mgf", manifest = dir / "split.tsv";
    for (const auto& p : {cleaned, manifest})
        if (!fs::is_regular_file(p)) throw LoadError("missing " + p.string() + "; run 'prepare' first");
    Prepared p;
    p.labels = load_label_files(kv);
    p.spectra = parse_mgf(read_file(cleaned));
    p.labels.check_resolves(p.spectra);
    p.split = parse_manifest(read_file(manifest), p.spectra);
    check_split(p.split, p.spectra);
    p.data = partition(p.spectra, p.split);
    return p;
}

inline std::vector<Spectrum> load_queries(const KeyValues& kv) { return parse_mgf(read_file(input_path(kv, "queries"))); }

// ---------------------------------------------------------------------------
// Commands

inline void cmd_prepare(const KeyValues& kv, std::ostream& out) {
    const auto spectra_path = input_path(kv, "spectra");
    const auto labels = load_label_files(kv);
    const auto dir = workdir(kv);
    const auto raw = parse_mgf(read_file(spectra_path));
    const auto cleaned = clean_spectra(raw);
    labels.check_resolves(cleaned.kept);
    const SplitCounts counts{kv.integer_or("novel_structures", 0), kv.integer_or("known_spectra", 0)};
    const auto split = split_dataset(cleaned.kept, counts, kv.integer_or("seed", 0));
    check_split(split, cleaned.kept);

    std::string audit = "structure_id\tspectra\tsplit\tfingerprint_bits\n";
    std::map<std::string, std::size_t> per_structure;
    for (const auto& s : cleaned.kept) ++per_structure[s.structure_id];
    for (const auto& [id, rec] : labels.records()) {
        const auto it = per_structure.find(id);
        const char* where = it == per_structure.end() ? "unused" : split.novel_structures.count(id) ? "novel" : "train";
        audit += id + "\t" + std::to_string(it == per_structure.end() ? 0 : it->second) + "\t" + where + "\t" +
                 std::to_string(rec.fingerprint.count()) + "\n";
    }
    write_file_atomic(dir / "cleaned.mgf", serialize_mgf(cleaned.kept));
    write_file_atomic(dir / "split.tsv", manifest_text(split));
    write_file_atomic(dir / "rejections.tsv", rejection_log_text(cleaned.rejected));
    write_file_atomic(dir / "label_audit.tsv", audit);
    out << "prepared " << cleaned.kept.size() << " spectra (" << cleaned.rejected.size() << " rejected): "
        << split.train_spectra.size() << " train, " << split.known_spectra.size() << " known, "
        << split.novel_spectra.size() << " novel\n";
}

inline void cmd_train(const KeyValues& kv, std::ostream& out) {
    const auto prep = load_prepared(kv);
    ModelSpec spec;
    spec.task = task_from_name(kv.str_or("mode", "siamese"));
    spec.encoder = EncoderConfig::read(kv);
    spec.train = TrainConfig::read(kv);
    if (spec.task == TaskKind::PropertiesBaseline) spec.baseline = BaselineConfig::read(kv, spec.encoder.dim);
    if (spec.task != TaskKind::Siamese) spec.scaler = LabelScaler::fit(structure_labels(prep.data.train, prep.labels));
    const auto seed = kv.integer_or("seed", 0);
    spec.train.seed = seed;
    auto model = TrainedModel<float>::create(spec, seed);
    const auto prefix = model_prefix(kv);
    const SiameseOptions opt{kv.integer_or("threads", 1), prefix.string() + ".diverged.ckpt", spec.digest()};
    const auto start = std::chrono::steady_clock::now();
    std::string log;
    if (spec.task == TaskKind::Siamese) {
        const auto plan = plan_siamese(prep.data, prep.labels, spec.train);
        write_file_atomic(prefix.string() + ".pairs.tsv", pair_list_text(plan));
        log = train_siamese(model.encoder, plan, lookup_of(prep.spectra), spec.train, opt).text(false);
    } else if (spec.task == TaskKind::Properties) {
        log = train_properties<float>(model.properties, prep.data, prep.labels, *spec.scaler, spec.train, opt).text(false);
    } else {
        log = train_properties<float>(model.baseline, prep.data, prep.labels, *spec.scaler, spec.train, opt).text(false);
    }
    save_model(prefix, model);
    write_file_atomic(prefix.string() + ".log.tsv", log);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << "trained " << task_name(spec.task) << " model " << prefix.string() << " in " << fixed(secs, 1) << " s\n";
}

/// Loads the model named by the run config; flags that disagree with the
/// trained model are configuration errors.
inline TrainedModel<float> load_for(const KeyValues& kv, const Flags& f) {
    auto model = load_model<float>(model_prefix(kv));
    const auto& spec = model.spec;
    if (!f.mode.empty() && task_from_name(f.mode) != spec.task)
        throw ConfigError("model was trained in mode " + std::string(task_name(spec.task)));
    if (!f.precision.empty() && format_from_bits(std::stoi(f.precision)) != spec.encoder.precision.format)
        throw ConfigError("model was trained with precision " + std::to_string(format_bits(spec.encoder.precision.format)));
    if (!f.embedding.empty() && f.embedding != (spec.encoder.kind == PeakEmbeddingKind::Sinusoidal ? "sin" : "token"))
        throw ConfigError("model was trained with a different embedding kind");
    return model;
}

inline void cmd_eval(const KeyValues& kv, const Flags& f, std::ostream& out) {
    const auto model = load_for(kv, f);
    const auto prep = load_prepared(kv);
    const auto prefix = model_prefix(kv);
    const std::size_t threads = kv.integer_or("threads", 1);
    if (model.spec.task == TaskKind::Siamese) {
        const auto index = build_index(model.encoder, prep.data.train, threads);
        const double threshold = kv.real_or("threshold", 0.6);
        std::vector<SetAccuracy> rows;
        std::vector<QueryOutcome> audit;
        if (!prep.data.known.empty())
            rows.push_back(evaluate_search(model.encoder, "known", prep.data.known, index, prep.labels, threshold, true,
                                           threads, &audit));
        if (!prep.data.novel.empty())
            rows.push_back(evaluate_search(model.encoder, "novel", prep.data.novel, index, prep.labels, threshold, false,
                                           threads, &audit));
        const auto report = accuracy_report(rows);
        write_file_atomic(prefix.string() + ".search_report.tsv", report);
        write_file_atomic(prefix.string() + ".search_audit.tsv", audit_text(audit));
        out << report;
        return;
    }
    const auto& scaler = *model.spec.scaler;
    auto scores = [&](const std::vector<Spectrum>& set) {
        if (model.spec.task == TaskKind::Properties)
            return evaluate_properties(model.properties, scaler, set, prep.labels, threads);
        return evaluate_properties(model.baseline, scaler, set, prep.labels, threads);
    };
    const auto report = property_report(scores(prep.data.known), scores(prep.data.novel));
    write_file_atomic(prefix.string() + ".property_report.tsv", report);
    out << report;
}

inline void cmd_search(const KeyValues& kv, const Flags& f, std::ostream& out) {
    const auto model = load_for(kv, f);
    if (model.spec.task != TaskKind::Siamese) throw ConfigError("search needs a siamese model");
    const auto queries = load_queries(kv);
    const auto prep = load_prepared(kv);
    const std::size_t threads = kv.integer_or("threads", 1);
    const auto index = build_index(model.encoder, prep.data.train, threads);
    const auto results = search(model.encoder, queries, index, kv.integer_or("top_k", 10), threads);
    const auto path = model_prefix(kv).string() + ".search_results.tsv";
    write_file_atomic(path, search_results_text(results));
    out << "searched " << queries.size() << " queries against " << index.size() << " references; wrote " << path << "\n";
}

inline void cmd_predict(const KeyValues& kv, const Flags& f, std::ostream& out) {
    const auto model = load_for(kv, f);
    if (model.spec.task == TaskKind::Siamese) throw ConfigError("predict needs a property model");
    const auto queries = load_queries(kv);
    const std::size_t threads = kv.integer_or("threads", 1);
    const auto pred = model.spec.task == TaskKind::Properties
                          ? predict_properties(model.properties, *model.spec.scaler, queries, threads)
                          : predict_properties(model.baseline, *model.spec.scaler, queries, threads);
    std::string text = "spectrum_id";
    for (auto k : kPropertyKeys) text += "\t" + std::string(k);
    text += "\n";
    for (std::size_t i = 0; i < queries.size(); ++i) {
        text += queries[i].id;
        for (double v : pred[i]) text += "\t" + general(v, 9);
        text += "\n";
    }
    const auto path = model_prefix(kv).string() + ".predictions.tsv";
    write_file_atomic(path, text);
    out << "predicted " << queries.size() << " spectra; wrote " << path << "\n";
}

inline void cmd_export(const KeyValues& kv, const Flags& f, std::ostream& out) {
    const auto model = load_for(kv, f);
    const auto& enc = model.spectrum_encoder();
    const double lo = kv.real_or("export_min", 0.0), hi = kv.real_or("export_max", 1000.0),
                 step = kv.real_or("export_step", 0.02);
    if (!(step > 0.0) || !(hi > lo) || lo < 0.0) throw ConfigError("export grid needs 0 <= export_min < export_max and export_step > 0");
    const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step));
    std::vector<double> grid(n);
    for (std::size_t i = 0; i < n; ++i) grid[i] = lo + step * static_cast<double>(i);
    std::vector<EmbeddingRow> rows(n);
    const std::size_t chunk = 1024, threads = kv.integer_or("threads", 1);
    parallel_for((n + chunk - 1) / chunk, threads, [&](std::size_t c) {
        NoGradGuard guard;
        const std::size_t b = c * chunk, e = std::min(n, b + chunk);
        const auto emb = enc.mz_embedding(std::span<const double>(grid.data() + b, e - b));
        const std::size_t d = emb.cols();
        for (std::size_t i = b; i < e; ++i) {
            rows[i].mz = grid[i];
            for (std::size_t j = 0; j < d; ++j) rows[i].values.push_back(static_cast<double>(emb[(i - b) * d + j]));
        }
    });
    const auto path = model_prefix(kv).string() + ".embeddings.csv";
    write_file_atomic(path, embedding_export_text(rows, std::to_string(format_bits(enc.config().precision.format))));
    out << "exported " << n << " m/z embeddings; wrote " << path << "\n";
}

// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Spectrum embeddings with sinusoidal m/z encoding", "sinspec"};
    app.require_subcommand(1);
    Flags flags;
    auto add_flags = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "run config file (key=value)")->required();
        sub->add_option("--seed", flags.seed, "random seed");
        sub->add_option("--threads", flags.threads, "worker threads");
        sub->add_option("--precision", flags.precision, "m/z input precision")->check(CLI::IsMember({"16", "32", "64"}));
        sub->add_option("--embedding", flags.embedding, "peak embedding kind")->check(CLI::IsMember({"sin", "token"}));
        sub->add_option("--mode", flags.mode, "training task")
            ->check(CLI::IsMember({"siamese", "properties", "properties-baseline"}));
    };
    std::vector<std::pair<CLI::App*, std::string>> subs;
    for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
             {"prepare", "clean spectra, resolve labels and write the split manifest"},
             {"train", "train a model and write its checkpoint and log"},
             {"eval", "library-search accuracy or property R² on known and novel spectra"},
             {"search", "rank training spectra for each query spectrum"},
             {"predict", "predict properties for query spectra"},
             {"export-embeddings", "write learned m/z embeddings over a grid"}}) {
        auto* sub = app.add_subcommand(name, help);
        add_flags(sub);
        subs.push_back({sub, name});
    }
    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "sinspec: " << e.what() << "\n";
        return 2;
    }
    try {
        const auto kv = load_run_config(flags);
        for (const auto& [sub, name] : subs) {
            if (!sub->parsed()) continue;
            if (name == "prepare") cmd_prepare(kv, out);
            else if (name == "train") cmd_train(kv, out);
            else if (name == "eval") cmd_eval(kv, flags, out);
            else if (name == "search") cmd_search(kv, flags, out);
            else if (name == "predict") cmd_predict(kv, flags, out);
            else cmd_export(kv, flags, out);
        }
        return 0;
    } catch (const InputError& e) {
        err << "sinspec: error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "sinspec: error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace sinspec::cli
