#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "sinspec/cli.hpp"
#include "sinspec/synthetic.hpp"

using namespace sinspec;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path dir;

    explicit Workspace(const std::string& name, const synthetic::ToyData& d) {
        dir = fs::temp_directory_path() / ("sinspec_cli_" + name + "_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        write_file_atomic(dir / "spectra.mgf", serialize_mgf(d.spectra));
        write_file_atomic(dir / "fp.tsv", fingerprint_text(d.labels));
        write_file_atomic(dir / "props.tsv", property_text(d.labels));
    }
    ~Workspace() { fs::remove_all(dir); }

    fs::path config(const std::string& extra, const std::string& name = "run.cfg") const {
        const std::string text = "schema_version=1\nspectra=" + (dir / "spectra.mgf").string() +
                                 "\nfingerprints=" + (dir / "fp.tsv").string() + "\nproperties=" + (dir / "props.tsv").string() +
                                 "\nworkdir=" + (dir / "work").string() +
                                 "\ndim=16\nlayers=1\nheads=2\nff_hidden=16\nepochs=2\npairs_per_epoch=32\nbatch_size=8\n"
                                 "eval_pairs=20\nlearning_rate=0.001\n" + extra;
        write_file_atomic(dir / name, text);
        return dir / name;
    }
    std::string read(const std::string& rel) const { return read_file(dir / "work" / rel); }
};

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, PrepareWritesManifestDeterministically) {
    Workspace ws("prepare", synthetic::precision_data(1, 6, 2));
    const auto cfg = ws.config("novel_structures=4\nknown_spectra=3\nseed=5\n").string();
    auto r = run({"prepare", "--config", cfg});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto manifest = ws.read("split.tsv");
    EXPECT_EQ(count_lines(manifest), 36u + 1u);
    EXPECT_EQ(run({"prepare", "--config", cfg}).code, 0);
    EXPECT_EQ(ws.read("split.tsv"), manifest);
    EXPECT_EQ(run({"prepare", "--config", cfg, "--seed", "6"}).code, 0);
    EXPECT_NE(ws.read("split.tsv"), manifest);
    EXPECT_EQ(ws.read("rejections.tsv"), "spectrum_id\treason\n");
}

TEST(Cli, InputAndConfigErrorsExitTwo) {
    Workspace ws("errors", synthetic::toy_siamese_data(1));
    auto cfg = ws.config("");
    fs::remove(ws.dir / "fp.tsv");
    auto r = run({"prepare", "--config", cfg.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find((ws.dir / "fp.tsv").string()), std::string::npos);
    EXPECT_EQ(run({"prepare", "--config", (ws.dir / "absent.cfg").string()}).code, 2);
    EXPECT_EQ(run({"prepare"}).code, 2);
    EXPECT_EQ(run({"frobnicate", "--config", cfg.string()}).code, 2);
    EXPECT_EQ(run({"train", "--config", cfg.string(), "--precision", "8"}).code, 2);
    EXPECT_EQ(run({"prepare", "--config", ws.config("colour=blue\n").string()}).code, 2);
    write_file_atomic(ws.dir / "noversion.cfg", "workdir=" + ws.dir.string() + "\n");
    EXPECT_EQ(run({"prepare", "--config", (ws.dir / "noversion.cfg").string()}).code, 2);
}

TEST(Cli, SiameseTrainEvalSearchRoundTrip) {
    Workspace ws("siamese", synthetic::precision_data(2, 6, 3));
    const auto cfg = ws.config("novel_structures=3\nknown_spectra=6\nseed=3\nqueries=" + (ws.dir / "spectra.mgf").string() +
                               "\ntop_k=3\n")
                         .string();
    ASSERT_EQ(run({"prepare", "--config", cfg}).code, 0);
    auto r = run({"train", "--config", cfg, "--threads", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto ckpt = ws.read("model.ckpt"), log = ws.read("model.log.tsv");
    EXPECT_NO_THROW(load_model<float>(ws.dir / "work" / "model"));

    // Reruns are byte-identical.
    ASSERT_EQ(run({"train", "--config", cfg, "--threads", "1"}).code, 0);
    EXPECT_EQ(ws.read("model.ckpt"), ckpt);
    EXPECT_EQ(ws.read("model.log.tsv"), log);

    r = run({"eval", "--config", cfg});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = ws.read("model.search_report.tsv");
    EXPECT_NE(report.find("known\texact\t"), std::string::npos);
    EXPECT_NE(report.find("known\tapproximate\t"), std::string::npos);
    EXPECT_NE(report.find("novel\tapproximate\t"), std::string::npos);
    EXPECT_EQ(report.find("novel\texact\t"), std::string::npos);

    // Training spectra searched against the training index hit themselves.
    const auto queries_cfg = ws.config("novel_structures=3\nknown_spectra=6\nseed=3\nqueries=" +
                                           (ws.dir / "work" / "cleaned.mgf").string() + "\ntop_k=3\n",
                                       "q.cfg");
    ASSERT_EQ(run({"search", "--config", queries_cfg.string()}).code, 0);
    const auto manifest = parse_manifest(ws.read("split.tsv"), parse_mgf(ws.read("cleaned.mgf")));
    std::size_t checked = 0;
    for (auto line : lines_of(ws.read("model.search_results.tsv"))) {
        const auto cols = split_view(line, '\t');
        if (cols[1] != "1" || !manifest.train_spectra.count(std::string(cols[0]))) continue;
        EXPECT_EQ(cols[0], cols[2]);
        ++checked;
    }
    EXPECT_EQ(checked, manifest.train_spectra.size());

    EXPECT_EQ(run({"eval", "--config", cfg, "--mode", "properties"}).code, 2);
    EXPECT_EQ(run({"predict", "--config", cfg}).code, 2);
}

TEST(Cli, DigestMismatchRefusesToRun) {
    Workspace ws("digest", synthetic::toy_siamese_data(3));
    const auto cfg = ws.config("epochs=1\n").string();
    ASSERT_EQ(run({"prepare", "--config", cfg}).code, 0);
    ASSERT_EQ(run({"train", "--config", cfg}).code, 0);
    auto text = ws.read("model.cfg");
    const auto pos = text.find("dropout=");
    text.insert(pos + 8, "0");  // 0.1 -> 00.1: same value, different bytes
    write_file_atomic(ws.dir / "work" / "model.cfg", text);
    auto r = run({"export-embeddings", "--config", cfg});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("digest"), std::string::npos);
}

TEST(Cli, PrecisionAndEmbeddingModesExport) {
    Workspace ws("export", synthetic::toy_siamese_data(4));
    const auto cfg = ws.config("epochs=1\nexport_min=500\nexport_max=501\n").string();
    ASSERT_EQ(run({"prepare", "--config", cfg}).code, 0);
    std::map<std::string, std::string> exports;
    for (const std::string p : {"16", "64"}) {
        const auto c = ws.config("epochs=1\nexport_min=500\nexport_max=501\nmodel=p" + p + "\n", "p" + p + ".cfg").string();
        ASSERT_EQ(run({"train", "--config", c, "--precision", p}).code, 0);
        ASSERT_EQ(run({"export-embeddings", "--config", c}).code, 0);
        exports[p] = ws.read("p" + p + ".embeddings.csv");
        EXPECT_EQ(count_lines(exports[p]), 51u);
        EXPECT_EQ(run({"export-embeddings", "--config", c, "--precision", p == "16" ? "64" : "16"}).code, 2);
    }
    // Same seed, same weights: any difference comes from the m/z cast.
    auto body = [](const std::string& s) {
        std::string out;
        for (auto line : lines_of(s)) {
            auto cols = split_view(line, ',');
            for (std::size_t i = 3; i < cols.size(); ++i) out += std::string(cols[i]) + ",";
        }
        return out;
    };
    EXPECT_NE(body(exports["16"]), body(exports["64"]));

    const auto tc = ws.config("epochs=1\nmodel=tok\n", "tok.cfg").string();
    EXPECT_EQ(run({"train", "--config", tc, "--embedding", "token"}).code, 0);
    EXPECT_EQ(run({"eval", "--config", tc}).code, 0);
}

TEST(Cli, FullGridExportHasFiftyThousandRows) {
    Workspace ws("grid", synthetic::toy_siamese_data(5));
    const auto cfg = ws.config("epochs=0\n").string();
    ASSERT_EQ(run({"prepare", "--config", cfg}).code, 0);
    ASSERT_EQ(run({"train", "--config", cfg}).code, 0);
    ASSERT_EQ(run({"export-embeddings", "--config", cfg, "--threads", "2"}).code, 0);
    const auto text = ws.read("model.embeddings.csv");
    EXPECT_EQ(count_lines(text), 50001u);
    EXPECT_NE(text.find("\n999.9800,0.9800,64,"), std::string::npos);
}

TEST(Cli, PropertyTrainPredictEval) {
    Workspace ws("props", synthetic::property_data(6, 20, 2));
    const auto cfg = ws.config("novel_structures=5\nknown_spectra=4\nqueries=" + (ws.dir / "spectra.mgf").string() + "\n").string();
    ASSERT_EQ(run({"prepare", "--config", cfg}).code, 0);
    ASSERT_EQ(run({"train", "--config", cfg, "--mode", "properties"}).code, 0);
    ASSERT_EQ(run({"eval", "--config", cfg}).code, 0);
    const auto report = ws.read("model.property_report.tsv");
    EXPECT_EQ(count_lines(report), 2u + kNumProperties + 1u);
    ASSERT_EQ(run({"predict", "--config", cfg}).code, 0);
    EXPECT_EQ(count_lines(ws.read("model.predictions.tsv")), 41u);

    const auto bc = ws.config("novel_structures=5\nknown_spectra=4\nmodel=base\nbaseline_max_mz=1000\n", "b.cfg").string();
    ASSERT_EQ(run({"train", "--config", bc, "--mode", "properties-baseline"}).code, 0);
    ASSERT_EQ(run({"eval", "--config", bc}).code, 0);
    EXPECT_EQ(run({"export-embeddings", "--config", bc}).code, 2);
}
