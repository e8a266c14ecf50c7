// Writes a synthetic dataset (MGF, fingerprints, properties) and a matching
// run config that the sinspec tool can consume directly.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "sinspec/io.hpp"
#include "sinspec/labels.hpp"
#include "sinspec/mgf.hpp"
#include "sinspec/synthetic.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Generate a toy spectrum dataset", "make_toy_dataset"};
    std::string kind = "siamese", out_dir;
    std::uint64_t seed = 1;
    app.add_option("--kind", kind, "dataset flavour")->check(CLI::IsMember({"siamese", "properties", "precision"}));
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        sinspec::synthetic::ToyData d;
        std::string run;
        if (kind == "siamese") {
            d = sinspec::synthetic::toy_siamese_data(seed);
            run = "novel_structures=0\nknown_spectra=0\ndim=32\nlayers=2\nheads=4\nff_hidden=32\n"
                  "epochs=200\npairs_per_epoch=128\nbatch_size=32\neval_pairs=200\nstop_below=0.01\n";
        } else if (kind == "properties") {
            d = sinspec::synthetic::property_data(seed, 150, 2);
            run = "novel_structures=30\nknown_spectra=20\ndim=32\nlayers=2\nheads=4\nff_hidden=32\n"
                  "epochs=60\nbatch_size=8\nlearning_rate=0.001\nbaseline_max_mz=1000\n";
        } else {
            d = sinspec::synthetic::precision_data(seed);
            run = "novel_structures=12\nknown_spectra=20\ndim=32\nlayers=2\nheads=4\nff_hidden=32\n"
                  "epochs=30\npairs_per_epoch=256\nbatch_size=32\neval_pairs=1000\nlearning_rate=0.001\n";
        }
        const fs::path dir = out_dir;
        fs::create_directories(dir);
        sinspec::write_file_atomic(dir / "spectra.mgf", sinspec::serialize_mgf(d.spectra));
        sinspec::write_file_atomic(dir / "fingerprints.tsv", sinspec::fingerprint_text(d.labels));
        sinspec::write_file_atomic(dir / "properties.tsv", sinspec::property_text(d.labels));
        const std::string header = "schema_version=1\nspectra=" + (dir / "spectra.mgf").string() +
                                   "\nfingerprints=" + (dir / "fingerprints.tsv").string() +
                                   "\nproperties=" + (dir / "properties.tsv").string() +
                                   "\nworkdir=" + (dir / "work").string() + "\nseed=" + std::to_string(seed) + "\n";
        sinspec::write_file_atomic(dir / "run.cfg", header + run);
        std::cout << "wrote " << d.spectra.size() << " spectra to " << dir.string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "make_toy_dataset: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
