// Generates a small synthetic demo corpus (frames + manifest) so the
// pipeline can be exercised without the licensed datasets.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "megc/toy_corpus.hpp"

int main(int argc, char** argv) {
    CLI::App app{"megc-toygen: synthetic demo corpus generator"};
    std::string out_dir = "toy_corpus";
    megc::ToyCorpusOptions opt;
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--live", opt.n_live, "number of live frames");
    app.add_option("--print", opt.n_print, "number of print-attack frames");
    app.add_option("--replay", opt.n_replay, "number of replay-attack frames");
    app.add_option("--seed", opt.seed, "rng seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const std::string manifest = megc::make_toy_corpus<float>(out_dir, opt);
        std::cout << "manifest: " << manifest << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
