// megc command-line entry point. One binary, subcommand per pipeline
// stage; every run writes its resolved config and outputs under a run
// directory named by the config hash (root overridable via MEGC_RUN_DIR).
//
// Exit codes: 0 success, 2 usage, 3 invalid config, 1 any other failure.

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "megc/megc.hpp"

namespace {

using megc::RunConfig;

struct CliOptions {
    std::string config_path;
    std::int64_t seed_override = -1;
    bool desk_scale = false;
    bool dump_maps = false;
    std::vector<std::string> drop;
};

RunConfig load_config(const CliOptions& opt) {
    megc::require(!opt.config_path.empty(), megc::ErrorCategory::config,
                  "--config is required");
    RunConfig cfg = megc::load_run_config(opt.config_path);
    if (opt.seed_override >= 0) {
        nlohmann::json patched = cfg.resolved;
        patched["seed"] = static_cast<std::uint64_t>(opt.seed_override);
        cfg = megc::parse_run_config(patched);
    }
    if (opt.desk_scale) {
        nlohmann::json patched = cfg.resolved;
        patched["desk_scale"] = true;
        cfg = megc::parse_run_config(patched);
    }
    if (opt.dump_maps) cfg.dump_maps = true;
    for (const auto& d : opt.drop) cfg.drop.insert(megc::parse_cue(d));
    return cfg;
}

megc::CorpusIndex load_corpus(const std::string& manifest, megc::Split split = megc::Split::train) {
    megc::CorpusIndex idx = megc::load_manifest(manifest, split);
    std::cout << "loaded " << idx.samples.size() << " records from " << manifest << " ("
              << idx.count(megc::Label::live) << " live, " << idx.count(megc::Label::spoof)
              << " spoof)\n";
    return idx;
}

std::unique_ptr<megc::SupervisionSource<float>> make_supervision(const RunConfig& cfg) {
    if (cfg.supervision == "files") return std::make_unique<megc::FileSupervision<float>>(cfg.cue_dir);
    megc::CueProviders<float> providers;
    providers.depth = megc::raised_cosine_depth<float>;
    providers.reflection = megc::zero_map<float>;
    if (!cfg.moire.checkpoint.empty()) {
        auto net = std::make_shared<megc::MoireNet<float>>(
            megc::load_moire_checkpoint<float>(cfg.moire.checkpoint));
        return std::make_unique<megc::ProviderSupervision<float>>(providers, net);
    }
    return std::make_unique<megc::ProviderSupervision<float>>(providers);
}

int cmd_synth_cues(const RunConfig& cfg, const std::string& run_dir) {
    megc::CorpusIndex corpus = load_corpus(cfg.train_manifest);
    megc::SynthSummary s = megc::synth_cues<float>(corpus, cfg);
    std::ofstream((std::filesystem::path(run_dir) / "synth_summary.json").string())
        << nlohmann::json{{"depth_maps", s.depth_maps},
                          {"composites", s.composites},
                          {"moire_pairs", s.moire_pairs},
                          {"updated_manifest", s.updated_manifest}}
               .dump(2)
        << "\n";
    std::cout << "wrote " << s.depth_maps << " depth maps, " << s.composites << " composites, "
              << s.moire_pairs << " moire pairs\n"
              << "updated manifest: " << s.updated_manifest << "\n";
    if (!s.pairs_manifest.empty()) std::cout << "moire pairs: " << s.pairs_manifest << "\n";
    return 0;
}

int cmd_train_moire(const RunConfig& cfg, const std::string& run_dir) {
    auto pairs = megc::load_moire_pairs<float>(cfg.cue_dir);
    megc::MoireNet<float> net(cfg.moire.net, cfg.seed);
    megc::MoireTrainOptions opt = cfg.moire.train;
    std::vector<double> history = megc::train_moire_net(net, pairs, opt);
    const auto smoothed = megc::smooth_history(history);
    const std::string out = (std::filesystem::path(run_dir) / "moire.megc").string();
    megc::save_moire_checkpoint(net, out);
    if (!cfg.moire.checkpoint.empty()) {
        const auto parent = std::filesystem::path(cfg.moire.checkpoint).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        megc::save_moire_checkpoint(net, cfg.moire.checkpoint);
    }
    std::cout << "trained moire net on " << pairs.size() << " pairs, " << history.size()
              << " steps; smoothed mse " << smoothed.front() << " -> " << smoothed.back() << "\n"
              << "checkpoint: " << out << "\n";
    return 0;
}

int cmd_extract_moire(const RunConfig& cfg, const std::string& run_dir) {
    megc::require(!cfg.moire.checkpoint.empty(), megc::ErrorCategory::config,
                  "moire_net.checkpoint must point at a trained extractor");
    megc::MoireNet<float> net = megc::load_moire_checkpoint<float>(cfg.moire.checkpoint);
    megc::CorpusIndex corpus = load_corpus(cfg.train_manifest);
    const int n = megc::extract_moire_maps(corpus, net, cfg.cue_dir);
    std::ofstream((std::filesystem::path(run_dir) / "extract_summary.json").string())
        << nlohmann::json{{"maps_written", n}, {"cue_dir", cfg.cue_dir}}.dump(2) << "\n";
    std::cout << "extracted " << n << " moire maps into " << cfg.cue_dir << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& run_dir) {
    megc::CorpusIndex corpus = load_corpus(cfg.train_manifest);
    auto supervision = make_supervision(cfg);
    megc::TrainConfig tc = cfg.train;
    tc.disabled_cues = cfg.drop;
    if (cfg.supervision == "providers") tc.online_composites = cfg.online_composites;
    megc::Trainer<float> trainer(corpus, *supervision, tc, run_dir);
    const std::string resume = cfg.resolved.at("train").at("resume").get<std::string>();
    megc::TrainResult<float> result = resume.empty() ? trainer.train() : trainer.resume(resume);
    std::cout << "trained " << tc.steps << " steps; final l_overall "
              << (result.history.empty() ? 0.0 : result.history.back().loss.l_overall)
              << "; train accuracy " << result.train_accuracy << "\n"
              << "checkpoint: " << result.final_checkpoint << "\n";
    return 0;
}

megc::BackboneConfig backbone_from_checkpoint_meta(const nlohmann::json& meta,
                                                   const RunConfig& cfg) {
    megc::BackboneConfig bc = cfg.train.backbone;
    bc.desk_scale = meta.value("desk_scale", bc.desk_scale);
    if (meta.contains("model")) {
        const auto& m = meta.at("model");
        for (int i = 0; i < 6; ++i)
            bc.widths[static_cast<std::size_t>(i)] = m.at("widths").at(static_cast<std::size_t>(i)).get<int>();
        bc.head_width = m.at("head_width").get<int>();
        bc.classifier_width = m.at("classifier_width").get<int>();
        bc.in_channels = m.at("in_channels").get<int>();
    }
    return bc;
}

int cmd_eval(const RunConfig& cfg, const std::string& run_dir) {
    megc::require(!cfg.eval_checkpoint.empty(), megc::ErrorCategory::config,
                  "eval.checkpoint must name a trained model");
    megc::Checkpoint ck = megc::Checkpoint::load(cfg.eval_checkpoint);
    std::set<megc::Cue> disabled;
    for (const auto& c : ck.meta.value("disabled_cues", nlohmann::json::array()))
        disabled.insert(megc::parse_cue(c.get<std::string>()));
    megc::MegcNet<float> net(backbone_from_checkpoint_meta(ck.meta, cfg), cfg.seed, disabled);
    megc::restore_parameters(ck, net.params());

    megc::CorpusIndex train_corpus = load_corpus(cfg.train_manifest);
    megc::CorpusIndex test_corpus = load_corpus(cfg.test_manifest, megc::Split::test);

    // Threshold on the source-domain dev split.
    megc::CorpusIndex dev = train_corpus;
    dev.samples.clear();
    dev.split = megc::Split::dev;
    for (const auto& rec : train_corpus.samples)
        if (megc::in_dev_split(rec.source_id, cfg.dev_fraction)) dev.samples.push_back(rec);
    if (dev.samples.empty() || dev.count(megc::Label::live) == 0 ||
        dev.count(megc::Label::spoof) == 0) {
        dev = train_corpus;
        dev.split = megc::Split::dev;
    }

    megc::SampleLoader<float> dev_loader(dev);
    std::vector<int> ids(dev.samples.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    auto dev_scored = megc::score_samples(net, dev_loader, ids);
    if (cfg.by_video) dev_scored = megc::aggregate_by_video(dev_scored);
    std::vector<double> live, spoof;
    megc::split_scores(dev_scored, live, spoof);
    const double threshold = megc::select_threshold(live, spoof);

    megc::SampleLoader<float> test_loader(test_corpus);
    std::vector<int> tids(test_corpus.samples.size());
    for (std::size_t i = 0; i < tids.size(); ++i) tids[i] = static_cast<int>(i);
    auto test_scored = megc::score_samples(net, test_loader, tids);
    if (cfg.by_video) test_scored = megc::aggregate_by_video(test_scored);
    megc::split_scores(test_scored, live, spoof);
    megc::EvalReport report = megc::compute_hter(live, spoof, threshold);

    std::ofstream rout((std::filesystem::path(run_dir) / "report.json").string());
    rout << report.to_json().dump(2) << '\n';
    std::ofstream sout((std::filesystem::path(run_dir) / "scores.jsonl").string());
    for (const auto& s : test_scored)
        sout << nlohmann::json{{"id", s.id}, {"label", megc::to_string(s.label)}, {"score", s.score}}
                    .dump()
             << '\n';
    if (cfg.dump_maps) {
        const std::string map_dir = (std::filesystem::path(run_dir) / "maps").string();
        std::filesystem::create_directories(map_dir);
        for (std::size_t i = 0; i < test_corpus.samples.size(); ++i) {
            megc::FaceSample<float> s = test_loader.load(static_cast<int>(i));
            megc::dump_aux_maps(net, s,
                                (std::filesystem::path(map_dir) / (s.source_id + ".maps.png")).string());
        }
    }
    std::cout << megc::format_report_table(report);
    return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& run_dir) {
    megc::CorpusIndex train_corpus = load_corpus(cfg.train_manifest);
    megc::CorpusIndex test_corpus = load_corpus(cfg.test_manifest, megc::Split::test);
    auto supervision = make_supervision(cfg);
    megc::ProtocolOptions opt;
    opt.train = cfg.train;
    if (cfg.supervision == "providers") opt.train.online_composites = cfg.online_composites;
    opt.dev_fraction = cfg.dev_fraction;
    opt.by_video = cfg.by_video;
    opt.dump_maps = cfg.dump_maps;
    opt.config_hash = cfg.hash();
    megc::ProtocolResult result =
        megc::run_protocol(train_corpus, test_corpus, *supervision, opt, cfg.drop, run_dir);
    std::cout << "ablation:";
    if (cfg.drop.empty()) std::cout << " (none)";
    for (megc::Cue c : cfg.drop) std::cout << " " << megc::to_string(c);
    std::cout << "\n" << megc::format_report_table(result.report);
    std::cout << "manifest: " << (std::filesystem::path(run_dir) / "run_manifest.json").string() << "\n";
    return 0;
}

int cmd_summarize(const RunConfig& cfg) {
    megc::MegcNet<float> net(cfg.train.backbone, cfg.seed, cfg.drop);
    std::cout << "MEGC model (" << (cfg.desk_scale ? "desk scale" : "full scale") << ")\n";
    int spatial = megc::kCropSize;
    std::printf("  %-22s %-10s %10s %8s %12s\n", "layer", "stage", "in->out", "output", "params");
    for (const auto& l : net.layers()) {
        std::string out_sz = "-";
        if (l.stage == "backbone") {
            spatial /= l.stride;
            out_sz = megc::concat(spatial, "x", spatial);
        } else if (l.name.rfind("mafe.", 0) == 0) {
            // branch convs all land on the 32x32 map grid
            out_sz = megc::concat(megc::kMapSize, "x", megc::kMapSize);
        } else if (l.stage == "mfe") {
            out_sz = megc::concat(megc::kMfeSize, "x", megc::kMfeSize);
        }
        std::printf("  %-22s %-10s %4d->%-4d %8s %12zu\n", l.name.c_str(), l.stage.c_str(),
                    l.in_channels, l.out_channels, out_sz.c_str(), l.param_count);
    }
    std::printf("  total parameters: %zu\n", net.param_count());

    megc::MoireNet<float> moire(cfg.moire.net, cfg.seed);
    std::cout << "moire extractor (backbone: " << cfg.moire.net.demoire_backbone << ")\n";
    for (const auto& l : moire.layers())
        std::printf("  %-22s %-10s %4d->%-4d %8s %12zu\n", l.name.c_str(), l.stage.c_str(),
                    l.in_channels, l.out_channels, "-", l.param_count);
    std::printf("  total parameters: %zu\n", moire.param_count());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"megc: multi-cue face anti-spoofing pipeline"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    CliOptions opt;
    const char* commands[] = {"synth-cues", "train-moire", "extract-moire",
                              "train",      "eval",        "ablate",
                              "summarize"};
    const char* descriptions[] = {
        "generate cue maps, boundary composites and moire training pairs",
        "train the moire extraction network on synthetic pairs",
        "label replay samples with extracted moire maps",
        "train the MEGC model",
        "score a checkpoint and report FAR/FRR/HTER",
        "cross-dataset protocol run with optional cue ablation",
        "print per-layer shapes and parameter counts"};
    for (std::size_t i = 0; i < 7; ++i) {
        CLI::App* sub = app.add_subcommand(commands[i], descriptions[i]);
        sub->add_option("--config", opt.config_path, "run config (JSON)")->required();
        sub->add_option("--seed", opt.seed_override, "override config seed");
        sub->add_flag("--desk-scale", opt.desk_scale, "force the desk-scale preset");
        sub->add_flag("--dump-maps", opt.dump_maps, "write predicted map grids as PNG");
        if (std::string(commands[i]) == "ablate" || std::string(commands[i]) == "train" ||
            std::string(commands[i]) == "summarize")
            sub->add_option("--drop", opt.drop, "cues to disable (reflection|moire|boundary)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        RunConfig cfg = load_config(opt);
        if (command == "summarize") return cmd_summarize(cfg);
        const std::string run_dir = megc::make_run_dir(cfg, command);
        if (command == "synth-cues") return cmd_synth_cues(cfg, run_dir);
        if (command == "extract-moire") return cmd_extract_moire(cfg, run_dir);
        if (command == "train-moire") return cmd_train_moire(cfg, run_dir);
        if (command == "train") return cmd_train(cfg, run_dir);
        if (command == "eval") return cmd_eval(cfg, run_dir);
        if (command == "ablate") return cmd_ablate(cfg, run_dir);
        std::cerr << "error: usage: unknown command " << command << "\n";
        return 2;
    } catch (const megc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.category() == megc::ErrorCategory::config || e.category() == megc::ErrorCategory::parse
                   ? 3
                   : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
