#pragma once

// Run configuration: one JSON file shared by all CLI commands. Unknown
// keys are rejected, defaults fill in the rest, and the hash of the fully
// resolved config names the run directory, which makes re-runs
// bit-identical.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "megc/evaluator.hpp"
#include "megc/moire_estimator.hpp"
#include "megc/trainer.hpp"

namespace megc {

struct SynthConfig {
    int composites = 4;        // boundary composites to synthesize
    int moire_pairs = 8;       // (moire image, map) training pairs
    double alpha = 0.3;        // moire blending strength
    double freq_lo = 0.12;     // grating frequency range
    double freq_hi = 0.30;
    double max_freq_delta = 0.05;
    double max_angle_delta = 0.1;
};

struct MoireNetRunConfig {
    MoireNetConfig net;
    MoireTrainOptions train;
    std::string checkpoint;  // shared location written by train-moire, read by extract-moire
};

struct RunConfig {
    std::uint64_t seed = 1;
    bool desk_scale = false;

    std::string train_manifest;
    std::string test_manifest;
    std::string cue_dir = "cues";
    std::string supervision = "files";  // files | providers
    int online_composites = 0;          // providers mode: composites built in memory

    TrainConfig train;
    SynthConfig synth;
    MoireNetRunConfig moire;

    std::string eval_checkpoint;
    double dev_fraction = 0.2;
    bool by_video = false;
    bool dump_maps = false;
    std::set<Cue> drop;

    nlohmann::json resolved;  // the fully resolved document, hashed for the run dir

    std::string hash() const { return hex16(fnv1a64(resolved.dump())); }
};

namespace detail {

inline nlohmann::json default_config_json() {
    return nlohmann::json{
        {"seed", 1},
        {"desk_scale", false},
        {"data",
         {{"train_manifest", ""},
          {"test_manifest", ""},
          {"cue_dir", "cues"},
          {"supervision", "files"},
          {"online_composites", 0}}},
        {"model",
         {{"widths", {64, 128, 128, 196, 128, 128}},
          {"head_width", 64},
          {"classifier_width", 128}}},
        {"train",
         {{"steps", 300},
          {"batch_size", 4},
          {"lr", 1e-4},
          {"schedule", "cosine"},
          {"mu", 10.0},
          {"lambda", 0.1},
          {"composite_fraction", 0.25},
          {"pixel_mean_norm", false},
          {"divide_by_valid", false},
          {"checkpoint_every_epochs", 1},
          {"resume", ""}}},
        {"synth",
         {{"composites", 4},
          {"moire_pairs", 8},
          {"alpha", 0.3},
          {"freq_lo", 0.12},
          {"freq_hi", 0.30},
          {"max_freq_delta", 0.05},
          {"max_angle_delta", 0.1}}},
        {"moire_net",
         {{"backbone", "conv_ae"},
          {"backbone_width", 8},
          {"adapt_width", 8},
          {"refine_width", 8},
          {"freeze_backbone", true},
          {"concat_input", false},
          {"steps", 200},
          {"pretrain_steps", 60},
          {"batch_size", 4},
          {"lr", 1e-3},
          {"checkpoint", ""}}},
        {"eval",
         {{"checkpoint", ""},
          {"dev_fraction", 0.2},
          {"by_video", false},
          {"dump_maps", false},
          {"drop", nlohmann::json::array()}}}};
}

inline void merge_strict(nlohmann::json& base, const nlohmann::json& user, const std::string& where) {
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (!base.contains(it.key()))
            fail(ErrorCategory::config, "unknown config key: " + where + it.key());
        if (base[it.key()].is_object()) {
            require(it.value().is_object(), ErrorCategory::config,
                    "config key " + where + it.key() + " must be an object");
            merge_strict(base[it.key()], it.value(), where + it.key() + ".");
        } else {
            base[it.key()] = it.value();
        }
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& user) {
    nlohmann::json j = detail::default_config_json();
    detail::merge_strict(j, user, "");

    RunConfig c;
    c.resolved = j;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.desk_scale = j.at("desk_scale").get<bool>();

    const auto& data = j.at("data");
    c.train_manifest = data.at("train_manifest").get<std::string>();
    c.test_manifest = data.at("test_manifest").get<std::string>();
    c.cue_dir = data.at("cue_dir").get<std::string>();
    c.supervision = data.at("supervision").get<std::string>();
    c.online_composites = data.at("online_composites").get<int>();
    require(c.supervision == "files" || c.supervision == "providers", ErrorCategory::config,
            "data.supervision must be \"files\" or \"providers\"");

    const auto& model = j.at("model");
    const auto widths = model.at("widths");
    require(widths.is_array() && widths.size() == 6, ErrorCategory::config,
            "model.widths must list six stage widths");
    for (int i = 0; i < 6; ++i) c.train.backbone.widths[static_cast<std::size_t>(i)] = widths.at(static_cast<std::size_t>(i)).get<int>();
    c.train.backbone.head_width = model.at("head_width").get<int>();
    c.train.backbone.classifier_width = model.at("classifier_width").get<int>();
    c.train.backbone.desk_scale = c.desk_scale;

    const auto& train = j.at("train");
    c.train.steps = train.at("steps").get<long>();
    c.train.batch_size = train.at("batch_size").get<int>();
    c.train.lr = train.at("lr").get<double>();
    const std::string sched = train.at("schedule").get<std::string>();
    require(sched == "cosine" || sched == "constant", ErrorCategory::config,
            "train.schedule must be \"cosine\" or \"constant\"");
    c.train.schedule = sched == "cosine" ? nn::LrSchedule::cosine : nn::LrSchedule::constant;
    c.train.seed = c.seed;
    c.train.weights.mu = train.at("mu").get<double>();
    c.train.weights.lambda = train.at("lambda").get<double>();
    c.train.composite_fraction = train.at("composite_fraction").get<double>();
    c.train.loss_options.pixel_mean = train.at("pixel_mean_norm").get<bool>();
    c.train.loss_options.divide_by_valid = train.at("divide_by_valid").get<bool>();
    c.train.checkpoint_every_epochs = train.at("checkpoint_every_epochs").get<int>();
    c.train.validate();

    const auto& synth = j.at("synth");
    c.synth.composites = synth.at("composites").get<int>();
    c.synth.moire_pairs = synth.at("moire_pairs").get<int>();
    c.synth.alpha = synth.at("alpha").get<double>();
    c.synth.freq_lo = synth.at("freq_lo").get<double>();
    c.synth.freq_hi = synth.at("freq_hi").get<double>();
    c.synth.max_freq_delta = synth.at("max_freq_delta").get<double>();
    c.synth.max_angle_delta = synth.at("max_angle_delta").get<double>();
    require(c.synth.alpha > 0.0 && c.synth.alpha <= 1.0, ErrorCategory::config,
            "synth.alpha must lie in (0,1]");
    require(c.synth.freq_lo > 0.0 && c.synth.freq_hi < 0.5 && c.synth.freq_lo <= c.synth.freq_hi,
            ErrorCategory::config, "synth frequency range must lie inside (0, 0.5)");

    const auto& mn = j.at("moire_net");
    c.moire.net.demoire_backbone = mn.at("backbone").get<std::string>();
    c.moire.net.backbone_width = mn.at("backbone_width").get<int>();
    c.moire.net.adapt_width = mn.at("adapt_width").get<int>();
    c.moire.net.refine_width = mn.at("refine_width").get<int>();
    c.moire.net.freeze_backbone = mn.at("freeze_backbone").get<bool>();
    c.moire.net.concat_input = mn.at("concat_input").get<bool>();
    c.moire.train.steps = mn.at("steps").get<long>();
    c.moire.train.pretrain_steps = mn.at("pretrain_steps").get<long>();
    c.moire.train.batch_size = mn.at("batch_size").get<int>();
    c.moire.train.lr = mn.at("lr").get<double>();
    c.moire.train.seed = c.seed;
    c.moire.checkpoint = mn.at("checkpoint").get<std::string>();

    const auto& ev = j.at("eval");
    c.eval_checkpoint = ev.at("checkpoint").get<std::string>();
    c.dev_fraction = ev.at("dev_fraction").get<double>();
    c.by_video = ev.at("by_video").get<bool>();
    c.dump_maps = ev.at("dump_maps").get<bool>();
    for (const auto& d : ev.at("drop")) c.drop.insert(parse_cue(d.get<std::string>()));
    require(c.dev_fraction > 0.0 && c.dev_fraction < 1.0, ErrorCategory::config,
            "eval.dev_fraction must lie in (0,1)");
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    require(std::filesystem::exists(path), ErrorCategory::config, "config file not found: " + path);
    std::ifstream in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::config, concat("cannot parse config ", path, ": ", e.what()));
    }
    return parse_run_config(j);
}

// Run directory root: MEGC_RUN_DIR env var, else ./runs.
inline std::string run_dir_root() {
    if (const char* env = std::getenv("MEGC_RUN_DIR")) return env;
    return "runs";
}

inline std::string make_run_dir(const RunConfig& config, const std::string& command) {
    const std::string dir =
        (std::filesystem::path(run_dir_root()) / (command + "-" + config.hash())).string();
    std::filesystem::create_directories(dir);
    std::ofstream out((std::filesystem::path(dir) / "resolved_config.json").string());
    out << config.resolved.dump(2) << '\n';
    return dir;
}

}  // namespace megc
