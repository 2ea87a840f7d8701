#pragma once

// The offline cue-generation pipeline behind the synth-cues, train-moire
// and extract-moire commands: writes cue maps, boundary composites and
// synthetic moire training pairs to disk, and round-trips the moire
// extractor through its checkpoint.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "megc/checkpoint.hpp"
#include "megc/config.hpp"
#include "megc/cue_synthesis.hpp"
#include "megc/moire_estimator.hpp"

namespace megc {

namespace detail {

// A sampled pair of similar fringes within the configured ranges.
inline std::pair<GratingSpec, GratingSpec> sample_grating_pair(const SynthConfig& synth,
                                                               std::mt19937_64& rng) {
    std::uniform_real_distribution<double> freq(synth.freq_lo, synth.freq_hi);
    std::uniform_real_distribution<double> delta(0.005, synth.max_freq_delta);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::uniform_real_distribution<double> dangle(-synth.max_angle_delta, synth.max_angle_delta);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    GratingSpec a{freq(rng), angle(rng), phase(rng), 1.0};
    double fb = std::clamp(a.frequency + delta(rng), 0.01, 0.49);
    double ob = a.orientation + dangle(rng);
    while (ob < 0.0) ob += std::numbers::pi;
    while (ob >= std::numbers::pi) ob -= std::numbers::pi;
    // Orientation wrap-around would violate the similarity precondition;
    // fold the delta instead.
    if (std::abs(ob - a.orientation) > synth.max_angle_delta) ob = a.orientation;
    GratingSpec b{fb, ob, phase(rng), 1.0};
    return {a, b};
}

// Rebuilds the 6-channel crop from a stored RGB crop PNG.
template <typename T>
Tensor<T> six_channel_from_rgb_file(const std::string& path) {
    Tensor<T> rgb = io::read_image_rgb<T>(path);
    require(rgb.h() == kCropSize && rgb.w() == kCropSize, ErrorCategory::shape,
            "stored crop has wrong size: " + path);
    Tensor<T> hsv = rgb_to_hsv_image(rgb);
    Tensor<T> out(1, 6, kCropSize, kCropSize);
    const std::size_t hw = static_cast<std::size_t>(kCropSize) * kCropSize;
    for (int j = 0; j < 3; ++j) {
        std::copy(rgb.plane(0, j), rgb.plane(0, j) + hw, out.plane(0, j));
        std::copy(hsv.plane(0, j), hsv.plane(0, j) + hw, out.plane(0, j + 3));
    }
    return out;
}

}  // namespace detail

// A face box that makes crop preparation the identity on stored 256x256
// crops (expansion about the center covers the full frame).
inline Rect identity_crop_box() { return Rect{kCropSize / 4, kCropSize / 4, kCropSize / 2, kCropSize / 2}; }

struct SynthSummary {
    int depth_maps = 0;
    int composites = 0;
    int moire_pairs = 0;
    std::string updated_manifest;
    std::string pairs_manifest;
};

// Offline cue generation. Writes, under config.cue_dir:
//   <id>.depth.png          for live samples (16-bit)
//   composites/<id>.png     synthetic boundary composites (RGB crops)
//   <id>.boundary.png       their binary maps (8-bit {0,255})
//   moire_pairs/...         (image, map, clean) triplets + pairs.jsonl
//   train_synth.manifest    original records + composite records
template <typename T = float>
SynthSummary synth_cues(const CorpusIndex& corpus, const RunConfig& config) {
    namespace fs = std::filesystem;
    const std::string cue_dir = config.cue_dir;
    fs::create_directories(cue_dir);
    fs::create_directories(fs::path(cue_dir) / "composites");
    fs::create_directories(fs::path(cue_dir) / "moire_pairs");

    SampleLoader<T> loader(corpus);
    SynthSummary summary;

    std::vector<int> live_ids, donor_ids;
    for (int i = 0; i < static_cast<int>(corpus.samples.size()); ++i) {
        const auto& rec = corpus.samples[static_cast<std::size_t>(i)];
        if (rec.label == Label::live)
            live_ids.push_back(i);
        else if (rec.spoof_type != SpoofType::composite)
            donor_ids.push_back(i);
    }

    // Depth supervision for live samples (raised-cosine desk default).
    for (int i : live_ids) {
        FaceSample<T> s = loader.load(i);
        io::write_map_png16(cue_file(cue_dir, s.source_id, "depth"), raised_cosine_depth(s));
        ++summary.depth_maps;
    }

    CorpusIndex updated = corpus;
    for (auto& rec : updated.samples)
        rec.path = fs::absolute(corpus.resolve_path(rec)).string();

    // Boundary composites.
    if (!donor_ids.empty()) {
        auto rng = make_rng(config.seed, 0x636f6d70);
        std::uniform_int_distribution<std::size_t> pick_live(0, live_ids.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_donor(0, donor_ids.size() - 1);
        for (int k = 0; k < config.synth.composites; ++k) {
            FaceSample<T> live = loader.load(live_ids[pick_live(rng)]);
            FaceSample<T> donor = loader.load(donor_ids[pick_donor(rng)]);
            PasteGeometry geom{donor.face_in_crop, mix_seed(config.seed, 0x9000 + static_cast<std::uint64_t>(k)), true};
            BoundaryComposite<T> comp = composite_boundary(live, donor, geom);
            comp.sample.source_id += concat("_", k);

            const std::string img_path =
                (fs::path(cue_dir) / "composites" / (comp.sample.source_id + ".png")).string();
            Tensor<T> rgb(1, 3, kCropSize, kCropSize);
            for (int j = 0; j < 3; ++j)
                std::copy(comp.sample.image.plane(0, j),
                          comp.sample.image.plane(0, j) + static_cast<std::size_t>(kCropSize) * kCropSize,
                          rgb.plane(0, j));
            io::write_image_rgb_png(img_path, rgb);
            io::write_map_png8_binary(cue_file(cue_dir, comp.sample.source_id, "boundary"),
                                      comp.boundary_gt);

            ManifestRecord rec;
            rec.path = fs::absolute(img_path).string();
            rec.label = Label::spoof;
            rec.spoof_type = SpoofType::composite;
            rec.face_box = identity_crop_box();
            rec.composite_source = donor.spoof_type;
            rec.source_id = comp.sample.source_id;
            updated.samples.push_back(rec);
            ++summary.composites;
        }
    }

    // Synthetic moire training pairs from live samples only.
    if (!live_ids.empty() && config.synth.moire_pairs > 0) {
        auto rng = make_rng(config.seed, 0x6d706169);
        std::uniform_int_distribution<std::size_t> pick_live(0, live_ids.size() - 1);
        const std::string pairs_path = (fs::path(cue_dir) / "moire_pairs" / "pairs.jsonl").string();
        std::ofstream pairs_out(pairs_path);
        require(pairs_out.good(), ErrorCategory::io, "cannot write " + pairs_path);
        for (int k = 0; k < config.synth.moire_pairs; ++k) {
            FaceSample<T> live = loader.load(live_ids[pick_live(rng)]);
            auto [ga, gb] = detail::sample_grating_pair(config.synth, rng);
            Tensor<T> pattern = synthesize_moire_pattern<T>(ga, gb, kCropSize, kCropSize);
            MoireComposite<T> mc = composite_moire(live, pattern, config.synth.alpha);

            const std::string id = concat("mp_", live.source_id, "_", k);
            auto rel = [&](const std::string& name) {
                return (fs::path(cue_dir) / "moire_pairs" / name).string();
            };
            Tensor<T> rgb(1, 3, kCropSize, kCropSize), clean(1, 3, kCropSize, kCropSize);
            for (int j = 0; j < 3; ++j) {
                std::copy(mc.image.plane(0, j),
                          mc.image.plane(0, j) + static_cast<std::size_t>(kCropSize) * kCropSize,
                          rgb.plane(0, j));
                std::copy(live.image.plane(0, j),
                          live.image.plane(0, j) + static_cast<std::size_t>(kCropSize) * kCropSize,
                          clean.plane(0, j));
            }
            io::write_image_rgb_png(rel(id + ".png"), rgb);
            io::write_map_png16(rel(id + ".moire.png"), mc.moire_gt);
            io::write_image_rgb_png(rel(id + ".clean.png"), clean);
            pairs_out << nlohmann::json{{"id", id},
                                        {"image", id + ".png"},
                                        {"map", id + ".moire.png"},
                                        {"clean", id + ".clean.png"}}
                             .dump()
                      << '\n';
            ++summary.moire_pairs;
        }
        summary.pairs_manifest = pairs_path;
    }

    summary.updated_manifest = (fs::path(cue_dir) / "train_synth.manifest").string();
    save_manifest(updated, summary.updated_manifest);
    return summary;
}

template <typename T = float>
std::vector<MoirePair<T>> load_moire_pairs(const std::string& cue_dir) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(cue_dir) / "moire_pairs";
    const std::string pairs_path = (dir / "pairs.jsonl").string();
    require(fs::exists(pairs_path), ErrorCategory::io, "no moire pairs found: " + pairs_path);
    std::ifstream in(pairs_path);
    std::vector<MoirePair<T>> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        MoirePair<T> p;
        p.id = j.at("id").get<std::string>();
        p.image = detail::six_channel_from_rgb_file<T>((dir / j.at("image").get<std::string>()).string());
        p.moire_gt = io::read_map_png<T>((dir / j.at("map").get<std::string>()).string());
        if (j.contains("clean"))
            p.clean = detail::six_channel_from_rgb_file<T>((dir / j.at("clean").get<std::string>()).string());
        pairs.push_back(std::move(p));
    }
    require(!pairs.empty(), ErrorCategory::data, "empty moire pair stream");
    return pairs;
}

template <typename T = float>
void save_moire_checkpoint(const MoireNet<T>& net, const std::string& path) {
    Checkpoint ck;
    ck.meta["kind"] = "moire_net";
    ck.meta["trained"] = net.trained();
    ck.meta["config"] = {{"backbone", net.config().demoire_backbone},
                         {"backbone_width", net.config().backbone_width},
                         {"adapt_width", net.config().adapt_width},
                         {"refine_width", net.config().refine_width},
                         {"freeze_backbone", net.config().freeze_backbone},
                         {"concat_input", net.config().concat_input}};
    store_parameters(ck, net.params());
    ck.save(path);
}

template <typename T = float>
MoireNet<T> load_moire_checkpoint(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    require(ck.meta.value("kind", "") == "moire_net", ErrorCategory::state,
            "not a moire net checkpoint: " + path);
    const auto& cj = ck.meta.at("config");
    MoireNetConfig cfg;
    cfg.demoire_backbone = cj.at("backbone").get<std::string>();
    cfg.backbone_width = cj.at("backbone_width").get<int>();
    cfg.adapt_width = cj.at("adapt_width").get<int>();
    cfg.refine_width = cj.at("refine_width").get<int>();
    cfg.freeze_backbone = cj.at("freeze_backbone").get<bool>();
    cfg.concat_input = cj.at("concat_input").get<bool>();
    MoireNet<T> net(cfg, 0);
    restore_parameters(ck, net.params());
    if (ck.meta.value("trained", false)) net.mark_trained();
    return net;
}

// Writes <id>.moire.png for every record whose moire cue is active
// (replay spoofs and composites built from replay donors).
template <typename T = float>
int extract_moire_maps(const CorpusIndex& corpus, const MoireNet<T>& net,
                       const std::string& cue_dir) {
    std::filesystem::create_directories(cue_dir);
    SampleLoader<T> loader(corpus);
    int written = 0;
    for (int i = 0; i < static_cast<int>(corpus.samples.size()); ++i) {
        const auto& rec = corpus.samples[static_cast<std::size_t>(i)];
        if (rec.label != Label::spoof) continue;
        if (!validity_for(rec.label, rec.spoof_type, rec.composite_source).moire) continue;
        FaceSample<T> s = loader.load(i);
        io::write_map_png16(cue_file(cue_dir, s.source_id, "moire"), extract_moire_map(net, s.image));
        ++written;
    }
    return written;
}

}  // namespace megc
