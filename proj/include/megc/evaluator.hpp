#pragma once

// Scoring, EER threshold selection, HTER computation and the
// cross-dataset protocol with cue ablations.
//
// Score orientation: higher = more spoof-like. Classification rule:
// score >= threshold => spoof. FRR is the fraction of live samples called
// spoof, FAR the fraction of spoof samples called live.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "megc/trainer.hpp"

namespace megc {

struct EvalReport {
    double far = 0.0;
    double frr = 0.0;
    double hter = 0.0;
    double threshold = 0.5;
    int n_live = 0;
    int n_spoof = 0;

    nlohmann::json to_json() const {
        return {{"far", far},          {"frr", frr},     {"hter", hter},
                {"threshold", threshold}, {"n_live", n_live}, {"n_spoof", n_spoof}};
    }
};

struct ScoredSample {
    std::string id;
    Label label = Label::live;
    double score = 0.0;
};

// Deterministic spoof scores for a list of corpus records.
template <typename T = float>
std::vector<ScoredSample> score_samples(const MegcNet<T>& net, SampleLoader<T>& loader,
                                        const std::vector<int>& ids, int batch_size = 8) {
    std::vector<ScoredSample> out;
    out.reserve(ids.size());
    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(batch_size)) {
        const int n = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                                             ids.size() - start));
        Tensor<T> images(n, 6, kCropSize, kCropSize);
        std::vector<ScoredSample> meta(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            FaceSample<T> s = loader.load(ids[start + static_cast<std::size_t>(i)]);
            images.set_sample(i, s.image);
            meta[static_cast<std::size_t>(i)] = {s.source_id, s.label, 0.0};
        }
        std::vector<double> scores = net.spoof_scores(images);
        for (int i = 0; i < n; ++i) {
            meta[static_cast<std::size_t>(i)].score = scores[static_cast<std::size_t>(i)];
            out.push_back(meta[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

inline EvalReport compute_hter(const std::vector<double>& live_scores,
                               const std::vector<double>& spoof_scores, double threshold) {
    require(!live_scores.empty() && !spoof_scores.empty(), ErrorCategory::data,
            "compute_hter needs scores from both classes");
    int live_rejected = 0;
    for (double s : live_scores) live_rejected += s >= threshold ? 1 : 0;
    int spoof_accepted = 0;
    for (double s : spoof_scores) spoof_accepted += s < threshold ? 1 : 0;
    EvalReport r;
    r.n_live = static_cast<int>(live_scores.size());
    r.n_spoof = static_cast<int>(spoof_scores.size());
    r.frr = static_cast<double>(live_rejected) / r.n_live;
    r.far = static_cast<double>(spoof_accepted) / r.n_spoof;
    r.hter = (r.far + r.frr) / 2.0;
    r.threshold = threshold;
    return r;
}

// The EER operating point: the threshold minimizing |FAR - FRR|, with ties
// broken toward the midpoint of the tie interval. FAR/FRR are step
// functions that only change at observed scores, so it suffices to scan
// the regions between consecutive distinct scores.
inline double select_threshold(const std::vector<double>& live_scores,
                               const std::vector<double>& spoof_scores) {
    require(!live_scores.empty() && !spoof_scores.empty(), ErrorCategory::data,
            "select_threshold needs scores from both classes");
    std::vector<double> breaks;
    breaks.insert(breaks.end(), live_scores.begin(), live_scores.end());
    breaks.insert(breaks.end(), spoof_scores.begin(), spoof_scores.end());
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
    const int m = static_cast<int>(breaks.size());

    // Region k covers thresholds (breaks[k-1], breaks[k]]; region m covers
    // everything above the largest score.
    auto diff_at = [&](double t) {
        const EvalReport r = compute_hter(live_scores, spoof_scores, t);
        return std::abs(r.far - r.frr);
    };
    std::vector<double> region_diff(static_cast<std::size_t>(m) + 1);
    for (int k = 0; k < m; ++k) region_diff[static_cast<std::size_t>(k)] = diff_at(breaks[static_cast<std::size_t>(k)]);
    region_diff[static_cast<std::size_t>(m)] = diff_at(breaks.back() + 1.0);

    double best = region_diff[0];
    for (double d : region_diff) best = std::min(best, d);

    // Merge contiguous minimizing regions into one tie interval.
    int first = 0;
    while (region_diff[static_cast<std::size_t>(first)] > best + 1e-15) ++first;
    int last = first;
    while (last + 1 <= m && region_diff[static_cast<std::size_t>(last + 1)] <= best + 1e-15) ++last;

    const double lo = first == 0 ? breaks.front() : breaks[static_cast<std::size_t>(first - 1)];
    const double hi = last == m ? breaks.back() : breaks[static_cast<std::size_t>(last)];
    return (lo + hi) / 2.0;
}

inline void split_scores(const std::vector<ScoredSample>& scored, std::vector<double>& live,
                         std::vector<double>& spoof) {
    live.clear();
    spoof.clear();
    for (const auto& s : scored)
        (s.label == Label::live ? live : spoof).push_back(s.score);
}

// Mean score per video id (the sample id up to a '#' marker, when present).
inline std::vector<ScoredSample> aggregate_by_video(const std::vector<ScoredSample>& scored) {
    std::map<std::string, std::pair<ScoredSample, int>> groups;
    for (const auto& s : scored) {
        std::string key = s.id.substr(0, s.id.find('#'));
        auto [it, fresh] = groups.try_emplace(key, std::make_pair(s, 0));
        if (fresh) {
            it->second.first.id = key;
            it->second.first.score = 0.0;
        }
        it->second.first.score += s.score;
        it->second.second += 1;
    }
    std::vector<ScoredSample> out;
    out.reserve(groups.size());
    for (auto& [key, g] : groups) {
        g.first.score /= g.second;
        out.push_back(g.first);
    }
    return out;
}

// Deterministic dev split: samples whose id hashes into the dev bucket.
inline bool in_dev_split(const std::string& sample_id, double dev_fraction = 0.2) {
    const std::uint64_t h = fnv1a64(sample_id);
    return static_cast<double>(h % 10000) < dev_fraction * 10000.0;
}

struct ProtocolOptions {
    TrainConfig train;
    double dev_fraction = 0.2;
    bool by_video = false;
    bool dump_maps = false;
    int score_batch = 8;
    std::string config_hash;  // provenance, recorded in the run manifest
};

struct ProtocolResult {
    EvalReport report;
    nlohmann::json manifest;
    std::string checkpoint;
};

// Dumps the four predicted auxiliary maps for one sample as a 2x2 PNG
// grid (nearest-neighbour upscaled) for visual inspection.
template <typename T>
void dump_aux_maps(const MegcNet<T>& net, const FaceSample<T>& sample, const std::string& path) {
    ad::Graph<T> g;
    MegcOutput<T> out = net.forward(g, sample.image);
    const int cell = 64, up = cell / kMapSize;
    Tensor<T> grid(1, 3, 2 * cell, 2 * cell);
    auto blit = [&](const ad::Value<T>& map, int row, int col) {
        for (int y = 0; y < cell; ++y)
            for (int x = 0; x < cell; ++x) {
                const T v = map ? map->val.at(0, 0, y / up, x / up) : T(0);
                for (int ch = 0; ch < 3; ++ch) grid.at(0, ch, row * cell + y, col * cell + x) = v;
            }
    };
    blit(out.aux.depth_pre, 0, 0);
    blit(out.aux.reflection_pre, 0, 1);
    blit(out.aux.moire_pre, 1, 0);
    blit(out.aux.boundary_pre, 1, 1);
    io::write_image_rgb_png(path, grid);
}

// Cross-dataset run: train on the source corpus (minus its dev split, which
// fixes the threshold at the EER point), evaluate HTER on the target
// corpus. `ablation` removes whole cue branches (Ours_wo/R, _wo/M, _wo/B).
template <typename T = float>
ProtocolResult run_protocol(const CorpusIndex& train_corpus, const CorpusIndex& test_corpus,
                            SupervisionSource<T>& supervision, const ProtocolOptions& options,
                            const std::set<Cue>& ablation, const std::string& run_dir) {
    for (Cue c : ablation)
        require(c != Cue::depth, ErrorCategory::config,
                "the depth cue is the fusion anchor and cannot be ablated");

    TrainConfig cfg = options.train;
    cfg.disabled_cues = ablation;

    CorpusIndex fit = train_corpus;
    CorpusIndex dev = train_corpus;
    fit.samples.clear();
    dev.samples.clear();
    dev.split = Split::dev;
    for (const auto& rec : train_corpus.samples)
        (in_dev_split(rec.source_id, options.dev_fraction) ? dev : fit).samples.push_back(rec);
    if (dev.samples.empty() || dev.count(Label::live) == 0 || dev.count(Label::spoof) == 0) {
        // Tiny corpora may hash every sample into one bucket; fall back to
        // thresholding on the training data itself.
        dev = train_corpus;
        dev.split = Split::dev;
    }
    if (fit.count(Label::live) == 0 || fit.count(Label::spoof) == 0) fit = train_corpus;

    Trainer<T> trainer(fit, supervision, cfg, run_dir);
    TrainResult<T> trained = trainer.train();

    SampleLoader<T> dev_loader(dev);
    std::vector<int> dev_ids(dev.samples.size());
    for (std::size_t i = 0; i < dev_ids.size(); ++i) dev_ids[i] = static_cast<int>(i);
    std::vector<ScoredSample> dev_scored =
        score_samples(trainer.net(), dev_loader, dev_ids, options.score_batch);
    if (options.by_video) dev_scored = aggregate_by_video(dev_scored);
    std::vector<double> live, spoof;
    split_scores(dev_scored, live, spoof);
    const double threshold = select_threshold(live, spoof);

    SampleLoader<T> test_loader(test_corpus);
    std::vector<int> test_ids(test_corpus.samples.size());
    for (std::size_t i = 0; i < test_ids.size(); ++i) test_ids[i] = static_cast<int>(i);
    std::vector<ScoredSample> test_scored =
        score_samples(trainer.net(), test_loader, test_ids, options.score_batch);
    if (options.by_video) test_scored = aggregate_by_video(test_scored);
    split_scores(test_scored, live, spoof);

    ProtocolResult result;
    result.report = compute_hter(live, spoof, threshold);
    result.checkpoint = trained.final_checkpoint;

    const std::string ckpt_id = Checkpoint::load(trained.final_checkpoint).weight_digest();
    nlohmann::json ablation_json = nlohmann::json::array();
    for (Cue c : ablation) ablation_json.push_back(to_string(c));
    result.manifest = {{"config_hash", options.config_hash},
                       {"seed", cfg.seed},
                       {"ablation", ablation_json},
                       {"checkpoint", trained.final_checkpoint},
                       {"checkpoint_id", ckpt_id},
                       {"threshold", threshold},
                       {"dev_samples", dev.samples.size()},
                       {"train_samples", fit.samples.size()},
                       {"test_samples", test_corpus.samples.size()},
                       {"report", result.report.to_json()}};

    std::ofstream mout((std::filesystem::path(run_dir) / "run_manifest.json").string());
    mout << result.manifest.dump(2) << '\n';
    std::ofstream rout((std::filesystem::path(run_dir) / "report.json").string());
    rout << result.report.to_json().dump(2) << '\n';

    if (options.dump_maps) {
        const std::string map_dir = (std::filesystem::path(run_dir) / "maps").string();
        std::filesystem::create_directories(map_dir);
        for (std::size_t i = 0; i < test_corpus.samples.size(); ++i) {
            FaceSample<T> s = test_loader.load(static_cast<int>(i));
            dump_aux_maps(trainer.net(), s,
                          (std::filesystem::path(map_dir) / (s.source_id + ".maps.png")).string());
        }
    }
    return result;
}

inline std::string format_report_table(const EvalReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "  %-10s %8s\n  %-10s %8.4f\n  %-10s %8.4f\n  %-10s %8.4f\n  %-10s %8.4f\n",
                  "metric", "value", "FAR", r.far, "FRR", r.frr, "HTER", r.hter, "threshold",
                  r.threshold);
    return buf;
}

}  // namespace megc
