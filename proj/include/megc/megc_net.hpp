#pragma once

// The MEGC model: shared backbone exposing conv3..conv6, the
// multi-auxiliary feature extractor (one map-prediction branch per cue),
// the multi-feature enrichment fusion (spoof cues fused, subtracted from
// the depth features) and the binary classifier.

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "megc/cue_synthesis.hpp"
#include "megc/nn.hpp"

namespace megc {

enum class Cue { depth, reflection, moire, boundary };

inline const char* to_string(Cue c) {
    switch (c) {
        case Cue::depth: return "depth";
        case Cue::reflection: return "reflection";
        case Cue::moire: return "moire";
        case Cue::boundary: return "boundary";
    }
    return "?";
}

inline Cue parse_cue(const std::string& s) {
    if (s == "depth") return Cue::depth;
    if (s == "reflection") return Cue::reflection;
    if (s == "moire") return Cue::moire;
    if (s == "boundary") return Cue::boundary;
    fail(ErrorCategory::config, "unknown cue: " + s);
}

struct BackboneConfig {
    // Full-scale stage widths; Fig-2-legible values for the conv3..conv5
    // concat trio, config defaults elsewhere. desk_scale shrinks all
    // widths by 4x.
    std::array<int, 6> widths = {64, 128, 128, 196, 128, 128};
    int head_width = 64;        // MAFE branch feature width
    int classifier_width = 128;
    bool desk_scale = false;
    int in_channels = 6;

    int stage_width(int i) const {
        int w = widths[static_cast<std::size_t>(i)];
        return desk_scale ? std::max(1, w / 4) : w;
    }
    int branch_width() const { return desk_scale ? std::max(1, head_width / 4) : head_width; }
    int cls_width() const { return desk_scale ? std::max(1, classifier_width / 4) : classifier_width; }
};

inline constexpr int kMafeSize = 64;  // conv3..conv5 resized to 64x64
inline constexpr int kMfeSize = 16;   // conv3..conv6 resized to 16x16

template <typename T = float>
struct AuxPredictions {
    ad::Value<T> depth_pre, reflection_pre, moire_pre, boundary_pre;  // null when ablated

    ad::Value<T> get(Cue c) const {
        switch (c) {
            case Cue::depth: return depth_pre;
            case Cue::reflection: return reflection_pre;
            case Cue::moire: return moire_pre;
            case Cue::boundary: return boundary_pre;
        }
        return nullptr;
    }
};

template <typename T = float>
struct BatchValidity {
    std::vector<bool> depth, reflection, moire, boundary;

    static BatchValidity all_true(int n) {
        BatchValidity v;
        v.depth.assign(static_cast<std::size_t>(n), true);
        v.reflection.assign(static_cast<std::size_t>(n), true);
        v.moire.assign(static_cast<std::size_t>(n), true);
        v.boundary.assign(static_cast<std::size_t>(n), true);
        return v;
    }

    const std::vector<bool>& get(Cue c) const {
        switch (c) {
            case Cue::depth: return depth;
            case Cue::reflection: return reflection;
            case Cue::moire: return moire;
            default: return boundary;
        }
    }
};

template <typename T = float>
struct MegcOutput {
    std::array<ad::Value<T>, 4> backbone_feats;  // conv3..conv6
    AuxPredictions<T> aux;
    ad::Value<T> fused;   // MFE output, 16x16
    ad::Value<T> logits;  // (n,2,1,1), order (live, spoof)
};

template <typename T = float>
class MegcNet {
public:
    MegcNet(const BackboneConfig& config, std::uint64_t seed,
            std::set<Cue> disabled_cues = {})
        : config_(config), disabled_(std::move(disabled_cues)) {
        require(!disabled_.count(Cue::depth), ErrorCategory::config,
                "the depth branch is the fusion anchor and cannot be disabled");
        auto rng = make_rng(seed, 0x6d656763);

        int prev = config.in_channels;
        for (int i = 0; i < 6; ++i) {
            const int w = config.stage_width(i);
            stages_[static_cast<std::size_t>(i)] =
                nn::Conv<T>(store_, concat("backbone.conv", i + 1), "backbone", prev, w, 3, 2, rng);
            prev = w;
        }

        const int c345 = config.stage_width(2) + config.stage_width(3) + config.stage_width(4);
        const int h = config.branch_width();
        for (Cue c : {Cue::depth, Cue::reflection, Cue::moire, Cue::boundary}) {
            if (disabled_.count(c)) continue;
            const std::string base = concat("mafe.", to_string(c));
            heads_.emplace(c, Head{
                nn::Conv<T>(store_, base + ".conv1", base, c345, h, 3, 2, rng),
                nn::Conv<T>(store_, base + ".conv2", base, h, h, 3, 1, rng),
                nn::Conv<T>(store_, base + ".out", base, h, 1, 3, 1, rng)});
        }

        int n_spoof_cues = 0;
        for (Cue c : {Cue::reflection, Cue::moire, Cue::boundary})
            if (!disabled_.count(c)) ++n_spoof_cues;
        if (n_spoof_cues > 0)
            spoof_proj_ = nn::Conv<T>(store_, "mfe.spoof_proj", "mfe", n_spoof_cues * h, h, 1, 1, rng);

        const int c3456 = c345 + config.stage_width(5);
        cls_conv_ = nn::Conv<T>(store_, "classifier.conv", "classifier", h + c3456,
                                config.cls_width(), 3, 2, rng);
        cls_fc_ = nn::Linear<T>(store_, "classifier.fc", "classifier", config.cls_width(), 2, rng);
    }

    const BackboneConfig& config() const { return config_; }
    const std::set<Cue>& disabled_cues() const { return disabled_; }
    bool has_head(Cue c) const { return heads_.count(c) > 0; }

    nn::ParameterStore<T>& params() { return store_; }
    const nn::ParameterStore<T>& params() const { return store_; }

    std::array<ad::Value<T>, 4> backbone_forward(ad::Graph<T>& g, const ad::Value<T>& x) const {
        require(x->val.c() == config_.in_channels, ErrorCategory::shape,
                concat("backbone expects ", config_.in_channels, "-channel input, got ", x->val.c()));
        require(x->val.h() >= 8 && x->val.w() >= 8, ErrorCategory::shape,
                "backbone input must be at least 8x8");
        ad::Value<T> cur = x;
        std::array<ad::Value<T>, 4> taps;
        for (int i = 0; i < 6; ++i) {
            cur = ad::op::relu(g, stages_[static_cast<std::size_t>(i)](g, cur));
            if (i >= 2) taps[static_cast<std::size_t>(i - 2)] = cur;
        }
        return taps;
    }

    // One auxiliary branch: map prediction plus the penultimate feature
    // that feeds the MFE.
    struct BranchOut {
        ad::Value<T> feature;  // 32x32 x branch_width
        ad::Value<T> map;      // 32x32 x 1, sigmoid-bounded
    };

    BranchOut branch_forward(ad::Graph<T>& g, Cue cue, const ad::Value<T>& mafe_in) const {
        const Head& head = heads_.at(cue);
        ad::Value<T> f = ad::op::relu(g, head.conv1(g, mafe_in));
        f = ad::op::relu(g, head.conv2(g, f));
        ad::Value<T> map = ad::op::sigmoid(g, head.out(g, f));
        return {f, map};
    }

    // Full forward pass. Validity flags gate gradient flow from the
    // classifier into per-sample branch features; forward values are
    // unaffected.
    MegcOutput<T> forward(ad::Graph<T>& g, const Tensor<T>& images,
                          const BatchValidity<T>& validity) const {
        require(static_cast<int>(validity.depth.size()) == images.n(), ErrorCategory::shape,
                "validity flags must match batch size");
        ad::Value<T> x = g.input(images, false);
        MegcOutput<T> out;
        out.backbone_feats = backbone_forward(g, x);

        std::vector<ad::Value<T>> at64;
        for (int i = 0; i < 3; ++i)
            at64.push_back(ad::op::bilinear_resize(g, out.backbone_feats[static_cast<std::size_t>(i)], kMafeSize, kMafeSize));
        ad::Value<T> mafe_in = ad::op::concat_channels(g, at64);

        std::map<Cue, BranchOut> branches;
        for (Cue c : {Cue::depth, Cue::reflection, Cue::moire, Cue::boundary})
            if (heads_.count(c)) branches.emplace(c, branch_forward(g, c, mafe_in));

        out.aux.depth_pre = branches.count(Cue::depth) ? branches.at(Cue::depth).map : nullptr;
        out.aux.reflection_pre = branches.count(Cue::reflection) ? branches.at(Cue::reflection).map : nullptr;
        out.aux.moire_pre = branches.count(Cue::moire) ? branches.at(Cue::moire).map : nullptr;
        out.aux.boundary_pre = branches.count(Cue::boundary) ? branches.at(Cue::boundary).map : nullptr;

        std::vector<ad::Value<T>> at16;
        for (const auto& f : out.backbone_feats)
            at16.push_back(ad::op::bilinear_resize(g, f, kMfeSize, kMfeSize));
        ad::Value<T> backbone16 = ad::op::concat_channels(g, at16);

        auto branch16 = [&](Cue c) {
            ad::Value<T> f = ad::op::bilinear_resize(g, branches.at(c).feature, kMfeSize, kMfeSize);
            return ad::op::gate_gradient(g, f, validity.get(c));
        };

        ad::Value<T> depth16 = branch16(Cue::depth);
        std::vector<ad::Value<T>> spoof_feats;
        for (Cue c : {Cue::reflection, Cue::moire, Cue::boundary})
            if (branches.count(c)) spoof_feats.push_back(branch16(c));

        ad::Value<T> spoof_map;
        if (!spoof_feats.empty()) {
            spoof_map = spoof_proj_(g, ad::op::concat_channels(g, spoof_feats));
        } else {
            spoof_map = g.constant(Tensor<T>(images.n(), config_.branch_width(), kMfeSize, kMfeSize));
        }
        ad::Value<T> diff = ad::op::sub(g, depth16, spoof_map);
        out.fused = ad::op::concat_channels(g, {diff, backbone16});

        ad::Value<T> c = ad::op::relu(g, cls_conv_(g, out.fused));
        out.logits = cls_fc_(g, ad::op::global_avg_pool(g, c));
        return out;
    }

    MegcOutput<T> forward(ad::Graph<T>& g, const Tensor<T>& images) const {
        return forward(g, images, BatchValidity<T>::all_true(images.n()));
    }

    // Spoof probability per sample (softmax over the two logits).
    std::vector<double> spoof_scores(const Tensor<T>& images) const {
        ad::Graph<T> g;
        MegcOutput<T> out = forward(g, images);
        std::vector<double> scores;
        scores.reserve(static_cast<std::size_t>(images.n()));
        for (int i = 0; i < images.n(); ++i) {
            const double a = out.logits->val.at(i, 0, 0, 0);
            const double b = out.logits->val.at(i, 1, 0, 0);
            const double mx = std::max(a, b);
            const double ea = std::exp(a - mx), eb = std::exp(b - mx);
            scores.push_back(eb / (ea + eb));
        }
        return scores;
    }

    std::vector<nn::LayerInfo> layers() const {
        std::vector<nn::LayerInfo> out;
        for (const auto& s : stages_) out.push_back(s.info());
        for (Cue c : {Cue::depth, Cue::reflection, Cue::moire, Cue::boundary}) {
            auto it = heads_.find(c);
            if (it == heads_.end()) continue;
            out.push_back(it->second.conv1.info());
            out.push_back(it->second.conv2.info());
            out.push_back(it->second.out.info());
        }
        if (spoof_proj_.info().out_channels > 0) out.push_back(spoof_proj_.info());
        out.push_back(cls_conv_.info());
        out.push_back(cls_fc_.info());
        return out;
    }

    std::size_t param_count() const { return store_.param_count(); }

private:
    struct Head {
        nn::Conv<T> conv1, conv2, out;
    };

    BackboneConfig config_;
    std::set<Cue> disabled_;
    nn::ParameterStore<T> store_;
    std::array<nn::Conv<T>, 6> stages_;
    std::map<Cue, Head> heads_;
    nn::Conv<T> spoof_proj_;
    nn::Conv<T> cls_conv_;
    nn::Linear<T> cls_fc_;
};

}  // namespace megc
