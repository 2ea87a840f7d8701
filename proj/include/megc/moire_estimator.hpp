#pragma once

// Moire-map extraction network: a pluggable demoireing backbone whose
// residual (input minus demoired image) is passed through two learnable
// 3x3 adaptation convolutions and two 3x3 refinement convolutions, ending
// in a sigmoid-bounded 32x32 map.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "megc/cue_synthesis.hpp"
#include "megc/nn.hpp"

namespace megc {

struct MoireNetConfig {
    std::string demoire_backbone = "conv_ae";  // plugin id; "identity" has no params
    int backbone_width = 8;
    int adapt_width = 8;   // channels of the two adaptation convs
    int refine_width = 8;  // channels of the first refinement conv
    bool freeze_backbone = true;
    bool concat_input = false;  // feed residual concatenated with the input
    int output_size = kMapSize;
};

// A demoireing backbone maps the 6-channel crop to a demoired image of the
// same shape.
template <typename T>
class DemoireBackbone {
public:
    virtual ~DemoireBackbone() = default;
    virtual ad::Value<T> forward(ad::Graph<T>& g, const ad::Value<T>& x) const = 0;
    virtual void build(nn::ParameterStore<T>& store, std::mt19937_64& rng) = 0;
    virtual std::vector<nn::LayerInfo> layers() const { return {}; }
    virtual std::vector<std::string> param_names() const { return {}; }
};

template <typename T>
class IdentityBackbone final : public DemoireBackbone<T> {
public:
    ad::Value<T> forward(ad::Graph<T>&, const ad::Value<T>& x) const override { return x; }
    void build(nn::ParameterStore<T>&, std::mt19937_64&) override {}
};

// Small convolutional encoder-decoder: three stride-2 stages down, three
// bilinear x2 + conv stages back up, sigmoid output.
template <typename T>
class ConvAutoencoderBackbone final : public DemoireBackbone<T> {
public:
    explicit ConvAutoencoderBackbone(int width, int in_channels = 6)
        : width_(width), in_channels_(in_channels) {}

    void build(nn::ParameterStore<T>& store, std::mt19937_64& rng) override {
        const int w = width_;
        enc1_ = nn::Conv<T>(store, "demoire.enc1", "demoire", in_channels_, w, 3, 2, rng);
        enc2_ = nn::Conv<T>(store, "demoire.enc2", "demoire", w, 2 * w, 3, 2, rng);
        enc3_ = nn::Conv<T>(store, "demoire.enc3", "demoire", 2 * w, 2 * w, 3, 2, rng);
        dec1_ = nn::Conv<T>(store, "demoire.dec1", "demoire", 2 * w, 2 * w, 3, 1, rng);
        dec2_ = nn::Conv<T>(store, "demoire.dec2", "demoire", 2 * w, w, 3, 1, rng);
        dec3_ = nn::Conv<T>(store, "demoire.dec3", "demoire", w, in_channels_, 3, 1, rng);
    }

    ad::Value<T> forward(ad::Graph<T>& g, const ad::Value<T>& x) const override {
        using namespace ad::op;
        const int h = x->val.h(), w = x->val.w();
        ad::Value<T> e1 = relu(g, enc1_(g, x));
        ad::Value<T> e2 = relu(g, enc2_(g, e1));
        ad::Value<T> e3 = relu(g, enc3_(g, e2));
        // conv before upsample keeps the decoder cheap
        ad::Value<T> d = bilinear_resize(g, relu(g, dec1_(g, e3)), e2->val.h(), e2->val.w());
        d = bilinear_resize(g, relu(g, dec2_(g, d)), e1->val.h(), e1->val.w());
        return sigmoid(g, bilinear_resize(g, dec3_(g, d), h, w));
    }

    std::vector<nn::LayerInfo> layers() const override {
        return {enc1_.info(), enc2_.info(), enc3_.info(), dec1_.info(), dec2_.info(), dec3_.info()};
    }

    std::vector<std::string> param_names() const override {
        std::vector<std::string> out;
        for (const auto& l : layers()) {
            out.push_back(l.name + ".weight");
            out.push_back(l.name + ".bias");
        }
        return out;
    }

private:
    int width_, in_channels_;
    nn::Conv<T> enc1_, enc2_, enc3_, dec1_, dec2_, dec3_;
};

template <typename T>
using BackboneFactory = std::function<std::unique_ptr<DemoireBackbone<T>>(const MoireNetConfig&)>;

template <typename T>
std::map<std::string, BackboneFactory<T>>& backbone_registry() {
    static std::map<std::string, BackboneFactory<T>> reg = {
        {"identity", [](const MoireNetConfig&) { return std::make_unique<IdentityBackbone<T>>(); }},
        {"conv_ae", [](const MoireNetConfig& c) {
             return std::make_unique<ConvAutoencoderBackbone<T>>(c.backbone_width);
         }},
    };
    return reg;
}

template <typename T>
void register_backbone(const std::string& id, BackboneFactory<T> factory) {
    backbone_registry<T>()[id] = std::move(factory);
}

template <typename T = float>
class MoireNet {
public:
    MoireNet(const MoireNetConfig& config, std::uint64_t seed) : config_(config) {
        auto& reg = backbone_registry<T>();
        auto it = reg.find(config.demoire_backbone);
        require(it != reg.end(), ErrorCategory::config,
                "unknown demoire backbone: " + config.demoire_backbone);
        backbone_ = it->second(config);

        auto rng = make_rng(seed, 0x6d6f697265);
        backbone_->build(store_, rng);
        for (const auto& name : backbone_->param_names()) backbone_params_.push_back(name);
        set_backbone_trainable(!config.freeze_backbone);

        const int in_ch = config.concat_input ? 12 : 6;
        const int aw = config.adapt_width, rw = config.refine_width;
        adapt1_ = nn::Conv<T>(store_, "adapt.conv1", "adapt", in_ch, aw, 3, 2, rng);
        adapt2_ = nn::Conv<T>(store_, "adapt.conv2", "adapt", aw, aw, 3, 2, rng);
        refine1_ = nn::Conv<T>(store_, "refine.conv1", "refine", aw, rw, 3, 2, rng);
        refine2_ = nn::Conv<T>(store_, "refine.conv2", "refine", rw, 1, 3, 1, rng);
    }

    const MoireNetConfig& config() const { return config_; }
    nn::ParameterStore<T>& params() { return store_; }
    const nn::ParameterStore<T>& params() const { return store_; }
    const std::vector<std::string>& backbone_param_names() const { return backbone_params_; }

    void set_backbone_trainable(bool trainable) {
        for (const auto& name : backbone_params_) store_.get(name).trainable = trainable;
    }

    bool backbone_frozen() const {
        for (const auto& name : backbone_params_)
            if (store_.get(name).trainable) return false;
        return true;
    }

    // The demoired image for the current input (diagnostics / pretraining).
    ad::Value<T> demoire(ad::Graph<T>& g, const ad::Value<T>& x) const {
        return backbone_->forward(g, x);
    }

    // residual = input - demoire(input); adapt convs; refine convs ->
    // sigmoid map at input/8 per side.
    ad::Value<T> forward(ad::Graph<T>& g, const ad::Value<T>& x) const {
        using namespace ad::op;
        require(x->val.c() == 6, ErrorCategory::shape, "moire net expects 6-channel input");
        ad::Value<T> residual = sub(g, x, backbone_->forward(g, x));
        ad::Value<T> h = config_.concat_input ? concat_channels(g, {residual, x}) : residual;
        h = relu(g, adapt1_(g, h));
        h = relu(g, adapt2_(g, h));
        h = relu(g, refine1_(g, h));
        return sigmoid(g, refine2_(g, h));
    }

    std::vector<nn::LayerInfo> layers() const {
        std::vector<nn::LayerInfo> out = backbone_->layers();
        out.push_back(adapt1_.info());
        out.push_back(adapt2_.info());
        out.push_back(refine1_.info());
        out.push_back(refine2_.info());
        return out;
    }

    std::size_t param_count() const { return store_.param_count(); }
    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

private:
    MoireNetConfig config_;
    std::unique_ptr<DemoireBackbone<T>> backbone_;
    std::vector<std::string> backbone_params_;
    nn::ParameterStore<T> store_;
    nn::Conv<T> adapt1_, adapt2_, refine1_, refine2_;
    bool trained_ = false;
};

template <typename T>
MoireNet<T> build_moire_net(const MoireNetConfig& config, std::uint64_t seed) {
    return MoireNet<T>(config, seed);
}

// One synthetic training pair from composite_moire: the moire-augmented
// crop, its 32x32 map, and optionally the clean crop (used to pretrain a
// trainable demoireing backbone before freezing it).
template <typename T = float>
struct MoirePair {
    std::string id;
    Tensor<T> image;                  // 1x6x256x256
    Tensor<T> moire_gt;               // 1x1x32x32
    std::optional<Tensor<T>> clean;   // 1x6x256x256
};

struct MoireTrainOptions {
    long steps = 200;
    int batch_size = 4;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    long pretrain_steps = 0;  // backbone demoireing pretraining phase
};

template <typename T>
std::vector<double> train_moire_net(MoireNet<T>& net, const std::vector<MoirePair<T>>& pairs,
                                    const MoireTrainOptions& opt) {
    require(!pairs.empty(), ErrorCategory::data, "empty moire pair stream");
    const int bs = std::min<int>(opt.batch_size, static_cast<int>(pairs.size()));

    auto gather = [&](std::mt19937_64& rng, std::vector<const MoirePair<T>*>& batch) {
        std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
        batch.clear();
        for (int i = 0; i < bs; ++i) batch.push_back(&pairs[pick(rng)]);
    };

    // Phase A: pretrain a trainable demoireing backbone on (moire, clean)
    // pairs, then freeze it.
    if (opt.pretrain_steps > 0 && net.config().freeze_backbone && !net.backbone_param_names().empty()) {
        bool have_clean = true;
        for (const auto& p : pairs) have_clean &= p.clean.has_value();
        require(have_clean, ErrorCategory::data,
                "backbone pretraining needs clean images in every pair");
        net.set_backbone_trainable(true);
        nn::Adam<T> adam(net.params(), {opt.lr, 0.9, 0.999, 1e-8, nn::LrSchedule::constant, 0});
        auto rng = make_rng(opt.seed, 0x70726574);
        std::vector<const MoirePair<T>*> batch;
        for (long step = 0; step < opt.pretrain_steps; ++step) {
            gather(rng, batch);
            Tensor<T> x(bs, 6, batch[0]->image.h(), batch[0]->image.w());
            Tensor<T> y = x;
            for (int i = 0; i < bs; ++i) {
                x.set_sample(i, batch[static_cast<std::size_t>(i)]->image);
                y.set_sample(i, *batch[static_cast<std::size_t>(i)]->clean);
            }
            ad::Graph<T> g;
            ad::Value<T> out = net.demoire(g, g.input(x));
            std::vector<bool> all(static_cast<std::size_t>(bs), true);
            ad::Value<T> loss = ad::op::masked_map_mse(g, out, y, all, true);
            net.params().zero_grad();
            g.backward(loss);
            adam.step();
        }
        net.set_backbone_trainable(false);
    }

    nn::Adam<T> adam(net.params(), {opt.lr, 0.9, 0.999, 1e-8, nn::LrSchedule::constant, 0});
    auto rng = make_rng(opt.seed, 0x747261696e);
    std::vector<const MoirePair<T>*> batch;
    std::vector<double> history;
    history.reserve(static_cast<std::size_t>(opt.steps));
    for (long step = 0; step < opt.steps; ++step) {
        gather(rng, batch);
        Tensor<T> x(bs, 6, batch[0]->image.h(), batch[0]->image.w());
        Tensor<T> y(bs, 1, batch[0]->moire_gt.h(), batch[0]->moire_gt.w());
        for (int i = 0; i < bs; ++i) {
            x.set_sample(i, batch[static_cast<std::size_t>(i)]->image);
            y.set_sample(i, batch[static_cast<std::size_t>(i)]->moire_gt);
        }
        ad::Graph<T> g;
        ad::Value<T> pred = net.forward(g, g.input(x));
        std::vector<bool> all(static_cast<std::size_t>(bs), true);
        ad::Value<T> loss = ad::op::masked_map_mse(g, pred, y, all, true);
        require(std::isfinite(static_cast<double>(loss->val[0])), ErrorCategory::numeric,
                concat("non-finite moire loss at step ", step));
        history.push_back(static_cast<double>(loss->val[0]));
        net.params().zero_grad();
        g.backward(loss);
        adam.step();
    }
    net.mark_trained();
    return history;
}

// Deterministic single forward pass; 256x256x6 in, 32x32 map in [0,1] out.
template <typename T>
Tensor<T> extract_moire_map(const MoireNet<T>& net, const Tensor<T>& image) {
    require(net.trained(), ErrorCategory::state, "moire net has not been trained");
    require(image.n() == 1 && image.c() == 6 && image.h() == kCropSize && image.w() == kCropSize,
            ErrorCategory::shape,
            concat("extract_moire_map expects 1x6x", kCropSize, "x", kCropSize, ", got ",
                   image.shape().str()));
    ad::Graph<T> g;
    ad::Value<T> pred = net.forward(g, g.input(image));
    Tensor<T> out = pred->val;
    clamp_unit(out);
    return out;
}

// Moving-average smoothing used when judging loss histories.
inline std::vector<double> smooth_history(const std::vector<double>& h, int window = 10) {
    std::vector<double> out;
    out.reserve(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
        std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - static_cast<std::size_t>(window) : 0;
        double acc = 0.0;
        for (std::size_t k = lo; k <= i; ++k) acc += h[k];
        out.push_back(acc / static_cast<double>(i - lo + 1));
    }
    return out;
}

}  // namespace megc
