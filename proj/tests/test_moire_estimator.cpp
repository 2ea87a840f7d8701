// Moire extraction network: architecture introspection, freeze contract,
// overfit behavior on synthetic pairs, and deterministic extraction.

#include <gtest/gtest.h>

#include "support/testing.hpp"

using namespace megc;
using megc_test::random_tensor;
using megc_test::ScratchDir;

namespace {

FaceSample<float> flat_live(std::uint64_t seed) {
    FaceSample<float> s;
    Tensor<float> rgb(1, 3, 256, 256);
    auto rng = make_rng(seed);
    // smooth low-frequency background so the moire residual dominates
    std::uniform_real_distribution<double> base(0.3, 0.7);
    const double r0 = base(rng), g0 = base(rng), b0 = base(rng);
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x) {
            rgb.at(0, 0, y, x) = static_cast<float>(r0 + 0.1 * y / 256.0);
            rgb.at(0, 1, y, x) = static_cast<float>(g0 + 0.1 * x / 256.0);
            rgb.at(0, 2, y, x) = static_cast<float>(b0);
        }
    Tensor<float> hsv = rgb_to_hsv_image(rgb);
    s.image = Tensor<float>(1, 6, 256, 256);
    for (int j = 0; j < 3; ++j) {
        std::copy(rgb.plane(0, j), rgb.plane(0, j) + 256 * 256, s.image.plane(0, j));
        std::copy(hsv.plane(0, j), hsv.plane(0, j) + 256 * 256, s.image.plane(0, j + 3));
    }
    s.label = Label::live;
    s.source_id = concat("flat_", seed);
    s.face_in_crop = Rect{64, 64, 128, 128};
    return s;
}

std::vector<MoirePair<float>> synthetic_pairs(int count, std::uint64_t seed) {
    std::vector<MoirePair<float>> pairs;
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> freq(0.15, 0.28), delta(0.01, 0.04),
        angle(0.2, 2.5);
    for (int k = 0; k < count; ++k) {
        FaceSample<float> live = flat_live(seed * 100 + static_cast<std::uint64_t>(k));
        GratingSpec a{freq(rng), angle(rng), 0.0, 1.0};
        GratingSpec b{a.frequency + delta(rng), a.orientation, 1.0, 1.0};
        Tensor<float> pattern = synthesize_moire_pattern<float>(a, b, 256, 256);
        MoireComposite<float> mc = composite_moire(live, pattern, 0.4);
        MoirePair<float> p;
        p.id = concat("p", k);
        p.image = mc.image;
        p.moire_gt = mc.moire_gt;
        p.clean = live.image;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

MoireNetConfig identity_config() {
    MoireNetConfig c;
    c.demoire_backbone = "identity";
    c.adapt_width = 8;
    c.refine_width = 8;
    return c;
}

double pearson(const Tensor<float>& a, const Tensor<float>& b) {
    const double ma = a.mean(), mb = b.mean();
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double xa = a[i] - ma, xb = b[i] - mb;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    return num / std::sqrt(std::max(da * db, 1e-30));
}

TEST(MoireNet, ArchitectureHasTwoPlusTwo3x3Convs) {
    MoireNet<float> net(identity_config(), 1);
    int adapt = 0, refine = 0;
    for (const auto& l : net.layers()) {
        if (l.stage == "adapt") {
            EXPECT_EQ(l.kernel_h, 3);
            EXPECT_EQ(l.kernel_w, 3);
            ++adapt;
        }
        if (l.stage == "refine") {
            EXPECT_EQ(l.kernel_h, 3);
            EXPECT_EQ(l.kernel_w, 3);
            ++refine;
        }
    }
    EXPECT_EQ(adapt, 2);
    EXPECT_EQ(refine, 2);
}

TEST(MoireNet, ParamCountMatchesClosedFormConvFormula) {
    MoireNetConfig cfg = identity_config();
    MoireNet<float> net(cfg, 2);
    const std::size_t expected = nn::conv_param_count(8, 6, 3, 3) + nn::conv_param_count(8, 8, 3, 3) +
                                 nn::conv_param_count(8, 8, 3, 3) + nn::conv_param_count(1, 8, 3, 3);
    EXPECT_EQ(net.param_count(), expected);

    MoireNetConfig ae = identity_config();
    ae.demoire_backbone = "conv_ae";
    ae.backbone_width = 4;
    MoireNet<float> net2(ae, 2);
    std::size_t backbone = nn::conv_param_count(4, 6, 3, 3) + nn::conv_param_count(8, 4, 3, 3) +
                           nn::conv_param_count(8, 8, 3, 3) + nn::conv_param_count(8, 8, 3, 3) +
                           nn::conv_param_count(4, 8, 3, 3) + nn::conv_param_count(6, 4, 3, 3);
    EXPECT_EQ(net2.param_count(), backbone + expected);
}

TEST(MoireNet, UnknownBackboneRejected) {
    MoireNetConfig cfg;
    cfg.demoire_backbone = "mrgan";
    EXPECT_THROW(MoireNet<float>(cfg, 1), Error);
}

TEST(MoireNet, IdentityBackboneKillsInputDependence) {
    // residual = x - x = 0, so the prediction cannot depend on the input
    MoireNet<float> net(identity_config(), 3);
    ad::Graph<float> g1, g2;
    Tensor<float> a = random_tensor<float>(1, 6, 64, 64, 4, 0.0, 1.0);
    Tensor<float> b = random_tensor<float>(1, 6, 64, 64, 5, 0.0, 1.0);
    auto pa = net.forward(g1, g1.input(a));
    auto pb = net.forward(g2, g2.input(b));
    for (std::size_t i = 0; i < pa->val.size(); ++i) ASSERT_EQ(pa->val[i], pb->val[i]);
}

TEST(MoireNet, FrozenBackboneGetsNoGradientAndNoUpdate) {
    MoireNetConfig cfg;
    cfg.demoire_backbone = "conv_ae";
    cfg.backbone_width = 4;
    cfg.freeze_backbone = true;
    MoireNet<float> net(cfg, 6);
    EXPECT_TRUE(net.backbone_frozen());

    std::map<std::string, Tensor<float>> before;
    for (const auto& name : net.backbone_param_names())
        before.emplace(name, net.params().get(name).value);

    auto pairs = synthetic_pairs(4, 7);
    MoireTrainOptions opt;
    opt.steps = 3;
    opt.batch_size = 2;
    opt.pretrain_steps = 0;
    train_moire_net(net, pairs, opt);

    for (const auto& name : net.backbone_param_names()) {
        const auto& p = net.params().get(name);
        EXPECT_EQ(p.grad.sq_norm(), 0.0) << name;
        const Tensor<float>& orig = before.at(name);
        for (std::size_t i = 0; i < orig.size(); ++i)
            ASSERT_EQ(p.value[i], orig[i]) << name << " changed at " << i;
    }
}

TEST(MoireNet, TrainingShrinksLossOnSyntheticPairs) {
    // The identity backbone zeroes the residual, so route the raw input to
    // the adaptation convs via concat_input to keep the task learnable
    // while staying cheap.
    MoireNetConfig cfg = identity_config();
    cfg.concat_input = true;
    MoireNet<float> net(cfg, 8);
    auto pairs = synthetic_pairs(12, 9);
    MoireTrainOptions opt;
    opt.steps = 250;
    opt.batch_size = 4;
    opt.lr = 1e-2;
    std::vector<double> history = train_moire_net(net, pairs, opt);
    ASSERT_EQ(history.size(), 250u);
    auto smoothed = smooth_history(history);
    EXPECT_LT(smoothed.back(), 0.25 * smoothed.front())
        << "initial " << smoothed.front() << " final " << smoothed.back();
}

TEST(MoireNet, ZeroTargetsDrivePredictionsDown) {
    MoireNet<float> net(identity_config(), 10);
    auto pairs = synthetic_pairs(6, 11);
    for (auto& p : pairs) p.moire_gt.fill(0.0f);
    Tensor<float> before;
    {
        ad::Graph<float> g;
        before = net.forward(g, g.input(pairs[0].image))->val;
    }
    MoireTrainOptions opt;
    opt.steps = 150;
    opt.batch_size = 4;
    opt.lr = 2e-2;
    train_moire_net(net, pairs, opt);
    Tensor<float> after = extract_moire_map(net, pairs[0].image);
    EXPECT_LT(after.mean(), before.mean());
    EXPECT_LT(after.mean(), 0.2);
}

TEST(MoireNet, EmptyPairStreamRejected) {
    MoireNet<float> net(identity_config(), 12);
    std::vector<MoirePair<float>> none;
    EXPECT_THROW(train_moire_net(net, none, {}), Error);
}

TEST(Extract, DeterministicAndBounded) {
    MoireNet<float> net(identity_config(), 13);
    auto pairs = synthetic_pairs(4, 14);
    MoireTrainOptions opt;
    opt.steps = 10;
    opt.batch_size = 2;
    train_moire_net(net, pairs, opt);
    Tensor<float> a = extract_moire_map(net, pairs[0].image);
    Tensor<float> b = extract_moire_map(net, pairs[0].image);
    EXPECT_EQ(a.shape(), (Shape{1, 1, 32, 32}));
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
    EXPECT_GE(a.min(), 0.0f);
    EXPECT_LE(a.max(), 1.0f);
}

TEST(Extract, RequiresTrainedNetAndRightShape) {
    MoireNet<float> net(identity_config(), 15);
    Tensor<float> img = random_tensor<float>(1, 6, 256, 256, 16, 0.0, 1.0);
    EXPECT_THROW(extract_moire_map(net, img), Error);
    net.mark_trained();
    Tensor<float> wrong = random_tensor<float>(1, 6, 128, 128, 17, 0.0, 1.0);
    EXPECT_THROW(extract_moire_map(net, wrong), Error);
    EXPECT_NO_THROW(extract_moire_map(net, img));
}

TEST(Extract, HeldOutPairsCorrelateAfterSmokeTraining) {
    MoireNetConfig cfg = identity_config();
    cfg.concat_input = true;
    MoireNet<float> net(cfg, 18);
    auto train_pairs = synthetic_pairs(16, 19);
    auto held_out = synthetic_pairs(4, 20);
    MoireTrainOptions opt;
    opt.steps = 250;
    opt.batch_size = 4;
    opt.lr = 1e-2;
    train_moire_net(net, train_pairs, opt);

    double mean_r = 0.0;
    for (const auto& p : held_out) {
        Tensor<float> pred = extract_moire_map(net, p.image);
        mean_r += pearson(pred, p.moire_gt);
    }
    mean_r /= static_cast<double>(held_out.size());
    EXPECT_GT(mean_r, 0.5) << "held-out correlation too low";

    // clean live images should score lower on average than moire images
    double clean_mean = 0.0, moire_mean = 0.0;
    for (const auto& p : held_out) {
        clean_mean += extract_moire_map(net, *p.clean).mean();
        moire_mean += extract_moire_map(net, p.image).mean();
    }
    EXPECT_LT(clean_mean, moire_mean);
}

TEST(Checkpoint, MoireNetRoundTripsThroughDisk) {
    ScratchDir dir("moire_ckpt");
    MoireNetConfig cfg;
    cfg.demoire_backbone = "conv_ae";
    cfg.backbone_width = 4;
    MoireNet<float> net(cfg, 21);
    auto pairs = synthetic_pairs(4, 22);
    MoireTrainOptions opt;
    opt.steps = 5;
    opt.batch_size = 2;
    opt.pretrain_steps = 3;
    train_moire_net(net, pairs, opt);

    const std::string path = dir.file("moire.megc");
    save_moire_checkpoint(net, path);
    MoireNet<float> loaded = load_moire_checkpoint<float>(path);
    EXPECT_TRUE(loaded.trained());
    Tensor<float> a = extract_moire_map(net, pairs[0].image);
    Tensor<float> b = extract_moire_map(loaded, pairs[0].image);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(MoireNet, PretrainingImprovesBackboneReconstruction) {
    MoireNetConfig cfg;
    cfg.demoire_backbone = "conv_ae";
    cfg.backbone_width = 4;
    cfg.freeze_backbone = true;
    MoireNet<float> net(cfg, 23);
    auto pairs = synthetic_pairs(6, 24);

    auto recon_error = [&](MoireNet<float>& m) {
        ad::Graph<float> g;
        auto out = m.demoire(g, g.input(pairs[0].image));
        double err = 0.0;
        for (std::size_t i = 0; i < out->val.size(); ++i) {
            const double d = static_cast<double>(out->val[i]) - (*pairs[0].clean)[i];
            err += d * d;
        }
        return err / static_cast<double>(out->val.size());
    };

    const double before = recon_error(net);
    MoireTrainOptions opt;
    opt.steps = 5;
    opt.batch_size = 2;
    opt.lr = 3e-3;
    opt.pretrain_steps = 60;
    train_moire_net(net, pairs, opt);
    const double after = recon_error(net);
    EXPECT_LT(after, before * 0.7);
    EXPECT_TRUE(net.backbone_frozen());
}

}  // namespace
