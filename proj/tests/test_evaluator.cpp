// Metrics and protocol: HTER identities, EER threshold selection against
// an exhaustive sweep, scoring determinism, and the cross-dataset run with
// cue ablation.

#include <gtest/gtest.h>

#include <fstream>

#include "support/testing.hpp"

using namespace megc;
using megc_test::ScratchDir;

namespace {

TEST(Hter, HandCountedExample) {
    EvalReport r = compute_hter({0.1, 0.2, 0.9}, {0.8, 0.7, 0.3}, 0.5);
    EXPECT_DOUBLE_EQ(r.frr, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.far, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.hter, 1.0 / 3.0);
}

TEST(Hter, SeparatedScoresGiveZero) {
    EvalReport r = compute_hter({0.1, 0.2}, {0.8, 0.9}, 0.5);
    EXPECT_DOUBLE_EQ(r.hter, 0.0);
}

TEST(Hter, ThresholdZeroRejectsAllLive) {
    EvalReport r = compute_hter({0.1, 0.2, 0.3}, {0.5, 0.6}, 0.0);
    EXPECT_DOUBLE_EQ(r.frr, 1.0);
    EXPECT_DOUBLE_EQ(r.far, 0.0);
    EXPECT_DOUBLE_EQ(r.hter, 0.5);
}

TEST(Hter, IdentityHoldsOnRandomInputs) {
    auto rng = make_rng(31);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> live(5), spoof(7);
        for (auto& v : live) v = d(rng);
        for (auto& v : spoof) v = d(rng);
        EvalReport r = compute_hter(live, spoof, d(rng));
        EXPECT_DOUBLE_EQ(r.hter, (r.far + r.frr) / 2.0);
        EXPECT_GE(r.far, 0.0);
        EXPECT_LE(r.far, 1.0);
        EXPECT_GE(r.frr, 0.0);
        EXPECT_LE(r.frr, 1.0);
    }
}

TEST(Hter, MonotoneInThreshold) {
    auto rng = make_rng(32);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    std::vector<double> live(20), spoof(20);
    for (auto& v : live) v = d(rng) * 0.8;
    for (auto& v : spoof) v = 0.2 + d(rng) * 0.8;
    double prev_frr = 1e9, prev_far = -1e9;
    for (double t = -0.1; t <= 1.1; t += 0.01) {
        EvalReport r = compute_hter(live, spoof, t);
        EXPECT_LE(r.frr, prev_frr + 1e-12);  // FRR never increases with t
        EXPECT_GE(r.far, prev_far - 1e-12);  // FAR never decreases with t
        prev_frr = r.frr;
        prev_far = r.far;
    }
}

TEST(Hter, EmptyClassRejected) {
    EXPECT_THROW(compute_hter({}, {0.5}, 0.5), Error);
    EXPECT_THROW(compute_hter({0.5}, {}, 0.5), Error);
}

TEST(Threshold, SeparableCaseReturnsMidpoint) {
    const double t = select_threshold({0.1, 0.2}, {0.8, 0.9});
    EXPECT_DOUBLE_EQ(t, 0.5);
    EXPECT_DOUBLE_EQ(compute_hter({0.1, 0.2}, {0.8, 0.9}, t).hter, 0.0);
}

TEST(Threshold, IndistinguishableClassesGiveHalfError) {
    const double t = select_threshold({0.4, 0.4, 0.4}, {0.4, 0.4});
    EvalReport r = compute_hter({0.4, 0.4, 0.4}, {0.4, 0.4}, t);
    EXPECT_DOUBLE_EQ(r.hter, 0.5);
}

TEST(Threshold, SingleClassRejected) {
    EXPECT_THROW(select_threshold({}, {0.5}), Error);
    EXPECT_THROW(select_threshold({0.5}, {}), Error);
}

TEST(Threshold, MatchesExhaustiveSweepOnRandomLists) {
    auto rng = make_rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        std::uniform_int_distribution<int> nd(1, 25);
        std::uniform_real_distribution<double> d(0.0, 1.0);
        std::vector<double> live(static_cast<std::size_t>(nd(rng)));
        std::vector<double> spoof(static_cast<std::size_t>(nd(rng)));
        // quantized scores produce plenty of exact ties
        for (auto& v : live) v = std::floor(d(rng) * 8) / 8.0;
        for (auto& v : spoof) v = std::floor(d(rng) * 8) / 8.0;

        const double t = select_threshold(live, spoof);
        const EvalReport r = compute_hter(live, spoof, t);
        const double oracle_gap = megc_test::oracle_min_far_frr_gap(live, spoof);
        ASSERT_NEAR(std::abs(r.far - r.frr), oracle_gap, 1e-12)
            << "trial " << trial << " threshold " << t;
    }
}

TEST(Scores, AggregateByVideoAveragesFrames) {
    std::vector<ScoredSample> frames{
        {"vidA#0", Label::live, 0.2}, {"vidA#1", Label::live, 0.4},
        {"vidB#0", Label::spoof, 0.9}, {"solo", Label::live, 0.5}};
    auto agg = aggregate_by_video(frames);
    ASSERT_EQ(agg.size(), 3u);
    std::map<std::string, double> by_id;
    for (const auto& s : agg) by_id[s.id] = s.score;
    EXPECT_DOUBLE_EQ(by_id.at("vidA"), 0.3);
    EXPECT_DOUBLE_EQ(by_id.at("vidB"), 0.9);
    EXPECT_DOUBLE_EQ(by_id.at("solo"), 0.5);
}

TEST(Scores, DevSplitIsDeterministicAndRoughlySized) {
    int dev = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) dev += in_dev_split(concat("sample_", i), 0.2) ? 1 : 0;
    EXPECT_NEAR(dev / static_cast<double>(n), 0.2, 0.05);
    EXPECT_EQ(in_dev_split("sample_1", 0.2), in_dev_split("sample_1", 0.2));
}

struct ScoringWorld {
    ScratchDir dir{"eval"};
    CorpusIndex corpus;
    MegcNet<float> net{[] {
                           BackboneConfig c;
                           c.desk_scale = true;
                           return c;
                       }(),
                       3};

    ScoringWorld() {
        const std::string manifest = make_toy_corpus<float>(dir.path(), {3, 2, 2, 256, 17});
        corpus = load_manifest(manifest);
    }
};

TEST(Scores, DeterministicAndBatchSizeIndependent) {
    ScoringWorld w;
    SampleLoader<float> loader(w.corpus);
    std::vector<int> ids{0, 1, 2, 3, 4, 5, 6};
    auto a = score_samples(w.net, loader, ids, 1);
    auto b = score_samples(w.net, loader, ids, 8);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        ASSERT_NEAR(a[i].score, b[i].score, 1e-6) << a[i].id;
    }
    // duplicate sample scores identically
    auto c = score_samples(w.net, loader, {0, 0}, 2);
    EXPECT_EQ(c[0].score, c[1].score);
    // empty list is fine
    EXPECT_TRUE(score_samples(w.net, loader, {}).empty());
}

TEST(Protocol, ToyRunProducesReportAndManifest) {
    ScratchDir train_dir("ptrain"), test_dir("ptest"), run("prun");
    CorpusIndex train_corpus = load_manifest(make_toy_corpus<float>(train_dir.path(), {4, 2, 2, 256, 23}));
    CorpusIndex test_corpus =
        load_manifest(make_toy_corpus<float>(test_dir.path(), {2, 1, 1, 256, 29}), Split::test);

    ProviderSupervision<float> sup;
    ProtocolOptions opt;
    opt.train.steps = 4;
    opt.train.batch_size = 4;
    opt.train.backbone.desk_scale = true;
    opt.train.seed = 7;
    opt.train.composite_fraction = 0.0;

    ProtocolResult r = run_protocol(train_corpus, test_corpus, sup, opt, {}, run.path());
    EXPECT_GE(r.report.hter, 0.0);
    EXPECT_LE(r.report.hter, 1.0);
    EXPECT_DOUBLE_EQ(r.report.hter, (r.report.far + r.report.frr) / 2.0);
    EXPECT_TRUE(std::filesystem::exists(run.file("run_manifest.json")));
    EXPECT_TRUE(std::filesystem::exists(run.file("report.json")));
    EXPECT_EQ(r.manifest.at("checkpoint_id").get<std::string>(),
              Checkpoint::load(r.checkpoint).weight_digest());
}

TEST(Protocol, AblationDropsHeadAndLossComponent) {
    ScratchDir train_dir("atrain"), test_dir("atest"), run("arun");
    CorpusIndex train_corpus = load_manifest(make_toy_corpus<float>(train_dir.path(), {4, 2, 2, 256, 31}));
    CorpusIndex test_corpus =
        load_manifest(make_toy_corpus<float>(test_dir.path(), {2, 1, 1, 256, 37}), Split::test);

    ProviderSupervision<float> sup;
    ProtocolOptions opt;
    opt.train.steps = 3;
    opt.train.batch_size = 4;
    opt.train.backbone.desk_scale = true;
    opt.train.seed = 7;
    opt.train.composite_fraction = 0.0;

    ProtocolResult r = run_protocol(train_corpus, test_corpus, sup, opt, {Cue::moire}, run.path());
    Checkpoint ck = Checkpoint::load(r.checkpoint);
    for (const auto& [name, t] : ck.tensors)
        EXPECT_EQ(name.find("mafe.moire"), std::string::npos) << name;

    // l_m never appears in the training log
    std::ifstream log(run.file("train_log.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        ++lines;
        EXPECT_EQ(line.find("l_m"), std::string::npos) << line;
        EXPECT_NE(line.find("l_d"), std::string::npos);
    }
    EXPECT_EQ(lines, 3);
}

TEST(Protocol, DepthAblationRejected) {
    ScratchDir train_dir("dtrain"), run("drun");
    CorpusIndex corpus = load_manifest(make_toy_corpus<float>(train_dir.path(), {2, 1, 1, 256, 41}));
    ProviderSupervision<float> sup;
    ProtocolOptions opt;
    opt.train.steps = 1;
    opt.train.backbone.desk_scale = true;
    EXPECT_THROW(run_protocol(corpus, corpus, sup, opt, {Cue::depth}, run.path()), Error);
}

}  // namespace
