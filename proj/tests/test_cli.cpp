// Drives the installed binaries end to end: exit codes, the synth ->
// train-moire -> extract-moire -> train -> eval pipeline, and ablation
// wiring. Binary paths arrive via argv.

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "support/testing.hpp"

using megc_test::ScratchDir;

namespace {

std::string g_cli;
std::string g_toygen;

struct RunOutput {
    int exit_code = -1;
    std::string text;
};

RunOutput run(const std::string& cmd) {
    static int counter = 0;
    const std::string log = std::filesystem::temp_directory_path() /
                            ("megc_cli_out_" + std::to_string(::getpid()) + "_" +
                             std::to_string(counter++));
    const int status = std::system((cmd + " >" + log + " 2>&1").c_str());
    RunOutput out;
    out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    out.text.assign(std::istreambuf_iterator<char>(in), {});
    std::filesystem::remove(log);
    return out;
}

TEST(Cli, UnknownCommandExitsTwoWithUsage) {
    RunOutput out = run(g_cli + " frobnicate");
    EXPECT_EQ(out.exit_code, 2);
    EXPECT_NE(out.text.find("Usage"), std::string::npos) << out.text;
}

TEST(Cli, UnknownFlagExitsTwo) {
    RunOutput out = run(g_cli + " train --config x.json --frobnicate");
    EXPECT_EQ(out.exit_code, 2);
}

TEST(Cli, MissingConfigFileExitsThree) {
    RunOutput out = run(g_cli + " summarize --config /nonexistent.json");
    EXPECT_EQ(out.exit_code, 3);
    EXPECT_NE(out.text.find("error: config"), std::string::npos) << out.text;
}

TEST(Cli, UnknownConfigKeyExitsThree) {
    ScratchDir dir("cli_badcfg");
    std::ofstream(dir.file("c.json")) << R"({"seed": 1, "typo_key": true})";
    RunOutput out = run(g_cli + " summarize --config " + dir.file("c.json"));
    EXPECT_EQ(out.exit_code, 3);
    EXPECT_NE(out.text.find("typo_key"), std::string::npos) << out.text;
}

TEST(Cli, SummarizePrintsParameterCounts) {
    ScratchDir dir("cli_sum");
    std::ofstream(dir.file("c.json")) << R"({"desk_scale": true})";
    RunOutput out = run(g_cli + " summarize --config " + dir.file("c.json"));
    EXPECT_EQ(out.exit_code, 0);
    EXPECT_NE(out.text.find("backbone.conv1"), std::string::npos);
    EXPECT_NE(out.text.find("total parameters"), std::string::npos);
    EXPECT_NE(out.text.find("moire extractor"), std::string::npos);
}

TEST(Cli, FullPipelineOnToyCorpus) {
    ScratchDir dir("cli_pipe");
    const std::string corpus_dir = dir.file("corpus");
    const std::string cue_dir = dir.file("cues");
    const std::string runs = dir.file("runs");
    ::setenv("MEGC_RUN_DIR", runs.c_str(), 1);

    ASSERT_EQ(run(g_toygen + " --out " + corpus_dir + " --live 4 --print 2 --replay 2 --seed 9").exit_code, 0);

    nlohmann::json cfg{
        {"seed", 3},
        {"desk_scale", true},
        {"data",
         {{"train_manifest", corpus_dir + "/corpus.manifest"},
          {"test_manifest", corpus_dir + "/corpus.manifest"},
          {"cue_dir", cue_dir},
          {"supervision", "files"}}},
        {"synth", {{"composites", 2}, {"moire_pairs", 4}}},
        {"moire_net",
         {{"backbone", "conv_ae"},
          {"backbone_width", 4},
          {"adapt_width", 4},
          {"refine_width", 4},
          {"steps", 8},
          {"pretrain_steps", 4},
          {"checkpoint", dir.file("moire.megc")}}},
        {"train", {{"steps", 4}, {"batch_size", 4}, {"checkpoint_every_epochs", 0}}},
    };
    std::ofstream(dir.file("c.json")) << cfg.dump(2);
    const std::string with_cfg = " --config " + dir.file("c.json");

    RunOutput synth = run(g_cli + " synth-cues" + with_cfg);
    ASSERT_EQ(synth.exit_code, 0) << synth.text;
    EXPECT_TRUE(std::filesystem::exists(cue_dir + "/train_synth.manifest"));
    EXPECT_TRUE(std::filesystem::exists(cue_dir + "/moire_pairs/pairs.jsonl"));
    int depth_maps = 0, boundary_maps = 0;
    for (const auto& e : std::filesystem::directory_iterator(cue_dir)) {
        const std::string name = e.path().filename().string();
        depth_maps += name.find(".depth.png") != std::string::npos;
        boundary_maps += name.find(".boundary.png") != std::string::npos;
    }
    EXPECT_EQ(depth_maps, 4);
    EXPECT_EQ(boundary_maps, 2);

    RunOutput tm = run(g_cli + " train-moire" + with_cfg);
    ASSERT_EQ(tm.exit_code, 0) << tm.text;
    ASSERT_TRUE(std::filesystem::exists(dir.file("moire.megc")));

    // point the pipeline at the synthesized manifest (includes composites)
    cfg["data"]["train_manifest"] = cue_dir + "/train_synth.manifest";
    std::ofstream(dir.file("c2.json")) << cfg.dump(2);
    const std::string with_cfg2 = " --config " + dir.file("c2.json");

    RunOutput ex = run(g_cli + " extract-moire" + with_cfg2);
    ASSERT_EQ(ex.exit_code, 0) << ex.text;
    int moire_maps = 0;
    for (const auto& e : std::filesystem::directory_iterator(cue_dir))
        moire_maps += e.path().filename().string().find(".moire.png") != std::string::npos;
    // replay samples plus composites with replay donors
    megc::CorpusIndex synth_idx = megc::load_manifest(cue_dir + "/train_synth.manifest");
    int expected_maps = 0;
    for (const auto& rec : synth_idx.samples)
        expected_maps += rec.label == megc::Label::spoof &&
                         megc::validity_for(rec.label, rec.spoof_type, rec.composite_source).moire;
    EXPECT_EQ(moire_maps, expected_maps);
    EXPECT_GE(moire_maps, 2);

    RunOutput tr = run(g_cli + " train" + with_cfg2);
    ASSERT_EQ(tr.exit_code, 0) << tr.text;
    EXPECT_NE(tr.text.find("checkpoint:"), std::string::npos);

    // locate the run dir + checkpoint it printed
    const std::string ckpt_line = tr.text.substr(tr.text.find("checkpoint: ") + 12);
    const std::string ckpt = ckpt_line.substr(0, ckpt_line.find('\n'));
    ASSERT_TRUE(std::filesystem::exists(ckpt)) << ckpt;
    const std::string run_dir = std::filesystem::path(ckpt).parent_path().string();
    EXPECT_TRUE(std::filesystem::exists(run_dir + "/resolved_config.json"));
    EXPECT_TRUE(std::filesystem::exists(run_dir + "/train_log.jsonl"));

    cfg["eval"] = {{"checkpoint", ckpt}};
    std::ofstream(dir.file("c3.json")) << cfg.dump(2);
    RunOutput ev = run(g_cli + " eval --config " + dir.file("c3.json") + " --dump-maps");
    ASSERT_EQ(ev.exit_code, 0) << ev.text;
    EXPECT_NE(ev.text.find("HTER"), std::string::npos);
    int map_grids = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(runs))
        map_grids += e.path().filename().string().find(".maps.png") != std::string::npos;
    EXPECT_GT(map_grids, 0);

    ::unsetenv("MEGC_RUN_DIR");
}

TEST(Cli, AblateDropsMoire) {
    ScratchDir dir("cli_ablate");
    const std::string corpus_dir = dir.file("corpus");
    const std::string runs = dir.file("runs");
    ::setenv("MEGC_RUN_DIR", runs.c_str(), 1);
    ASSERT_EQ(run(g_toygen + " --out " + corpus_dir + " --live 3 --print 2 --replay 1 --seed 13").exit_code, 0);

    nlohmann::json cfg{
        {"seed", 5},
        {"desk_scale", true},
        {"data",
         {{"train_manifest", corpus_dir + "/corpus.manifest"},
          {"test_manifest", corpus_dir + "/corpus.manifest"},
          {"supervision", "providers"}}},
        {"train",
         {{"steps", 3}, {"batch_size", 4}, {"composite_fraction", 0.0}, {"checkpoint_every_epochs", 0}}},
    };
    std::ofstream(dir.file("c.json")) << cfg.dump(2);

    RunOutput ab = run(g_cli + " ablate --config " + dir.file("c.json") + " --drop moire");
    ASSERT_EQ(ab.exit_code, 0) << ab.text;
    EXPECT_NE(ab.text.find("ablation: moire"), std::string::npos) << ab.text;
    EXPECT_NE(ab.text.find("manifest:"), std::string::npos);

    // the manifest must record the ablation and the checkpoint id
    bool found = false;
    for (const auto& e : std::filesystem::recursive_directory_iterator(runs)) {
        if (e.path().filename() == "run_manifest.json") {
            std::ifstream in(e.path());
            nlohmann::json m;
            in >> m;
            EXPECT_EQ(m.at("ablation").at(0).get<std::string>(), "moire");
            EXPECT_FALSE(m.at("checkpoint_id").get<std::string>().empty());
            found = true;
        }
    }
    EXPECT_TRUE(found);
    ::unsetenv("MEGC_RUN_DIR");
}

TEST(Cli, ProvidersModeWithoutMoireCheckpointFailsForReplay) {
    ScratchDir dir("cli_prov");
    const std::string corpus_dir = dir.file("corpus");
    ::setenv("MEGC_RUN_DIR", dir.file("runs").c_str(), 1);
    ASSERT_EQ(run(g_toygen + " --out " + corpus_dir + " --live 2 --print 1 --replay 1").exit_code, 0);
    nlohmann::json cfg{
        {"seed", 5},
        {"desk_scale", true},
        {"data",
         {{"train_manifest", corpus_dir + "/corpus.manifest"}, {"supervision", "providers"}}},
        {"train", {{"steps", 2}, {"batch_size", 4}}},
    };
    std::ofstream(dir.file("c.json")) << cfg.dump(2);
    RunOutput out = run(g_cli + " train --config " + dir.file("c.json"));
    EXPECT_EQ(out.exit_code, 1);
    EXPECT_NE(out.text.find("moire"), std::string::npos) << out.text;
    ::unsetenv("MEGC_RUN_DIR");
}

}  // namespace

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);
    if (argc < 3) {
        std::fprintf(stderr, "usage: test_cli <megc-binary> <toygen-binary>\n");
        return 1;
    }
    g_cli = argv[1];
    g_toygen = argv[2];
    return RUN_ALL_TESTS();
}
