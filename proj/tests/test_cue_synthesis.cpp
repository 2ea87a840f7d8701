// Grating generation, moire beat physics (FFTW oracle), moire compositing,
// boundary cut-paste maps and the supervision validity table.

#include <gtest/gtest.h>

#include "support/fftw_oracle.hpp"
#include "support/testing.hpp"

using namespace megc;
using megc_test::oracle_boundary_map;
using megc_test::ScratchDir;

namespace {

FaceSample<float> synthetic_sample(Label label, SpoofType type, std::uint64_t seed,
                                   std::optional<SpoofType> source = std::nullopt) {
    FaceSample<float> s;
    Tensor<float> rgb(1, 3, 256, 256);
    auto rng = make_rng(seed);
    fill_uniform(rgb, rng, 0.2, 0.8);
    Tensor<float> hsv = rgb_to_hsv_image(rgb);
    s.image = Tensor<float>(1, 6, 256, 256);
    for (int j = 0; j < 3; ++j) {
        std::copy(rgb.plane(0, j), rgb.plane(0, j) + 256 * 256, s.image.plane(0, j));
        std::copy(hsv.plane(0, j), hsv.plane(0, j) + 256 * 256, s.image.plane(0, j + 3));
    }
    s.label = label;
    s.spoof_type = type;
    s.source_id = concat(to_string(label), "_", seed);
    s.face_in_crop = Rect{64, 64, 128, 128};
    s.composite_source = source;
    return s;
}

TEST(Fft, MatchesFftwOnPow2AndOddSizes) {
    for (auto [h, w] : {std::pair{32, 32}, {24, 40}, {17, 31}}) {
        Tensor<float> img = megc_test::random_tensor<float>(1, 1, h, w, 100 + h, 0.0, 1.0);
        std::vector<fft::cdouble> grid(static_cast<std::size_t>(h) * w);
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = {static_cast<double>(img[i]), 0.0};
        fft::transform2d(grid, h, w, false);

        std::vector<std::complex<double>> in(grid.size()), ref(grid.size());
        for (std::size_t i = 0; i < in.size(); ++i) in[i] = {static_cast<double>(img[i]), 0.0};
        fftw_plan plan = fftw_plan_dft_2d(h, w, reinterpret_cast<fftw_complex*>(in.data()),
                                          reinterpret_cast<fftw_complex*>(ref.data()), FFTW_FORWARD,
                                          FFTW_ESTIMATE);
        fftw_execute(plan);
        fftw_destroy_plan(plan);
        for (std::size_t i = 0; i < grid.size(); ++i)
            ASSERT_LT(std::abs(grid[i] - ref[i]), 1e-8) << h << "x" << w << " bin " << i;

        fft::transform2d(grid, h, w, true);
        for (std::size_t i = 0; i < grid.size(); ++i)
            ASSERT_NEAR(grid[i].real(), static_cast<double>(img[i]), 1e-10);
    }
}

TEST(Grating, CosineAtPhaseZero) {
    GratingSpec spec{0.25, 0.0, 0.0, 1.0};
    Tensor<float> g = generate_grating<float>(spec, 8, 8);
    // f=0.25 -> period 4 px along x; value 1 at x=0, rows constant
    for (int y = 0; y < 8; ++y) {
        EXPECT_NEAR(g.at(0, 0, y, 0), 1.0f, 1e-6);
        EXPECT_NEAR(g.at(0, 0, y, 2), 0.0f, 1e-6);
        EXPECT_NEAR(g.at(0, 0, y, 4), 1.0f, 1e-6);
        EXPECT_NEAR(g.at(0, 0, y, 1), 0.5f, 1e-6);
    }
    for (int y = 1; y < 8; ++y)
        for (int x = 0; x < 8; ++x) EXPECT_FLOAT_EQ(g.at(0, 0, y, x), g.at(0, 0, 0, x));
}

TEST(Grating, AmplitudeScalesLinearly) {
    Tensor<float> g = generate_grating<float>({0.25, 0.0, 0.0, 0.5}, 16, 16);
    EXPECT_NEAR(g.max(), 0.5f, 1e-6);
    EXPECT_NEAR(g.min(), 0.0f, 1e-6);
}

TEST(Grating, FftPeakAtConfiguredVerticalFrequency) {
    Tensor<float> g = generate_grating<float>({0.2, std::numbers::pi / 2, 0.3, 1.0}, 128, 128);
    auto peak = megc_test::fftw_dominant_peak(g);
    EXPECT_NEAR(std::abs(peak.fy), 0.2, 1.0 / 128 + 1e-9);
    EXPECT_NEAR(peak.fx, 0.0, 1.0 / 128 + 1e-9);
}

TEST(Grating, RejectsAliasedAndDegenerate) {
    EXPECT_THROW(generate_grating<float>({0.5, 0.0, 0.0, 1.0}, 16, 16), Error);
    EXPECT_THROW(generate_grating<float>({0.6, 0.0, 0.0, 1.0}, 16, 16), Error);
    EXPECT_THROW(generate_grating<float>({0.2, 0.0, 0.0, 0.0}, 16, 16), Error);
    EXPECT_THROW(generate_grating<float>({0.2, 0.0, 0.0, 1.0}, 4, 16), Error);
}

TEST(MoirePattern, BeatFrequencyWithinOneBin) {
    GratingSpec a{0.20, 0.0, 0.0, 1.0};
    GratingSpec b{0.22, 0.0, 0.5, 1.0};
    Tensor<float> m = synthesize_moire_pattern<float>(a, b, 256, 256);
    auto peak = megc_test::fftw_dominant_peak(m);
    EXPECT_NEAR(peak.radial(), 0.02, 1.0 / 256 + 1e-9);
    EXPECT_GE(m.min(), 0.0f);
    EXPECT_LE(m.max(), 1.0f);
}

TEST(MoirePattern, IdenticalSpecsGiveConstantOutput) {
    GratingSpec a{0.2, 0.3, 0.1, 1.0};
    Tensor<float> m = synthesize_moire_pattern<float>(a, a, 128, 128);
    EXPECT_NEAR(m.max() - m.min(), 0.0f, 1e-6);
}

TEST(MoirePattern, AngularBeatMatchesFringeSpacingFormula) {
    const double f = 0.2, dth = 0.1;
    GratingSpec a{f, 0.4, 0.0, 1.0};
    GratingSpec b{f, 0.4 + dth, 0.0, 1.0};
    Tensor<float> m = synthesize_moire_pattern<float>(a, b, 256, 256);
    // expected spacing 1/(2 f sin(dth/2))
    const double expected = 1.0 / (2.0 * f * std::sin(dth / 2.0));
    auto peak = megc_test::fftw_dominant_peak(m);
    const double measured_spacing = 1.0 / peak.radial();
    EXPECT_NEAR(measured_spacing, expected, expected * 0.15);
    // autocorrelation oracle along the beat direction
    const double norm = std::hypot(peak.fx, peak.fy);
    const double period =
        megc_test::autocorrelation_period(m, peak.fx / norm, peak.fy / norm);
    EXPECT_NEAR(period, expected, expected * 0.25);
}

TEST(MoirePattern, DissimilarFringesRejected) {
    GratingSpec a{0.10, 0.0, 0.0, 1.0};
    GratingSpec b{0.30, 0.0, 0.0, 1.0};
    try {
        synthesize_moire_pattern<float>(a, b, 64, 64);
        FAIL() << "expected rejection";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("fringes not similar"), std::string::npos);
    }
    GratingSpec c{0.20, 0.0, 0.0, 1.0};
    GratingSpec d{0.20, 0.5, 0.0, 1.0};
    EXPECT_THROW(synthesize_moire_pattern<float>(c, d, 64, 64), Error);
}

TEST(CompositeMoire, ConstantMapLeavesImageUntouched) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 1);
    Tensor<float> constant = Tensor<float>::full(1, 1, 256, 256, 0.7f);
    MoireComposite<float> out = composite_moire(live, constant, 0.5);
    for (std::size_t i = 0; i < live.image.size(); i += 131)
        ASSERT_FLOAT_EQ(out.image[i], live.image[i]);
    EXPECT_FLOAT_EQ(out.moire_gt.max(), 0.0f);
}

TEST(CompositeMoire, ResidualKeepsPatternSpectrum) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 2);
    // smooth image so clamping never kicks in
    for (std::size_t i = 0; i < live.image.size(); ++i)
        live.image[i] = 0.5f;
    GratingSpec a{0.20, 0.0, 0.0, 1.0}, b{0.22, 0.0, 0.0, 1.0};
    Tensor<float> pattern = synthesize_moire_pattern<float>(a, b, 256, 256);
    MoireComposite<float> out = composite_moire(live, pattern, 0.3);

    Tensor<float> residual(1, 1, 256, 256);
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x)
            residual.at(0, 0, y, x) = out.image.at(0, 0, y, x) - live.image.at(0, 0, y, x);
    auto rp = megc_test::fftw_dominant_peak(residual);
    auto pp = megc_test::fftw_dominant_peak(pattern);
    EXPECT_NEAR(rp.radial(), pp.radial(), 1.0 / 256 + 1e-9);
}

TEST(CompositeMoire, PreconditionsEnforced) {
    FaceSample<float> spoof = synthetic_sample(Label::spoof, SpoofType::print, 3);
    Tensor<float> map(1, 1, 256, 256);
    EXPECT_THROW(composite_moire(spoof, map, 0.3), Error);
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 4);
    EXPECT_THROW(composite_moire(live, map, 0.0), Error);
}

TEST(CompositeMoire, VanishingAlphaApproachesIdentity) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 5);
    Tensor<float> pattern = generate_grating<float>({0.2, 0.1, 0.0, 1.0}, 256, 256);
    MoireComposite<float> out = composite_moire(live, pattern, 1e-6);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < live.image.size(); ++i)
        max_diff = std::max(max_diff, std::abs(static_cast<double>(out.image[i]) - live.image[i]));
    EXPECT_LT(max_diff, 1e-5);
}

TEST(Boundary, CenteredPasteFillsCells8To23) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 6);
    FaceSample<float> spoof = synthetic_sample(Label::spoof, SpoofType::print, 7);
    PasteGeometry geom{Rect{64, 64, 128, 128}, 0, /*jitter=*/false};
    BoundaryComposite<float> comp = composite_boundary(live, spoof, geom);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const bool inside = x >= 8 && x <= 23 && y >= 8 && y <= 23;
            ASSERT_EQ(comp.boundary_gt.at(0, 0, y, x), inside ? 1.0f : 0.0f) << x << "," << y;
        }
    EXPECT_EQ(comp.sample.spoof_type, SpoofType::composite);
    EXPECT_EQ(comp.sample.composite_source, SpoofType::print);
    // pasted region carries the spoof pixels, outside stays live
    EXPECT_FLOAT_EQ(comp.sample.image.at(0, 0, 128, 128), spoof.image.at(0, 0, 128, 128));
    EXPECT_FLOAT_EQ(comp.sample.image.at(0, 0, 10, 10), live.image.at(0, 0, 10, 10));
}

TEST(Boundary, LiveSampleWithoutPasteIsAllZero) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 8);
    SupervisionBundle<float> b = supervision_for_sample(live, default_providers<float>());
    EXPECT_FLOAT_EQ(b.boundary_gt.max(), 0.0f);
    EXPECT_FLOAT_EQ(b.moire_gt.max(), 0.0f);
    EXPECT_FLOAT_EQ(b.reflection_gt.max(), 0.0f);
}

TEST(Boundary, JitterIsDeterministicGivenSeed) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 9);
    FaceSample<float> spoof = synthetic_sample(Label::spoof, SpoofType::replay, 10);
    PasteGeometry geom{Rect{80, 70, 90, 100}, 12345, true};
    BoundaryComposite<float> a = composite_boundary(live, spoof, geom);
    BoundaryComposite<float> b = composite_boundary(live, spoof, geom);
    ASSERT_EQ(a.paste_rect, b.paste_rect);
    for (std::size_t i = 0; i < a.sample.image.size(); ++i)
        ASSERT_EQ(a.sample.image[i], b.sample.image[i]);
    for (std::size_t i = 0; i < a.boundary_gt.size(); ++i)
        ASSERT_EQ(a.boundary_gt[i], b.boundary_gt[i]);
}

TEST(Boundary, MapMatchesPixelOracleForRandomGeometries) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 11);
    FaceSample<float> spoof = synthetic_sample(Label::spoof, SpoofType::print, 12);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        PasteGeometry geom{Rect{70, 60, 110, 120}, seed, true};
        BoundaryComposite<float> comp = composite_boundary(live, spoof, geom);
        Tensor<float> oracle = oracle_boundary_map(comp.paste_rect);
        for (std::size_t i = 0; i < oracle.size(); ++i)
            ASSERT_EQ(comp.boundary_gt[i], oracle[i]) << "seed " << seed << " cell " << i;
    }
}

TEST(Validity, TableMatchesSpecForAllFiveCategories) {
    const CueValidity live = validity_for(Label::live, SpoofType::none);
    EXPECT_EQ(live, (CueValidity{true, true, true, true}));
    const CueValidity print = validity_for(Label::spoof, SpoofType::print);
    EXPECT_EQ(print, (CueValidity{true, true, false, false}));
    const CueValidity replay = validity_for(Label::spoof, SpoofType::replay);
    EXPECT_EQ(replay, (CueValidity{true, true, true, false}));
    const CueValidity comp_print = validity_for(Label::spoof, SpoofType::composite, SpoofType::print);
    EXPECT_EQ(comp_print, (CueValidity{true, true, false, true}));
    const CueValidity comp_replay = validity_for(Label::spoof, SpoofType::composite, SpoofType::replay);
    EXPECT_EQ(comp_replay, (CueValidity{true, true, true, true}));
}

TEST(Supervision, LiveBundleHasDomeDepthAndZeroCues) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 13);
    SupervisionBundle<float> b = supervision_for_sample(live, default_providers<float>());
    EXPECT_TRUE(b.depth_valid && b.reflection_valid && b.moire_valid && b.boundary_valid);
    EXPECT_GT(b.depth_gt.max(), 0.9f);  // dome peak near 1 at the face center
    EXPECT_FLOAT_EQ(b.depth_gt.at(0, 0, 0, 0), 0.0f);
    EXPECT_FLOAT_EQ(b.moire_gt.max(), 0.0f);
}

TEST(Supervision, PrintSpoofDisablesMoireGradient) {
    FaceSample<float> print = synthetic_sample(Label::spoof, SpoofType::print, 14);
    SupervisionBundle<float> b = supervision_for_sample(print, default_providers<float>());
    EXPECT_FALSE(b.moire_valid);
    EXPECT_FALSE(b.boundary_valid);
    EXPECT_FLOAT_EQ(b.depth_gt.max(), 0.0f);  // spoof depth is the zero map
}

TEST(Supervision, OriginalReplayExcludedFromBoundary) {
    FaceSample<float> replay = synthetic_sample(Label::spoof, SpoofType::replay, 15);
    SupervisionBundle<float> b = supervision_for_sample(replay, default_providers<float>());
    EXPECT_TRUE(b.moire_valid);
    EXPECT_FALSE(b.boundary_valid);
}

TEST(Supervision, MissingProviderNamesTheCue) {
    FaceSample<float> replay = synthetic_sample(Label::spoof, SpoofType::replay, 16);
    CueProviders<float> providers = default_providers<float>();
    providers.moire = nullptr;
    try {
        supervision_for_sample(replay, providers);
        FAIL() << "expected missing-provider error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("moire"), std::string::npos);
    }
}

TEST(Supervision, CompositeCarriesItsBoundaryMap) {
    FaceSample<float> live = synthetic_sample(Label::live, SpoofType::none, 17);
    FaceSample<float> spoof = synthetic_sample(Label::spoof, SpoofType::print, 18);
    BoundaryComposite<float> comp =
        composite_boundary(live, spoof, {Rect{64, 64, 128, 128}, 3, true});
    SupervisionBundle<float> b = supervision_for_sample(comp.sample, default_providers<float>());
    EXPECT_TRUE(b.boundary_valid);
    EXPECT_FALSE(b.moire_valid);  // print donor
    EXPECT_GT(b.boundary_gt.max(), 0.0f);
}

TEST(CueFiles, MapRoundTrips16Bit) {
    ScratchDir dir("cue");
    Tensor<float> map(1, 1, 32, 32);
    auto rng = make_rng(19);
    fill_uniform(map, rng, 0.0, 1.0);
    const std::string path = cue_file(dir.path(), "sample01", "moire");
    io::write_map_png16(path, map);
    Tensor<float> back = io::read_map_png<float>(path);
    double max_err = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i)
        max_err = std::max(max_err, std::abs(static_cast<double>(map[i]) - back[i]));
    EXPECT_LT(max_err, 1.0 / 65535.0);
}

TEST(CueFiles, BinaryBoundaryRoundTrips) {
    ScratchDir dir("cue");
    Tensor<float> map = oracle_boundary_map(Rect{60, 70, 100, 90});
    const std::string path = cue_file(dir.path(), "comp01", "boundary");
    io::write_map_png8_binary(path, map);
    Tensor<float> back = io::read_map_png<float>(path);
    for (std::size_t i = 0; i < map.size(); ++i) ASSERT_EQ(back[i], map[i]);
}

}  // namespace
