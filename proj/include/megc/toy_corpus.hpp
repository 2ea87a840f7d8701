#pragma once

// Deterministic synthetic demo corpus: small face-like frames with
// class-correlated artifacts (flat tone and a paper border for prints, a
// moire overlay and cool tint for replays). Desk-scale stand-in for the
// licensed datasets; used by the test suites and the megc-toygen tool.

#include <filesystem>
#include <string>
#include <vector>

#include "megc/cue_synthesis.hpp"
#include "megc/image_io.hpp"

namespace megc {

struct ToyCorpusOptions {
    int n_live = 4;
    int n_print = 2;
    int n_replay = 2;
    int frame_size = 256;
    std::uint64_t seed = 7;
};

namespace detail {

template <typename T>
void draw_toy_face(Tensor<T>& frame, const Rect& box, std::mt19937_64& rng, bool flat,
                   double warm) {
    const int fs = frame.h();
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    const double base_r = 0.45 + jitter(rng) + 0.2 * warm;
    const double base_g = 0.40 + jitter(rng);
    const double base_b = 0.42 + jitter(rng) - 0.2 * warm + 0.25 * (1.0 - warm);

    // gradient background
    for (int y = 0; y < fs; ++y)
        for (int x = 0; x < fs; ++x) {
            const double gx = static_cast<double>(x) / fs, gy = static_cast<double>(y) / fs;
            frame.at(0, 0, y, x) = static_cast<T>(0.25 + 0.25 * gx);
            frame.at(0, 1, y, x) = static_cast<T>(0.25 + 0.25 * gy);
            frame.at(0, 2, y, x) = static_cast<T>(0.30 + 0.15 * gx * gy);
        }

    // elliptical face with simple shading; prints get a flatter profile
    const double cx = box.cx(), cy = box.cy();
    const double rx = box.w / 2.0, ry = box.h / 2.0;
    for (int y = box.y; y < box.y + box.h; ++y)
        for (int x = box.x; x < box.x + box.w; ++x) {
            if (y < 0 || y >= fs || x < 0 || x >= fs) continue;
            const double u = (x - cx) / rx, v = (y - cy) / ry;
            const double d = u * u + v * v;
            if (d > 1.0) continue;
            const double shade = flat ? 0.92 : 0.75 + 0.25 * std::sqrt(1.0 - d);
            frame.at(0, 0, y, x) = static_cast<T>(std::clamp(base_r * shade + 0.25, 0.0, 1.0));
            frame.at(0, 1, y, x) = static_cast<T>(std::clamp(base_g * shade + 0.18, 0.0, 1.0));
            frame.at(0, 2, y, x) = static_cast<T>(std::clamp(base_b * shade + 0.12, 0.0, 1.0));
        }

    // eyes
    for (int e = -1; e <= 1; e += 2) {
        const int ex = static_cast<int>(cx + e * rx * 0.4), ey = static_cast<int>(cy - ry * 0.2);
        for (int y = ey - 3; y <= ey + 3; ++y)
            for (int x = ex - 4; x <= ex + 4; ++x)
                if (y >= 0 && y < fs && x >= 0 && x < fs)
                    for (int ch = 0; ch < 3; ++ch) frame.at(0, ch, y, x) = static_cast<T>(0.08);
    }
}

template <typename T>
void draw_paper_border(Tensor<T>& frame, const Rect& box) {
    const int fs = frame.h();
    const int m = 6;
    const int x0 = std::max(0, box.x - 2 * m), x1 = std::min(fs - 1, box.x + box.w + 2 * m);
    const int y0 = std::max(0, box.y - 2 * m), y1 = std::min(fs - 1, box.y + box.h + 2 * m);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const bool edge = (y - y0 < m) || (y1 - y < m) || (x - x0 < m) || (x1 - x < m);
            if (!edge) continue;
            for (int ch = 0; ch < 3; ++ch) frame.at(0, ch, y, x) = static_cast<T>(0.95);
        }
}

template <typename T>
void overlay_moire(Tensor<T>& frame, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> freq(0.18, 0.28);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi - 0.3);
    std::uniform_real_distribution<double> delta(0.01, 0.04);
    GratingSpec a{freq(rng), angle(rng), 0.0, 1.0};
    GratingSpec b{a.frequency + delta(rng), a.orientation + 0.05, 1.0, 1.0};
    Tensor<T> pattern = synthesize_moire_pattern<T>(a, b, frame.w(), frame.h());
    const double mean = pattern.mean();
    for (int y = 0; y < frame.h(); ++y)
        for (int x = 0; x < frame.w(); ++x) {
            const double p = 0.35 * (static_cast<double>(pattern.at(0, 0, y, x)) - mean);
            for (int ch = 0; ch < 3; ++ch) {
                double v = static_cast<double>(frame.at(0, ch, y, x)) + p;
                frame.at(0, ch, y, x) = static_cast<T>(std::clamp(v, 0.0, 1.0));
            }
        }
}

}  // namespace detail

// Writes frames + manifest into `dir`; returns the manifest path.
template <typename T = float>
std::string make_toy_corpus(const std::string& dir, const ToyCorpusOptions& opt = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto rng = make_rng(opt.seed, 0x746f79);
    std::uniform_int_distribution<int> shift(-10, 10);

    CorpusIndex index;
    index.root = dir;
    auto emit = [&](const std::string& name, Label label, SpoofType type) {
        Tensor<T> frame(1, 3, opt.frame_size, opt.frame_size);
        const int bw = opt.frame_size * 5 / 16;
        Rect box{(opt.frame_size - bw) / 2 + shift(rng), (opt.frame_size - bw) / 2 + shift(rng), bw, bw};
        const bool flat = type == SpoofType::print;
        const double warm = label == Label::live ? 1.0 : (type == SpoofType::replay ? 0.3 : 0.6);
        detail::draw_toy_face(frame, box, rng, flat, warm);
        if (type == SpoofType::print) detail::draw_paper_border(frame, box);
        if (type == SpoofType::replay) detail::overlay_moire(frame, rng);
        const std::string file = name + ".png";
        io::write_image_rgb_png((fs::path(dir) / file).string(), frame);
        ManifestRecord rec;
        rec.path = file;
        rec.label = label;
        rec.spoof_type = type;
        rec.face_box = box;
        index.samples.push_back(rec);
    };

    for (int i = 0; i < opt.n_live; ++i) emit(concat("live_", i), Label::live, SpoofType::none);
    for (int i = 0; i < opt.n_print; ++i) emit(concat("print_", i), Label::spoof, SpoofType::print);
    for (int i = 0; i < opt.n_replay; ++i) emit(concat("replay_", i), Label::spoof, SpoofType::replay);

    const std::string manifest = (fs::path(dir) / "corpus.manifest").string();
    save_manifest(index, manifest);
    return manifest;
}

}  // namespace megc
