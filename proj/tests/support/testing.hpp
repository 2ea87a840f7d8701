#pragma once

// Shared test helpers: scratch directories, random tensors, finite
// differences, and independent oracles kept deliberately separate from the
// library implementation paths they check.

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "megc/megc.hpp"

namespace megc_test {

// Unique scratch directory under the system temp root, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        dir_ = std::filesystem::temp_directory_path() /
               ("megc_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        std::filesystem::create_directories(dir_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }
    std::string path() const { return dir_.string(); }
    std::string file(const std::string& name) const { return (dir_ / name).string(); }

private:
    std::filesystem::path dir_;
};

template <typename T>
megc::Tensor<T> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = -1.0,
                              double hi = 1.0) {
    megc::Tensor<T> t(n, c, h, w);
    auto rng = megc::make_rng(seed);
    megc::fill_uniform(t, rng, lo, hi);
    return t;
}

// Central-difference derivative of f with respect to x[i].
inline double central_difference(const std::function<double()>& f, double& x, double eps) {
    const double saved = x;
    x = saved + eps;
    const double fp = f();
    x = saved - eps;
    const double fm = f();
    x = saved;
    return (fp - fm) / (2.0 * eps);
}

inline double rel_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
    return std::abs(a - b) / denom;
}

// Brute-force oracle for the masked map MSE: explicit per-sample,
// per-pixel loops, no shortcuts shared with the implementation.
template <typename T>
double oracle_map_mse(const megc::Tensor<T>& pred, const megc::Tensor<T>& gt,
                      const std::vector<bool>& validity) {
    double total = 0.0;
    for (int i = 0; i < pred.n(); ++i) {
        if (!validity[static_cast<std::size_t>(i)]) continue;
        for (int j = 0; j < pred.c(); ++j)
            for (int y = 0; y < pred.h(); ++y)
                for (int x = 0; x < pred.w(); ++x) {
                    const double d = static_cast<double>(pred.at(i, j, y, x)) -
                                     static_cast<double>(gt.at(i, j, y, x));
                    total += d * d;
                }
    }
    return total / pred.n();
}

// Brute-force oracle for softmax cross-entropy: softmax by hand, then -log.
template <typename T>
double oracle_classification_loss(const megc::Tensor<T>& logits,
                                  const std::vector<megc::Label>& labels) {
    double total = 0.0;
    for (int i = 0; i < logits.n(); ++i) {
        const double a = std::exp(static_cast<double>(logits.at(i, 0, 0, 0)));
        const double b = std::exp(static_cast<double>(logits.at(i, 1, 0, 0)));
        const double p_live = a / (a + b);
        const double p_spoof = b / (a + b);
        total += -std::log(labels[static_cast<std::size_t>(i)] == megc::Label::live ? p_live : p_spoof);
    }
    return total / logits.n();
}

// Exhaustive threshold sweep: every observed score, every midpoint between
// adjacent distinct scores, and sentinels beyond both ends. Returns the
// minimal |FAR - FRR| achievable.
inline double oracle_min_far_frr_gap(const std::vector<double>& live,
                                     const std::vector<double>& spoof) {
    std::vector<double> all = live;
    all.insert(all.end(), spoof.begin(), spoof.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    std::vector<double> candidates;
    candidates.push_back(all.front() - 1.0);
    for (std::size_t i = 0; i < all.size(); ++i) {
        candidates.push_back(all[i]);
        if (i + 1 < all.size()) candidates.push_back((all[i] + all[i + 1]) / 2.0);
    }
    candidates.push_back(all.back() + 1.0);
    double best = 1e30;
    for (double t : candidates) {
        const megc::EvalReport r = megc::compute_hter(live, spoof, t);
        best = std::min(best, std::abs(r.far - r.frr));
    }
    return best;
}

// Pixel-level oracle for the boundary map: rasterize the paste rectangle
// into a full-resolution mask, then majority-vote over 8x8 blocks.
inline megc::Tensor<float> oracle_boundary_map(const megc::Rect& rect, int crop = 256) {
    std::vector<int> mask(static_cast<std::size_t>(crop) * crop, 0);
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x)
            if (x >= rect.x && x < rect.x + rect.w && y >= rect.y && y < rect.y + rect.h)
                mask[static_cast<std::size_t>(y) * crop + x] = 1;
    const int block = crop / 32;
    megc::Tensor<float> out(1, 1, 32, 32);
    for (int cy = 0; cy < 32; ++cy)
        for (int cx = 0; cx < 32; ++cx) {
            int inside = 0;
            for (int y = cy * block; y < (cy + 1) * block; ++y)
                for (int x = cx * block; x < (cx + 1) * block; ++x)
                    inside += mask[static_cast<std::size_t>(y) * crop + x];
            out.at(0, 0, cy, cx) = 2 * inside > block * block ? 1.0f : 0.0f;
        }
    return out;
}

}  // namespace megc_test
