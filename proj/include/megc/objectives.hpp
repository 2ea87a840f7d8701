#pragma once

// The training objective: per-cue pixel-wise MSE with validity masking,
// softmax cross-entropy classification, and the overall weighted sum
// l_overall = mu * l_cls + lambda * (l_d + l_r + l_b + l_m).

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "megc/tensor.hpp"

namespace megc {

struct LossWeights {
    double mu = 10.0;
    double lambda = 0.1;

    void validate() const {
        require(mu >= 0.0 && lambda >= 0.0, ErrorCategory::config,
                "loss weights must be non-negative");
    }
};

struct LossOptions {
    // Default convention: ||.||_2^2 is the pixel-sum squared norm and the
    // divisor is the full batch size. The variants are scale experiments,
    // both off by default.
    bool pixel_mean = false;
    bool divide_by_valid = false;
};

struct MapLossResult {
    double value = 0.0;
    int valid_count = 0;
    bool all_masked = false;
};

struct LossBreakdown {
    double l_cls = 0.0;
    double l_d = 0.0, l_r = 0.0, l_m = 0.0, l_b = 0.0;
    double l_overall = 0.0;
    int n_depth = 0, n_reflection = 0, n_moire = 0, n_boundary = 0;

    double aux_sum() const { return l_d + l_r + l_m + l_b; }

    nlohmann::json to_json() const {
        return {{"l_cls", l_cls},     {"l_d", l_d},
                {"l_r", l_r},         {"l_m", l_m},
                {"l_b", l_b},         {"l_overall", l_overall},
                {"valid", {{"depth", n_depth}, {"reflection", n_reflection}, {"moire", n_moire}, {"boundary", n_boundary}}}};
    }
};

// (1/N) * sum over valid samples i of ||pred(i) - gt(i)||_2^2, the squared
// norm summing over all pixels. Samples with validity=false contribute
// zero; N is the full batch size.
template <typename T>
MapLossResult map_mse_loss(const Tensor<T>& pred, const Tensor<T>& gt,
                           const std::vector<bool>& validity, LossOptions opt = {}) {
    require(pred.shape() == gt.shape(), ErrorCategory::shape,
            concat("map_mse_loss: pred ", pred.shape().str(), " vs gt ", gt.shape().str()));
    require(pred.n() >= 1, ErrorCategory::shape, "map_mse_loss: empty batch");
    require(static_cast<int>(validity.size()) == pred.n(), ErrorCategory::shape,
            "map_mse_loss: one validity flag per sample required");

    const int n = pred.n();
    const std::size_t per = pred.size() / static_cast<std::size_t>(n);
    MapLossResult r;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!validity[static_cast<std::size_t>(i)]) continue;
        ++r.valid_count;
        const T* pp = pred.data() + per * static_cast<std::size_t>(i);
        const T* gp = gt.data() + per * static_cast<std::size_t>(i);
        double s = 0.0;
        for (std::size_t k = 0; k < per; ++k) {
            const double d = static_cast<double>(pp[k]) - static_cast<double>(gp[k]);
            s += d * d;
        }
        acc += s;
    }
    r.all_masked = (r.valid_count == 0);
    double denom = opt.divide_by_valid ? std::max(r.valid_count, 1) : n;
    if (opt.pixel_mean) denom *= static_cast<double>(per);
    r.value = acc / denom;
    return r;
}

// Mean over the batch of -log softmax(logits)[label]. Logits (n,2,1,1)
// ordered (live, spoof).
template <typename T>
double classification_loss(const Tensor<T>& logits, const std::vector<Label>& labels) {
    require(logits.n() >= 1, ErrorCategory::shape, "classification_loss: empty batch");
    require(logits.c() == 2 && logits.h() == 1 && logits.w() == 1, ErrorCategory::shape,
            "classification_loss expects (n,2,1,1) logits");
    require(static_cast<int>(labels.size()) == logits.n(), ErrorCategory::shape,
            "classification_loss: one label per sample required");
    double loss = 0.0;
    for (int i = 0; i < logits.n(); ++i) {
        const double a = logits.at(i, 0, 0, 0);
        const double b = logits.at(i, 1, 0, 0);
        const double mx = std::max(a, b);
        const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
        const double target = labels[static_cast<std::size_t>(i)] == Label::live ? a : b;
        loss += lse - target;
    }
    return loss / logits.n();
}

inline LossBreakdown overall_loss(double l_cls, const MapLossResult& depth,
                                  const MapLossResult& reflection, const MapLossResult& moire,
                                  const MapLossResult& boundary, const LossWeights& weights) {
    weights.validate();
    LossBreakdown b;
    b.l_cls = l_cls;
    b.l_d = depth.value;
    b.l_r = reflection.value;
    b.l_m = moire.value;
    b.l_b = boundary.value;
    b.n_depth = depth.valid_count;
    b.n_reflection = reflection.valid_count;
    b.n_moire = moire.valid_count;
    b.n_boundary = boundary.valid_count;
    b.l_overall = weights.mu * b.l_cls + weights.lambda * (b.l_d + b.l_r + b.l_b + b.l_m);
    return b;
}

}  // namespace megc
