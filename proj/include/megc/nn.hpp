#pragma once

// Named-parameter layers on top of the autodiff graph, layer introspection
// records, and the Adam optimizer with cosine decay.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "megc/autodiff.hpp"

namespace megc::nn {

using ad::Parameter;
using ad::Value;

struct LayerInfo {
    std::string name;
    std::string stage;  // grouping tag: backbone, mafe.depth, adapt, refine, ...
    int in_channels = 0, out_channels = 0;
    int kernel_h = 0, kernel_w = 0;
    int stride = 1;
    std::size_t param_count = 0;
};

inline std::size_t conv_param_count(int oc, int ic, int kh, int kw) {
    return static_cast<std::size_t>(oc) * ic * kh * kw + static_cast<std::size_t>(oc);
}

// Owns parameters in construction order; names must be unique.
template <typename T>
class ParameterStore {
public:
    Parameter<T>& create(const std::string& name, Tensor<T> value, bool trainable = true) {
        require(!by_name_.count(name), ErrorCategory::state, "duplicate parameter name: " + name);
        params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value), trainable));
        by_name_[name] = params_.back().get();
        return *params_.back();
    }

    Parameter<T>& get(const std::string& name) {
        auto it = by_name_.find(name);
        require(it != by_name_.end(), ErrorCategory::state, "no such parameter: " + name);
        return *it->second;
    }
    const Parameter<T>& get(const std::string& name) const {
        auto it = by_name_.find(name);
        require(it != by_name_.end(), ErrorCategory::state, "no such parameter: " + name);
        return *it->second;
    }
    bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

    std::vector<Parameter<T>*> all() {
        std::vector<Parameter<T>*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }
    std::vector<const Parameter<T>*> all() const {
        std::vector<const Parameter<T>*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p->name);
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
    std::map<std::string, Parameter<T>*> by_name_;
};

template <typename T>
class Conv {
public:
    Conv() = default;
    Conv(ParameterStore<T>& store, const std::string& name, const std::string& stage, int in_ch,
         int out_ch, int kernel, int stride, std::mt19937_64& rng, bool trainable = true)
        : stride_(stride), pad_(kernel / 2) {
        Tensor<T> w(out_ch, in_ch, kernel, kernel);
        ad::he_init(w, rng);
        weight_ = &store.create(name + ".weight", std::move(w), trainable);
        bias_ = &store.create(name + ".bias", Tensor<T>(1, 1, 1, out_ch), trainable);
        info_ = LayerInfo{name, stage, in_ch, out_ch, kernel, kernel, stride,
                          conv_param_count(out_ch, in_ch, kernel, kernel)};
    }

    Value<T> operator()(ad::Graph<T>& g, const Value<T>& x) const {
        return ad::op::conv2d(g, x, g.param(*weight_), g.param(*bias_), stride_, pad_);
    }

    const LayerInfo& info() const { return info_; }
    Parameter<T>& weight() { return *weight_; }
    Parameter<T>& bias() { return *bias_; }

private:
    Parameter<T>* weight_ = nullptr;
    Parameter<T>* bias_ = nullptr;
    int stride_ = 1, pad_ = 0;
    LayerInfo info_;
};

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParameterStore<T>& store, const std::string& name, const std::string& stage, int in_f,
           int out_f, std::mt19937_64& rng) {
        Tensor<T> w(out_f, in_f, 1, 1);
        ad::he_init(w, rng);
        weight_ = &store.create(name + ".weight", std::move(w));
        bias_ = &store.create(name + ".bias", Tensor<T>(1, 1, 1, out_f));
        info_ = LayerInfo{name, stage, in_f, out_f, 1, 1, 1, conv_param_count(out_f, in_f, 1, 1)};
    }

    Value<T> operator()(ad::Graph<T>& g, const Value<T>& x) const {
        return ad::op::linear(g, x, g.param(*weight_), g.param(*bias_));
    }

    const LayerInfo& info() const { return info_; }

private:
    Parameter<T>* weight_ = nullptr;
    Parameter<T>* bias_ = nullptr;
    LayerInfo info_;
};

enum class LrSchedule { constant, cosine };

struct OptimizerConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LrSchedule schedule = LrSchedule::cosine;
    long total_steps = 0;  // required for cosine decay
};

template <typename T>
class Adam {
public:
    Adam(ParameterStore<T>& store, OptimizerConfig cfg) : store_(&store), cfg_(cfg) {
        for (auto* p : store.all())
            state_.emplace(p->name, Slot{Tensor<T>(p->value.shape()), Tensor<T>(p->value.shape())});
    }

    double lr_at(long step) const {
        if (cfg_.schedule == LrSchedule::cosine && cfg_.total_steps > 0) {
            const double t = std::min<double>(static_cast<double>(step), static_cast<double>(cfg_.total_steps));
            return cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(cfg_.total_steps)));
        }
        return cfg_.lr;
    }

    // Applies one update from the accumulated gradients. `step_` counts
    // applied updates (1-based in the bias correction).
    void step() {
        ++step_;
        const double lr = lr_at(step_ - 1);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (auto* p : store_->all()) {
            if (!p->trainable) continue;
            Slot& s = state_.at(p->name);
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double g = static_cast<double>(p->grad[i]);
                const double m = cfg_.beta1 * static_cast<double>(s.m[i]) + (1.0 - cfg_.beta1) * g;
                const double v = cfg_.beta2 * static_cast<double>(s.v[i]) + (1.0 - cfg_.beta2) * g * g;
                s.m[i] = static_cast<T>(m);
                s.v[i] = static_cast<T>(v);
                p->value[i] -= static_cast<T>(lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps));
            }
        }
    }

    long step_count() const { return step_; }
    void set_step_count(long s) { step_ = s; }
    const OptimizerConfig& config() const { return cfg_; }

    // State access for checkpointing.
    Tensor<T>& moment1(const std::string& name) { return state_.at(name).m; }
    Tensor<T>& moment2(const std::string& name) { return state_.at(name).v; }

private:
    struct Slot {
        Tensor<T> m, v;
    };
    ParameterStore<T>* store_;
    OptimizerConfig cfg_;
    std::map<std::string, Slot> state_;
    long step_ = 0;
};

}  // namespace megc::nn
