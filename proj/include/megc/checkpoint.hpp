#pragma once

// Checkpoint container: a self-describing binary with a JSON header
// indexing named tensors (layer weights, optimizer moments) plus free-form
// metadata, followed by raw little-endian float payload.

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "megc/nn.hpp"
#include "megc/tensor.hpp"

namespace megc {

inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'G', 'C', 'C', 'K', 'P', '1'};

struct Checkpoint {
    nlohmann::json meta;
    std::map<std::string, Tensor<float>> tensors;

    bool has(const std::string& name) const { return tensors.count(name) > 0; }

    void save(const std::string& path) const {
        nlohmann::json header;
        header["version"] = 1;
        header["meta"] = meta;
        header["tensors"] = nlohmann::json::array();
        std::size_t offset = 0;
        for (const auto& [name, t] : tensors) {
            header["tensors"].push_back({{"name", name},
                                         {"shape", {t.n(), t.c(), t.h(), t.w()}},
                                         {"offset", offset},
                                         {"count", t.size()}});
            offset += t.size();
        }
        const std::string hs = header.dump();

        std::ofstream out(path, std::ios::binary);
        require(out.good(), ErrorCategory::io, "cannot write checkpoint: " + path);
        out.write(kCheckpointMagic, 8);
        const std::uint64_t hlen = hs.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& [name, t] : tensors)
            out.write(reinterpret_cast<const char*>(t.data()),
                      static_cast<std::streamsize>(t.size() * sizeof(float)));
        require(out.good(), ErrorCategory::io, "short write while saving checkpoint: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), ErrorCategory::io, "cannot read checkpoint: " + path);
        char magic[8];
        in.read(magic, 8);
        require(in.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0, ErrorCategory::io,
                "not a megc checkpoint: " + path);
        std::uint64_t hlen = 0;
        in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
        std::string hs(hlen, '\0');
        in.read(hs.data(), static_cast<std::streamsize>(hlen));
        require(in.good(), ErrorCategory::io, "truncated checkpoint header: " + path);
        nlohmann::json header = nlohmann::json::parse(hs);

        Checkpoint ck;
        ck.meta = header.value("meta", nlohmann::json::object());
        for (const auto& entry : header.at("tensors")) {
            const auto shape = entry.at("shape");
            Tensor<float> t(shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>(),
                            shape.at(3).get<int>());
            in.read(reinterpret_cast<char*>(t.data()),
                    static_cast<std::streamsize>(t.size() * sizeof(float)));
            require(in.good(), ErrorCategory::io,
                    "truncated checkpoint payload at tensor " + entry.at("name").get<std::string>());
            ck.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
        }
        return ck;
    }

    // Identity of the stored model weights (excludes optimizer state).
    std::string weight_digest() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& [name, t] : tensors) {
            if (name.rfind("optim.", 0) == 0) continue;
            h = fnv1a64(name.data(), name.size(), h);
            h = fnv1a64(t.data(), t.size() * sizeof(float), h);
        }
        return hex16(h);
    }
};

template <typename T>
void store_parameters(Checkpoint& ck, const nn::ParameterStore<T>& store) {
    for (const auto* p : store.all()) ck.tensors[p->name] = p->value.template cast<float>();
}

// Restores parameters by name; any shape mismatch or missing/extra tensor
// is reported with the offending layer names.
template <typename T>
void restore_parameters(const Checkpoint& ck, nn::ParameterStore<T>& store) {
    std::vector<std::string> problems;
    for (auto* p : store.all()) {
        auto it = ck.tensors.find(p->name);
        if (it == ck.tensors.end()) {
            problems.push_back(p->name + " (missing from checkpoint)");
            continue;
        }
        if (it->second.shape() != p->value.shape()) {
            problems.push_back(concat(p->name, " (checkpoint ", it->second.shape().str(), " vs model ",
                                      p->value.shape().str(), ")"));
        }
    }
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("optim.", 0) == 0) continue;
        if (!store.contains(name)) problems.push_back(name + " (not in model)");
    }
    if (!problems.empty()) {
        std::string msg = "checkpoint/model mismatch:";
        for (const auto& p : problems) msg += "\n  " + p;
        fail(ErrorCategory::shape, msg);
    }
    for (auto* p : store.all()) p->value = ck.tensors.at(p->name).template cast<T>();
}

template <typename T>
void store_optimizer(Checkpoint& ck, nn::Adam<T>& adam, const nn::ParameterStore<T>& store) {
    for (const auto* p : store.all()) {
        ck.tensors["optim." + p->name + ".m"] = adam.moment1(p->name).template cast<float>();
        ck.tensors["optim." + p->name + ".v"] = adam.moment2(p->name).template cast<float>();
    }
    ck.meta["optimizer_step"] = adam.step_count();
}

template <typename T>
void restore_optimizer(const Checkpoint& ck, nn::Adam<T>& adam, const nn::ParameterStore<T>& store) {
    for (const auto* p : store.all()) {
        const std::string m = "optim." + p->name + ".m";
        const std::string v = "optim." + p->name + ".v";
        require(ck.has(m) && ck.has(v), ErrorCategory::state,
                "checkpoint has no optimizer state for " + p->name);
        adam.moment1(p->name) = ck.tensors.at(m).template cast<T>();
        adam.moment2(p->name) = ck.tensors.at(v).template cast<T>();
    }
    adam.set_step_count(ck.meta.at("optimizer_step").get<long>());
}

}  // namespace megc
