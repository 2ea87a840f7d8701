#pragma once

// Shared error type, deterministic RNG helpers and small utilities used
// across the megc library.

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace megc {

enum class ErrorCategory {
    io,        // filesystem / decode / encode failures
    parse,     // malformed manifests, configs with bad syntax
    config,    // semantically invalid configuration
    shape,     // tensor / image dimension mismatches
    data,      // dataset-level violations (empty class, bad labels)
    state,     // contract violations (untrained net, missing provider)
    numeric,   // NaN / divergence during optimization
};

inline const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::io: return "io";
        case ErrorCategory::parse: return "parse";
        case ErrorCategory::config: return "config";
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::data: return "data";
        case ErrorCategory::state: return "state";
        case ErrorCategory::numeric: return "numeric";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(std::string(to_string(category)) + ": " + message),
          category_(category) {}

    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) {
    throw Error(c, msg);
}

inline void require(bool cond, ErrorCategory c, const std::string& msg) {
    if (!cond) fail(c, msg);
}

// 64-bit FNV-1a. Used for config hashes and deterministic sample-id splits.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

inline std::string hex16(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// SplitMix64, used to derive independent stream seeds from (seed, tags).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(seed ^ splitmix64(tag));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t tag = 0) {
    return std::mt19937_64(mix_seed(seed, tag));
}

template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream oss;
    (oss << ... << args);
    return oss.str();
}

}  // namespace megc
