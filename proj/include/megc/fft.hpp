#pragma once

// Minimal complex FFT used by the moire synthesis low-pass filter.
// Radix-2 Cooley-Tukey for power-of-two lengths, direct DFT otherwise
// (sizes here are small and the op runs offline).

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "megc/core.hpp"

namespace megc::fft {

using cdouble = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline void fft_radix2(std::vector<cdouble>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        cdouble wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cdouble w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                cdouble u = a[i + k];
                cdouble v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

inline void dft_naive(std::vector<cdouble>& a, bool inverse) {
    const std::size_t n = a.size();
    std::vector<cdouble> out(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n; ++k) {
        cdouble acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) *
                         static_cast<double>(t) / static_cast<double>(n);
            acc += a[t] * cdouble(std::cos(ang), std::sin(ang));
        }
        out[k] = inverse ? acc / static_cast<double>(n) : acc;
    }
    a = std::move(out);
}

inline void transform(std::vector<cdouble>& a, bool inverse) {
    if (a.empty()) return;
    if (is_pow2(a.size()))
        fft_radix2(a, inverse);
    else
        dft_naive(a, inverse);
}

// In-place 2-D transform over a row-major h x w grid.
inline void transform2d(std::vector<cdouble>& grid, int h, int w, bool inverse) {
    require(static_cast<std::size_t>(h) * w == grid.size(), ErrorCategory::shape,
            "transform2d: grid size mismatch");
    std::vector<cdouble> line;
    line.reserve(static_cast<std::size_t>(std::max(h, w)));
    for (int y = 0; y < h; ++y) {
        line.assign(grid.begin() + static_cast<std::ptrdiff_t>(y) * w,
                    grid.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
        transform(line, inverse);
        std::copy(line.begin(), line.end(), grid.begin() + static_cast<std::ptrdiff_t>(y) * w);
    }
    for (int x = 0; x < w; ++x) {
        line.resize(static_cast<std::size_t>(h));
        for (int y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * w + x];
        transform(line, inverse);
        for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = line[static_cast<std::size_t>(y)];
    }
}

// Frequency of bin k along an axis of length n, in cycles/sample, signed.
inline double bin_frequency(int k, int n) {
    int kk = (k <= n / 2) ? k : k - n;
    return static_cast<double>(kk) / static_cast<double>(n);
}

}  // namespace megc::fft
