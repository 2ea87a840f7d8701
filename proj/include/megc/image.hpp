#pragma once

// Plain (non-differentiable) image kernels: bilinear resize, RGB<->HSV,
// area downsampling and min-max rescaling. These back the data-preparation
// path; the network has its own differentiable resize in autodiff.hpp.

#include <algorithm>
#include <cmath>

#include "megc/tensor.hpp"

namespace megc {

// Single image = Tensor<T> with n == 1, channels-first.

template <typename T>
Tensor<T> bilinear_resize_image(const Tensor<T>& src, int out_h, int out_w) {
    require(src.n() == 1, ErrorCategory::shape, "bilinear_resize_image expects n=1");
    require(out_h >= 1 && out_w >= 1, ErrorCategory::shape, "resize target must be positive");
    const int ih = src.h(), iw = src.w(), ch = src.c();
    Tensor<T> dst(1, ch, out_h, out_w);

    const double sy = static_cast<double>(ih) / out_h;
    const double sx = static_cast<double>(iw) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, ih - 1);
        int y1c = std::clamp(y0 + 1, 0, ih - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, iw - 1);
            int x1c = std::clamp(x0 + 1, 0, iw - 1);
            for (int j = 0; j < ch; ++j) {
                const T* p = src.plane(0, j);
                double v00 = p[static_cast<std::size_t>(y0c) * iw + x0c];
                double v01 = p[static_cast<std::size_t>(y0c) * iw + x1c];
                double v10 = p[static_cast<std::size_t>(y1c) * iw + x0c];
                double v11 = p[static_cast<std::size_t>(y1c) * iw + x1c];
                double top = v00 + (v01 - v00) * wx;
                double bot = v10 + (v11 - v10) * wx;
                dst.at(0, j, oy, ox) = static_cast<T>(top + (bot - top) * wy);
            }
        }
    }
    return dst;
}

// Hexcone RGB->HSV on [0,1] channels; H is scaled from [0,360) to [0,1).
template <typename T>
void rgb_to_hsv_pixel(T r, T g, T b, T& hh, T& ss, T& vv) {
    double rf = r, gf = g, bf = b;
    double mx = std::max({rf, gf, bf});
    double mn = std::min({rf, gf, bf});
    double delta = mx - mn;
    vv = static_cast<T>(mx);
    ss = static_cast<T>(mx > 0.0 ? delta / mx : 0.0);
    double h = 0.0;
    if (delta > 0.0) {
        if (mx == rf)
            h = 60.0 * std::fmod((gf - bf) / delta, 6.0);
        else if (mx == gf)
            h = 60.0 * ((bf - rf) / delta + 2.0);
        else
            h = 60.0 * ((rf - gf) / delta + 4.0);
        if (h < 0.0) h += 360.0;
    }
    hh = static_cast<T>(h / 360.0);
}

// 3-channel RGB image -> 3-channel HSV image.
template <typename T>
Tensor<T> rgb_to_hsv_image(const Tensor<T>& rgb) {
    require(rgb.n() == 1 && rgb.c() == 3, ErrorCategory::shape, "rgb_to_hsv expects 1x3xHxW");
    Tensor<T> hsv(1, 3, rgb.h(), rgb.w());
    const std::size_t plane = static_cast<std::size_t>(rgb.h()) * rgb.w();
    const T* r = rgb.plane(0, 0);
    const T* g = rgb.plane(0, 1);
    const T* b = rgb.plane(0, 2);
    T* h = hsv.plane(0, 0);
    T* s = hsv.plane(0, 1);
    T* v = hsv.plane(0, 2);
    for (std::size_t i = 0; i < plane; ++i) rgb_to_hsv_pixel(r[i], g[i], b[i], h[i], s[i], v[i]);
    return hsv;
}

// Area-average downsample of a single-channel image to out_h x out_w.
// Exact box integration, handles non-integral ratios.
template <typename T>
Tensor<T> area_downsample(const Tensor<T>& src, int out_h, int out_w) {
    require(src.n() == 1 && src.c() == 1, ErrorCategory::shape, "area_downsample expects 1x1xHxW");
    require(out_h >= 1 && out_w >= 1 && out_h <= src.h() && out_w <= src.w(),
            ErrorCategory::shape, "area_downsample: bad target size");
    const int ih = src.h(), iw = src.w();
    Tensor<T> dst(1, 1, out_h, out_w);
    const double sy = static_cast<double>(ih) / out_h;
    const double sx = static_cast<double>(iw) / out_w;
    const T* p = src.plane(0, 0);
    for (int oy = 0; oy < out_h; ++oy) {
        double y0 = oy * sy, y1 = (oy + 1) * sy;
        for (int ox = 0; ox < out_w; ++ox) {
            double x0 = ox * sx, x1 = (ox + 1) * sx;
            double acc = 0.0;
            for (int y = static_cast<int>(std::floor(y0)); y < static_cast<int>(std::ceil(y1)); ++y) {
                double cy = std::min(y1, static_cast<double>(y + 1)) - std::max(y0, static_cast<double>(y));
                if (cy <= 0.0) continue;
                for (int x = static_cast<int>(std::floor(x0)); x < static_cast<int>(std::ceil(x1)); ++x) {
                    double cx = std::min(x1, static_cast<double>(x + 1)) - std::max(x0, static_cast<double>(x));
                    if (cx <= 0.0) continue;
                    acc += cy * cx * static_cast<double>(p[static_cast<std::size_t>(y) * iw + x]);
                }
            }
            dst.at(0, 0, oy, ox) = static_cast<T>(acc / (sy * sx));
        }
    }
    return dst;
}

// Min-max rescale to [0,1]. A constant input maps to all-zeros.
template <typename T>
void rescale_unit(Tensor<T>& t) {
    if (t.empty()) return;
    T lo = t.min(), hi = t.max();
    double range = static_cast<double>(hi) - static_cast<double>(lo);
    if (range < 1e-12) {
        t.fill(T(0));
        return;
    }
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<T>((static_cast<double>(t[i]) - static_cast<double>(lo)) / range);
}

template <typename T>
void clamp_unit(Tensor<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::clamp(t[i], T(0), T(1));
}

}  // namespace megc
