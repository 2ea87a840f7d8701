#pragma once

// Synthetic supervision data: physical moire patterns from interfering
// sinusoidal gratings, moire-augmented live images, cut-paste boundary
// composites with their binary maps, and per-sample supervision bundles
// with validity masks.

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <string>

#include "megc/corpus.hpp"
#include "megc/fft.hpp"
#include "megc/image.hpp"
#include "megc/image_io.hpp"
#include "megc/tensor.hpp"

namespace megc {

inline constexpr int kMapSize = 32;

// Parameters of one sinusoidal interference fringe.
struct GratingSpec {
    double frequency = 0.1;    // cycles/pixel, must stay below Nyquist (0.5)
    double orientation = 0.0;  // radians in [0, pi)
    double phase = 0.0;        // radians
    double amplitude = 1.0;    // in (0, 1]

    void validate() const {
        require(frequency > 0.0, ErrorCategory::config, "grating frequency must be positive");
        require(frequency < 0.5, ErrorCategory::config,
                concat("grating frequency ", frequency, " at or above Nyquist (0.5 cycles/px)"));
        require(amplitude > 0.0 && amplitude <= 1.0, ErrorCategory::config,
                "grating amplitude must lie in (0,1]");
    }
};

// Four 32x32 ground-truth maps plus the per-cue validity mask that gates
// loss participation.
template <typename T = float>
struct SupervisionBundle {
    Tensor<T> depth_gt;       // 1x1x32x32 in [0,1]
    Tensor<T> reflection_gt;  // 1x1x32x32 in [0,1]
    Tensor<T> moire_gt;       // 1x1x32x32 in [0,1]
    Tensor<T> boundary_gt;    // 1x1x32x32 in {0,1}
    bool depth_valid = true;
    bool reflection_valid = true;
    bool moire_valid = true;
    bool boundary_valid = true;
};

struct CueValidity {
    bool depth = true, reflection = true, moire = true, boundary = true;
    bool operator==(const CueValidity&) const = default;
};

// Pure (label, spoof_type, composite donor) -> validity table.
//   live      -> (T,T,T,T)
//   print     -> (T,T,F,F)
//   replay    -> (T,T,T,F)
//   composite -> (T,T, donor==replay, T)
inline CueValidity validity_for(Label label, SpoofType type,
                                std::optional<SpoofType> composite_source = std::nullopt) {
    if (label == Label::live) return {true, true, true, true};
    switch (type) {
        case SpoofType::print: return {true, true, false, false};
        case SpoofType::replay: return {true, true, true, false};
        case SpoofType::composite:
            return {true, true, composite_source && *composite_source == SpoofType::replay, true};
        case SpoofType::none: break;
    }
    fail(ErrorCategory::data, "spoof sample with spoof_type none");
}

// pixel(x,y) = amplitude * 0.5 * (1 + cos(2*pi*f*(x*cos(th) + y*sin(th)) + phase))
template <typename T = float>
Tensor<T> generate_grating(const GratingSpec& spec, int width, int height) {
    spec.validate();
    require(width >= 8 && height >= 8, ErrorCategory::shape, "grating size must be at least 8x8");
    Tensor<T> out(1, 1, height, width);
    const double kx = std::cos(spec.orientation) * spec.frequency;
    const double ky = std::sin(spec.orientation) * spec.frequency;
    T* p = out.plane(0, 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            p[static_cast<std::size_t>(y) * width + x] = static_cast<T>(
                spec.amplitude * 0.5 *
                (1.0 + std::cos(2.0 * std::numbers::pi * (kx * x + ky * y) + spec.phase)));
    return out;
}

// Beat frequency of two fringes: magnitude of the difference of their
// spatial-frequency vectors, in cycles/pixel.
inline double beat_frequency(const GratingSpec& a, const GratingSpec& b) {
    const double ax = std::cos(a.orientation) * a.frequency;
    const double ay = std::sin(a.orientation) * a.frequency;
    const double bx = std::cos(b.orientation) * b.frequency;
    const double by = std::sin(b.orientation) * b.frequency;
    return std::hypot(ax - bx, ay - by);
}

// Physical moire synthesis: pointwise product of two similar gratings,
// low-pass filtered to isolate the beat component, min-max rescaled to
// [0,1]. The cutoff sits midway between the beat frequency and the mean
// fringe (carrier) frequency, which removes the carriers and the sum
// component while keeping the beat.
template <typename T = float>
Tensor<T> synthesize_moire_pattern(const GratingSpec& spec_a, const GratingSpec& spec_b, int width,
                                   int height) {
    spec_a.validate();
    spec_b.validate();
    require(std::abs(spec_a.frequency - spec_b.frequency) <= 0.1 &&
                std::abs(spec_a.orientation - spec_b.orientation) <= 0.2,
            ErrorCategory::config, "fringes not similar");
    Tensor<T> ga = generate_grating<T>(spec_a, width, height);
    Tensor<T> gb = generate_grating<T>(spec_b, width, height);

    const double f_beat = beat_frequency(spec_a, spec_b);
    if (f_beat < 1e-12) {
        // Zero beat: the beat component is the DC term, a constant map.
        return Tensor<T>(1, 1, height, width);
    }

    std::vector<fft::cdouble> grid(static_cast<std::size_t>(width) * height);
    for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = fft::cdouble(static_cast<double>(ga[i]) * static_cast<double>(gb[i]), 0.0);

    const double f_carrier = 0.5 * (spec_a.frequency + spec_b.frequency);
    const double cutoff = 0.5 * (f_beat + f_carrier);

    fft::transform2d(grid, height, width, false);
    for (int ky = 0; ky < height; ++ky) {
        const double fy = fft::bin_frequency(ky, height);
        for (int kx = 0; kx < width; ++kx) {
            const double fx = fft::bin_frequency(kx, width);
            if (std::hypot(fx, fy) > cutoff) grid[static_cast<std::size_t>(ky) * width + kx] = 0.0;
        }
    }
    fft::transform2d(grid, height, width, true);

    Tensor<T> out(1, 1, height, width);
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = static_cast<T>(grid[i].real());
    rescale_unit(out);
    return out;
}

template <typename T>
struct MoireComposite {
    Tensor<T> image;     // 1x6x256x256, HSV planes recomputed after blending
    Tensor<T> moire_gt;  // 1x1x32x32
};

// Adds the zero-mean moire pattern onto the RGB planes of a live crop
// (clamped to [0,1]), recomputes the HSV planes, and produces the 32x32
// ground-truth map by area averaging + rescale.
template <typename T = float>
MoireComposite<T> composite_moire(const FaceSample<T>& live, const Tensor<T>& moire_map, double alpha) {
    require(live.label == Label::live, ErrorCategory::data,
            "composite_moire takes live samples only");
    require(alpha > 0.0 && alpha <= 1.0, ErrorCategory::config, "alpha must lie in (0,1]");
    require(moire_map.n() == 1 && moire_map.c() == 1 && moire_map.h() == live.image.h() &&
                moire_map.w() == live.image.w(),
            ErrorCategory::shape, "moire map must match the crop size");

    const int hw = live.image.h() * live.image.w();
    const double mean = moire_map.mean();

    MoireComposite<T> out;
    out.image = live.image;
    Tensor<T> rgb(1, 3, live.image.h(), live.image.w());
    for (int j = 0; j < 3; ++j) {
        const T* src = live.image.plane(0, j);
        const T* m = moire_map.plane(0, 0);
        T* dst = rgb.plane(0, j);
        for (int i = 0; i < hw; ++i)
            dst[i] = static_cast<T>(std::clamp(
                static_cast<double>(src[i]) + alpha * (static_cast<double>(m[i]) - mean), 0.0, 1.0));
    }
    Tensor<T> hsv = rgb_to_hsv_image(rgb);
    for (int j = 0; j < 3; ++j) {
        std::copy(rgb.plane(0, j), rgb.plane(0, j) + hw, out.image.plane(0, j));
        std::copy(hsv.plane(0, j), hsv.plane(0, j) + hw, out.image.plane(0, j + 3));
    }

    out.moire_gt = area_downsample(moire_map, kMapSize, kMapSize);
    rescale_unit(out.moire_gt);
    return out;
}

struct PasteGeometry {
    Rect rect;                // base paste rectangle in crop coordinates
    std::uint64_t seed = 0;   // drives scale/translation jitter
    bool jitter = true;
};

// The jittered, clipped paste rectangle: scale in [0.9, 1.1] about the
// center, translation up to +-8 px, then clipped to the crop.
inline Rect resolve_paste_rect(const PasteGeometry& geom, int crop = kCropSize) {
    double scale = 1.0;
    int dx = 0, dy = 0;
    if (geom.jitter) {
        auto rng = make_rng(geom.seed, 0x70617374);
        std::uniform_real_distribution<double> sdist(0.9, 1.1);
        std::uniform_int_distribution<int> tdist(-8, 8);
        scale = sdist(rng);
        dx = tdist(rng);
        dy = tdist(rng);
    }
    const double cx = geom.rect.cx() + dx;
    const double cy = geom.rect.cy() + dy;
    const double w = geom.rect.w * scale;
    const double h = geom.rect.h * scale;
    int x0 = static_cast<int>(std::llround(cx - w / 2.0));
    int y0 = static_cast<int>(std::llround(cy - h / 2.0));
    int x1 = static_cast<int>(std::llround(cx + w / 2.0));
    int y1 = static_cast<int>(std::llround(cy + h / 2.0));
    x0 = std::clamp(x0, 0, crop);
    y0 = std::clamp(y0, 0, crop);
    x1 = std::clamp(x1, 0, crop);
    y1 = std::clamp(y1, 0, crop);
    return Rect{x0, y0, x1 - x0, y1 - y0};
}

// 32x32 binary map: cell = 1 iff the majority of its 8x8 pixel block lies
// inside the paste rectangle.
template <typename T = float>
Tensor<T> boundary_map_for_rect(const Rect& rect, int crop = kCropSize) {
    Tensor<T> map(1, 1, kMapSize, kMapSize);
    const int block = crop / kMapSize;
    const int x0 = rect.x, x1 = rect.x + rect.w;
    const int y0 = rect.y, y1 = rect.y + rect.h;
    for (int cy = 0; cy < kMapSize; ++cy) {
        const int by0 = cy * block, by1 = by0 + block;
        const int oy = std::max(0, std::min(y1, by1) - std::max(y0, by0));
        for (int cx = 0; cx < kMapSize; ++cx) {
            const int bx0 = cx * block, bx1 = bx0 + block;
            const int ox = std::max(0, std::min(x1, bx1) - std::max(x0, bx0));
            map.at(0, 0, cy, cx) = (2 * oy * ox > block * block) ? T(1) : T(0);
        }
    }
    return map;
}

template <typename T>
struct BoundaryComposite {
    FaceSample<T> sample;    // spoof_type composite, carries boundary_gt
    Tensor<T> boundary_gt;   // 1x1x32x32 binary
    Rect paste_rect;         // resolved (jittered, clipped) rectangle
};

// Cut-paste synthesis: the spoof crop's face region replaces the same
// region of the live crop. HSV planes are recomputed over the whole crop.
template <typename T = float>
BoundaryComposite<T> composite_boundary(const FaceSample<T>& live, const FaceSample<T>& spoof,
                                        const PasteGeometry& geometry) {
    require(live.label == Label::live, ErrorCategory::data, "first argument must be a live sample");
    require(spoof.label == Label::spoof, ErrorCategory::data, "second argument must be a spoof sample");
    require(live.image.shape() == spoof.image.shape(), ErrorCategory::shape,
            "live and spoof crops must match in size");

    Rect r = resolve_paste_rect(geometry, live.image.h());
    require(r.w > 0 && r.h > 0, ErrorCategory::shape, "paste region degenerated to zero area");

    BoundaryComposite<T> out;
    out.paste_rect = r;
    out.sample = live;
    Tensor<T> rgb(1, 3, live.image.h(), live.image.w());
    for (int j = 0; j < 3; ++j)
        std::copy(live.image.plane(0, j),
                  live.image.plane(0, j) + static_cast<std::size_t>(live.image.h()) * live.image.w(),
                  rgb.plane(0, j));
    for (int j = 0; j < 3; ++j) {
        const T* src = spoof.image.plane(0, j);
        T* dst = rgb.plane(0, j);
        for (int y = r.y; y < r.y + r.h; ++y)
            std::copy(src + static_cast<std::size_t>(y) * live.image.w() + r.x,
                      src + static_cast<std::size_t>(y) * live.image.w() + r.x + r.w,
                      dst + static_cast<std::size_t>(y) * live.image.w() + r.x);
    }
    Tensor<T> hsv = rgb_to_hsv_image(rgb);
    const std::size_t hw = static_cast<std::size_t>(live.image.h()) * live.image.w();
    for (int j = 0; j < 3; ++j) {
        std::copy(rgb.plane(0, j), rgb.plane(0, j) + hw, out.sample.image.plane(0, j));
        std::copy(hsv.plane(0, j), hsv.plane(0, j) + hw, out.sample.image.plane(0, j + 3));
    }

    out.boundary_gt = boundary_map_for_rect<T>(r, live.image.h());
    out.sample.label = Label::spoof;
    out.sample.spoof_type = SpoofType::composite;
    out.sample.composite_source = spoof.spoof_type;
    out.sample.source_id = concat("comp_", live.source_id, "_", spoof.source_id);
    out.sample.face_in_crop = r;
    out.sample.boundary_gt = out.boundary_gt;
    return out;
}

// A cue provider maps a prepared sample to a 32x32 map.
template <typename T = float>
using CueProvider = std::function<Tensor<T>(const FaceSample<T>&)>;

template <typename T = float>
struct CueProviders {
    CueProvider<T> depth;
    CueProvider<T> reflection;
    CueProvider<T> moire;
};

// Desk-scale default depth: a raised-cosine dome over the face region for
// live samples, zeros for spoofs.
template <typename T = float>
Tensor<T> raised_cosine_depth(const FaceSample<T>& sample) {
    Tensor<T> map(1, 1, kMapSize, kMapSize);
    if (sample.label != Label::live) return map;
    const double scale = static_cast<double>(kMapSize) / sample.image.h();
    const double x0 = sample.face_in_crop.x * scale;
    const double y0 = sample.face_in_crop.y * scale;
    const double w = std::max(1e-6, sample.face_in_crop.w * scale);
    const double h = std::max(1e-6, sample.face_in_crop.h * scale);
    for (int y = 0; y < kMapSize; ++y)
        for (int x = 0; x < kMapSize; ++x) {
            const double u = 2.0 * ((x + 0.5 - x0) / w) - 1.0;
            const double v = 2.0 * ((y + 0.5 - y0) / h) - 1.0;
            if (u < -1.0 || u > 1.0 || v < -1.0 || v > 1.0) continue;
            map.at(0, 0, y, x) = static_cast<T>(
                0.25 * (1.0 + std::cos(std::numbers::pi * u)) * (1.0 + std::cos(std::numbers::pi * v)));
        }
    return map;
}

template <typename T = float>
Tensor<T> zero_map(const FaceSample<T>&) {
    return Tensor<T>(1, 1, kMapSize, kMapSize);
}

template <typename T = float>
CueProviders<T> default_providers() {
    return CueProviders<T>{raised_cosine_depth<T>, zero_map<T>, zero_map<T>};
}

// Cue file naming: <sample_id>.<cue>.png next to each other in a cue dir.
inline std::string cue_file(const std::string& dir, const std::string& sample_id,
                            const std::string& cue) {
    return (std::filesystem::path(dir) / (sample_id + "." + cue + ".png")).string();
}

// Assembles the supervision bundle for one sample, applying the zero rules
// and the validity table.
template <typename T = float>
SupervisionBundle<T> supervision_for_sample(const FaceSample<T>& sample,
                                            const CueProviders<T>& providers) {
    SupervisionBundle<T> b;
    b.depth_gt = Tensor<T>(1, 1, kMapSize, kMapSize);
    b.reflection_gt = Tensor<T>(1, 1, kMapSize, kMapSize);
    b.moire_gt = Tensor<T>(1, 1, kMapSize, kMapSize);
    b.boundary_gt = Tensor<T>(1, 1, kMapSize, kMapSize);

    const CueValidity v = validity_for(sample.label, sample.spoof_type, sample.composite_source);
    b.depth_valid = v.depth;
    b.reflection_valid = v.reflection;
    b.moire_valid = v.moire;
    b.boundary_valid = v.boundary;

    if (sample.label == Label::live) {
        require(static_cast<bool>(providers.depth), ErrorCategory::state,
                "no depth provider registered");
        b.depth_gt = providers.depth(sample);
        // reflection/moire/boundary stay all-zero for live faces
        return b;
    }

    // Spoof: depth supervision is the zero map.
    require(static_cast<bool>(providers.reflection), ErrorCategory::state,
            "no reflection provider registered");
    b.reflection_gt = providers.reflection(sample);
    if (v.moire) {
        require(static_cast<bool>(providers.moire), ErrorCategory::state,
                "no moire provider registered");
        b.moire_gt = providers.moire(sample);
    }
    if (sample.spoof_type == SpoofType::composite) {
        require(sample.boundary_gt.has_value(), ErrorCategory::state,
                "composite sample is missing its boundary map");
        b.boundary_gt = *sample.boundary_gt;
    }
    return b;
}

}  // namespace megc
