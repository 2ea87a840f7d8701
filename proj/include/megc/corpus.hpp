#pragma once

// Dataset ingestion: manifest parsing, face-crop preparation (box
// expansion, 256x256 resize, RGB+HSV stacking) and class-balanced batch
// streaming.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "megc/image.hpp"
#include "megc/image_io.hpp"
#include "megc/tensor.hpp"

namespace megc {

enum class Label { live, spoof };
enum class SpoofType { none, print, replay, composite };
enum class Split { train, dev, test };

inline const char* to_string(Label l) { return l == Label::live ? "live" : "spoof"; }

inline const char* to_string(SpoofType t) {
    switch (t) {
        case SpoofType::none: return "none";
        case SpoofType::print: return "print";
        case SpoofType::replay: return "replay";
        case SpoofType::composite: return "composite";
    }
    return "?";
}

inline Label parse_label(const std::string& tok, int line_no) {
    if (tok == "live") return Label::live;
    if (tok == "spoof") return Label::spoof;
    fail(ErrorCategory::parse, concat("line ", line_no, ": unknown label \"", tok,
                                      "\" (expected live|spoof)"));
}

inline SpoofType parse_spoof_type(const std::string& tok, int line_no) {
    if (tok == "none") return SpoofType::none;
    if (tok == "print") return SpoofType::print;
    if (tok == "replay") return SpoofType::replay;
    if (tok == "composite") return SpoofType::composite;
    fail(ErrorCategory::parse, concat("line ", line_no, ": unknown spoof_type \"", tok,
                                      "\" (expected none|print|replay|composite)"));
}

struct Rect {
    int x = 0, y = 0, w = 0, h = 0;

    bool operator==(const Rect&) const = default;
    long long area() const { return static_cast<long long>(w) * h; }
    double cx() const { return x + w / 2.0; }
    double cy() const { return y + h / 2.0; }
    std::string str() const { return concat(x, ",", y, ",", w, ",", h); }
};

struct ManifestRecord {
    std::string path;
    Label label = Label::live;
    SpoofType spoof_type = SpoofType::none;
    Rect face_box;
    // Spoof type of the donor sample a composite was built from. Carried as
    // an optional `source=<type>` manifest field; absent means unknown and
    // the moire cue stays disabled for that composite.
    std::optional<SpoofType> composite_source;
    std::string source_id;  // stable id derived from path
};

struct CorpusIndex {
    std::vector<ManifestRecord> samples;
    Split split = Split::train;
    std::string root;  // directory image paths are resolved against

    int count(Label l) const {
        int n = 0;
        for (const auto& r : samples) n += (r.label == l) ? 1 : 0;
        return n;
    }

    std::string resolve_path(const ManifestRecord& rec) const {
        std::filesystem::path p(rec.path);
        if (p.is_absolute() || root.empty()) return rec.path;
        return (std::filesystem::path(root) / p).string();
    }
};

// One prepared sample: 256x256x6 crop (RGB planes 0-2, HSV planes 3-5).
template <typename T = float>
struct FaceSample {
    Tensor<T> image;  // 1x6x256x256
    Label label = Label::live;
    SpoofType spoof_type = SpoofType::none;
    std::string source_id;
    Rect face_box;                 // original-frame coordinates
    Rect face_in_crop;             // the face box mapped into crop coordinates
    std::optional<SpoofType> composite_source;
    std::optional<Tensor<T>> boundary_gt;  // carried by composites (32x32, binary)
};

inline std::string sample_id_from_path(const std::string& path) {
    std::string id = std::filesystem::path(path).stem().string();
    for (char& ch : id)
        if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
    return id;
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream iss(line);
    std::string t;
    while (iss >> t) toks.push_back(t);
    return toks;
}

inline Rect parse_box(const std::string& tok, int line_no) {
    Rect r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream iss(tok);
    if (!(iss >> r.x >> c1 >> r.y >> c2 >> r.w >> c3 >> r.h) || c1 != ',' || c2 != ',' || c3 != ',')
        fail(ErrorCategory::parse, concat("line ", line_no, ": malformed face_box \"", tok,
                                          "\" (expected x,y,w,h)"));
    std::string rest;
    if (iss >> rest)
        fail(ErrorCategory::parse, concat("line ", line_no, ": trailing characters in face_box \"", tok, "\""));
    return r;
}

}  // namespace detail

// Manifest format: one record per line,
//   <path> <label> <spoof_type> <x,y,w,h> [source=<spoof_type>]
// '#' starts a comment line. The optional source field records the donor
// spoof type of synthetic composites.
inline CorpusIndex load_manifest(const std::string& path, Split split = Split::train) {
    require(std::filesystem::exists(path), ErrorCategory::io, "manifest not found: " + path);
    std::ifstream in(path);
    require(in.good(), ErrorCategory::io, "cannot read manifest: " + path);

    CorpusIndex index;
    index.split = split;
    index.root = std::filesystem::path(path).parent_path().string();

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() < 4 || toks.size() > 5)
            fail(ErrorCategory::parse,
                 concat("line ", line_no, ": expected 4 fields (path label spoof_type x,y,w,h), got ",
                        toks.size()));
        ManifestRecord rec;
        rec.path = toks[0];
        rec.label = parse_label(toks[1], line_no);
        rec.spoof_type = parse_spoof_type(toks[2], line_no);
        rec.face_box = detail::parse_box(toks[3], line_no);
        if (toks.size() == 5) {
            const std::string& extra = toks[4];
            if (extra.rfind("source=", 0) != 0)
                fail(ErrorCategory::parse, concat("line ", line_no, ": unknown field \"", extra, "\""));
            rec.composite_source = parse_spoof_type(extra.substr(7), line_no);
        }
        if ((rec.label == Label::live) != (rec.spoof_type == SpoofType::none))
            fail(ErrorCategory::parse,
                 concat("line ", line_no, ": label ", to_string(rec.label), " with spoof_type ",
                        to_string(rec.spoof_type), " (live <=> none)"));
        rec.source_id = sample_id_from_path(rec.path);
        require(std::filesystem::exists(index.resolve_path(rec)), ErrorCategory::parse,
                concat("line ", line_no, ": image file not found: ", index.resolve_path(rec)));
        index.samples.push_back(std::move(rec));
    }
    require(!index.samples.empty(), ErrorCategory::parse, "empty manifest: " + path);
    if (split == Split::train)
        require(index.count(Label::live) > 0 && index.count(Label::spoof) > 0, ErrorCategory::data,
                "train split needs at least one live and one spoof record");

    // Disambiguate repeated paths so sample ids stay unique.
    std::map<std::string, int> seen;
    for (auto& rec : index.samples) {
        int k = seen[rec.source_id]++;
        if (k > 0) rec.source_id += concat("#", k);
    }
    return index;
}

inline void save_manifest(const CorpusIndex& index, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), ErrorCategory::io, "cannot write manifest: " + path);
    for (const auto& r : index.samples) {
        out << r.path << ' ' << to_string(r.label) << ' ' << to_string(r.spoof_type) << ' '
            << r.face_box.str();
        if (r.composite_source) out << " source=" << to_string(*r.composite_source);
        out << '\n';
    }
}

inline constexpr int kCropSize = 256;

// Expands the face box by 100% about its center (doubled width and height),
// clips to the frame, resizes the crop to 256x256 and stacks HSV channels
// computed from the resized RGB.
template <typename T = float>
FaceSample<T> prepare_face_crop(const Tensor<T>& frame, const Rect& face_box) {
    require(frame.n() == 1 && frame.c() == 3, ErrorCategory::shape,
            "prepare_face_crop expects a 1x3xHxW frame");
    require(face_box.w > 0 && face_box.h > 0, ErrorCategory::shape,
            "face_box has zero area: " + face_box.str());
    const int fw = frame.w(), fh = frame.h();
    require(face_box.x < fw && face_box.y < fh && face_box.x + face_box.w > 0 &&
                face_box.y + face_box.h > 0,
            ErrorCategory::shape, "face_box fully outside frame: " + face_box.str());

    const double cx = face_box.cx(), cy = face_box.cy();
    const int ew = 2 * face_box.w, eh = 2 * face_box.h;
    const int ex = static_cast<int>(std::llround(cx - ew / 2.0));
    const int ey = static_cast<int>(std::llround(cy - eh / 2.0));

    const int x0 = std::clamp(ex, 0, fw - 1);
    const int y0 = std::clamp(ey, 0, fh - 1);
    const int x1 = std::clamp(ex + ew, 1, fw);
    const int y1 = std::clamp(ey + eh, 1, fh);
    const int cw = x1 - x0, ch = y1 - y0;
    require(cw > 0 && ch > 0, ErrorCategory::shape, "clipped crop is empty");

    Tensor<T> crop(1, 3, ch, cw);
    for (int j = 0; j < 3; ++j) {
        const T* src = frame.plane(0, j);
        T* dst = crop.plane(0, j);
        for (int y = 0; y < ch; ++y)
            std::copy(src + static_cast<std::size_t>(y0 + y) * fw + x0,
                      src + static_cast<std::size_t>(y0 + y) * fw + x1,
                      dst + static_cast<std::size_t>(y) * cw);
    }

    Tensor<T> rgb = bilinear_resize_image(crop, kCropSize, kCropSize);
    clamp_unit(rgb);
    Tensor<T> hsv = rgb_to_hsv_image(rgb);

    FaceSample<T> s;
    s.image = Tensor<T>(1, 6, kCropSize, kCropSize);
    for (int j = 0; j < 3; ++j) {
        std::copy(rgb.plane(0, j), rgb.plane(0, j) + static_cast<std::size_t>(kCropSize) * kCropSize,
                  s.image.plane(0, j));
        std::copy(hsv.plane(0, j), hsv.plane(0, j) + static_cast<std::size_t>(kCropSize) * kCropSize,
                  s.image.plane(0, j + 3));
    }
    s.face_box = face_box;

    // Map the original face box into crop coordinates.
    const double sx = static_cast<double>(kCropSize) / cw;
    const double sy = static_cast<double>(kCropSize) / ch;
    const int bx0 = static_cast<int>(std::llround((std::max(face_box.x, x0) - x0) * sx));
    const int by0 = static_cast<int>(std::llround((std::max(face_box.y, y0) - y0) * sy));
    const int bx1 = static_cast<int>(std::llround((std::min(face_box.x + face_box.w, x1) - x0) * sx));
    const int by1 = static_cast<int>(std::llround((std::min(face_box.y + face_box.h, y1) - y0) * sy));
    s.face_in_crop = Rect{bx0, by0, std::max(1, bx1 - bx0), std::max(1, by1 - by0)};
    return s;
}

// Loads + prepares samples on demand, memoizing prepared crops.
template <typename T = float>
class SampleLoader {
public:
    explicit SampleLoader(const CorpusIndex& index) : index_(&index) {}

    const CorpusIndex& index() const { return *index_; }

    FaceSample<T> load(int i) const {
        const auto& rec = index_->samples.at(static_cast<std::size_t>(i));
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = cache_.find(i);
            if (it != cache_.end()) return it->second;
        }
        Tensor<T> frame = io::read_image_rgb<T>(index_->resolve_path(rec));
        FaceSample<T> s = prepare_face_crop(frame, rec.face_box);
        s.label = rec.label;
        s.spoof_type = rec.spoof_type;
        s.source_id = rec.source_id;
        s.composite_source = rec.composite_source;
        std::lock_guard<std::mutex> lock(mu_);
        auto [it, inserted] = cache_.emplace(i, std::move(s));
        return it->second;
    }

private:
    const CorpusIndex* index_;
    mutable std::mutex mu_;
    mutable std::map<int, FaceSample<T>> cache_;
};

struct BatchPlanOptions {
    int batch_size = 4;
    std::uint64_t seed = 0;
    // Fraction of the spoof half drawn from composite records, when any exist.
    double composite_fraction = 0.0;
};

// Deterministic class-balanced batch plan. Batch k of epoch e is a pure
// function of (index, options, e, k), which keeps resumed runs bit-identical
// with uninterrupted ones.
class BatchPlan {
public:
    BatchPlan(const CorpusIndex& index, BatchPlanOptions opt) : opt_(opt) {
        require(opt.batch_size >= 2, ErrorCategory::config, "batch_size must be >= 2");
        require(opt.batch_size % 2 == 0, ErrorCategory::config,
                concat("batch_size must be even, got ", opt.batch_size));
        require(opt.composite_fraction >= 0.0 && opt.composite_fraction <= 1.0,
                ErrorCategory::config, "composite_fraction must lie in [0,1]");
        for (int i = 0; i < static_cast<int>(index.samples.size()); ++i) {
            const auto& r = index.samples[static_cast<std::size_t>(i)];
            if (r.label == Label::live)
                live_.push_back(i);
            else if (r.spoof_type == SpoofType::composite)
                composite_.push_back(i);
            else
                spoof_.push_back(i);
        }
        require(!live_.empty() && (!spoof_.empty() || !composite_.empty()), ErrorCategory::data,
                "balanced batches need both classes present");
    }

    int batch_size() const { return opt_.batch_size; }

    int batches_per_epoch() const {
        const int half = opt_.batch_size / 2;
        const int n_live = static_cast<int>(live_.size());
        const int n_spoof = static_cast<int>(spoof_.size() + composite_.size());
        const int majority = std::max(n_live, n_spoof);
        return (majority + half - 1) / half;
    }

    // Sample indices for batch k of epoch e: live half first, spoof half second.
    std::vector<int> batch(std::uint64_t epoch, int k) const {
        const int half = opt_.batch_size / 2;
        const int nb = batches_per_epoch();
        require(k >= 0 && k < nb, ErrorCategory::config, "batch index out of range");

        std::vector<int> live_slots = class_slots(live_, nb * half, epoch, 0x11);
        std::vector<int> spoof_slots;
        int comp_per_batch = 0;
        if (!composite_.empty() && opt_.composite_fraction > 0.0) {
            comp_per_batch = std::min(half, static_cast<int>(std::lround(opt_.composite_fraction * half)));
            if (spoof_.empty()) comp_per_batch = half;
        } else if (spoof_.empty()) {
            comp_per_batch = half;
        }
        const int orig_per_batch = half - comp_per_batch;
        std::vector<int> comp_slots, orig_slots;
        if (comp_per_batch > 0) comp_slots = class_slots(composite_, nb * comp_per_batch, epoch, 0x22);
        if (orig_per_batch > 0) orig_slots = class_slots(spoof_, nb * orig_per_batch, epoch, 0x33);

        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(opt_.batch_size));
        for (int i = 0; i < half; ++i) out.push_back(live_slots[static_cast<std::size_t>(k * half + i)]);
        for (int i = 0; i < orig_per_batch; ++i)
            out.push_back(orig_slots[static_cast<std::size_t>(k * orig_per_batch + i)]);
        for (int i = 0; i < comp_per_batch; ++i)
            out.push_back(comp_slots[static_cast<std::size_t>(k * comp_per_batch + i)]);
        return out;
    }

private:
    // A full epoch of slots for one class: a shuffled pass over the class,
    // then uniform draws with replacement for any remaining slots.
    std::vector<int> class_slots(const std::vector<int>& pool, int slots, std::uint64_t epoch,
                                 std::uint64_t tag) const {
        auto rng = make_rng(opt_.seed, mix_seed(epoch, tag));
        std::vector<int> order = pool;
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(slots));
        for (int i = 0; i < slots && i < static_cast<int>(order.size()); ++i)
            out.push_back(order[static_cast<std::size_t>(i)]);
        if (static_cast<int>(out.size()) < slots) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            while (static_cast<int>(out.size()) < slots) out.push_back(pool[pick(rng)]);
        }
        return out;
    }

    BatchPlanOptions opt_;
    std::vector<int> live_;
    std::vector<int> spoof_;      // original (non-composite) spoof records
    std::vector<int> composite_;
};

inline BatchPlan balanced_batches(const CorpusIndex& index, int batch_size, std::uint64_t seed,
                                  double composite_fraction = 0.0) {
    return BatchPlan(index, BatchPlanOptions{batch_size, seed, composite_fraction});
}

}  // namespace megc
