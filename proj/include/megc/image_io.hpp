#pragma once

// PNG / JPEG file I/O.
//
// Corpus frames come in as 8-bit PNG or JPEG and are decoded to RGB in
// [0,1]. Cue maps are persisted as single-channel PNG: 16-bit with linear
// [0,1] <-> [0,65535] scaling for real-valued maps, 8-bit {0,255} for
// binary boundary maps.

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "megc/tensor.hpp"

namespace megc::io {

namespace detail {

struct FileHandle {
    FILE* f = nullptr;
    explicit FileHandle(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {}
    ~FileHandle() {
        if (f) std::fclose(f);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

// Raw interleaved rows, 8 or 16 bits per sample.
struct RawImage {
    int width = 0, height = 0, channels = 0, bit_depth = 8;
    std::vector<std::uint16_t> samples;  // row-major, interleaved
};

inline RawImage read_png_raw(const std::string& path) {
    FileHandle fh(path, "rb");
    require(fh.f != nullptr, ErrorCategory::io, "cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorCategory::io, "png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(ErrorCategory::io, "png_create_info_struct failed");
    }

    RawImage img;
    std::vector<png_bytep> row_ptrs;
    std::vector<png_byte> bytes;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCategory::io, "png decode failed for " + path);
    }

    png_init_io(png, fh.f);
    png_read_info(png, info);

    png_byte color_type = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    img.bit_depth = static_cast<int>(png_get_bit_depth(png, info));

    std::size_t row_bytes = png_get_rowbytes(png, info);
    bytes.resize(row_bytes * static_cast<std::size_t>(img.height));
    row_ptrs.resize(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) row_ptrs[static_cast<std::size_t>(y)] = bytes.data() + row_bytes * static_cast<std::size_t>(y);
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
    img.samples.resize(count);
    if (img.bit_depth == 16) {
        // PNG stores 16-bit samples big-endian.
        for (std::size_t i = 0; i < count; ++i)
            img.samples[i] = static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
    } else {
        for (std::size_t i = 0; i < count; ++i) img.samples[i] = bytes[i];
    }
    return img;
}

inline void write_png_raw(const std::string& path, const RawImage& img) {
    FileHandle fh(path, "wb");
    require(fh.f != nullptr, ErrorCategory::io, "cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorCategory::io, "png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        fail(ErrorCategory::io, "png_create_info_struct failed");
    }

    std::vector<png_byte> bytes;
    std::vector<png_bytep> row_ptrs;
    const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
    const int bytes_per_sample = img.bit_depth == 16 ? 2 : 1;
    bytes.resize(count * static_cast<std::size_t>(bytes_per_sample));
    if (img.bit_depth == 16) {
        for (std::size_t i = 0; i < count; ++i) {
            bytes[2 * i] = static_cast<png_byte>(img.samples[i] >> 8);
            bytes[2 * i + 1] = static_cast<png_byte>(img.samples[i] & 0xff);
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) bytes[i] = static_cast<png_byte>(img.samples[i] & 0xff);
    }
    std::size_t row_bytes = static_cast<std::size_t>(img.width) * img.channels * static_cast<std::size_t>(bytes_per_sample);
    row_ptrs.resize(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) row_ptrs[static_cast<std::size_t>(y)] = bytes.data() + row_bytes * static_cast<std::size_t>(y);

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCategory::io, "png encode failed for " + path);
    }

    png_init_io(png, fh.f);
    int color_type = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 img.bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

inline RawImage read_jpeg_raw(const std::string& path) {
    FileHandle fh(path, "rb");
    require(fh.f != nullptr, ErrorCategory::io, "cannot open " + path);

    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;

    RawImage img;
    std::vector<std::uint8_t> row;

    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        fail(ErrorCategory::io, "jpeg decode failed for " + path);
    }

    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fh.f);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    img.width = static_cast<int>(cinfo.output_width);
    img.height = static_cast<int>(cinfo.output_height);
    img.channels = 3;
    img.bit_depth = 8;
    img.samples.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    row.resize(static_cast<std::size_t>(img.width) * 3);
    JSAMPROW rowp = row.data();
    while (cinfo.output_scanline < cinfo.output_height) {
        int y = static_cast<int>(cinfo.output_scanline);
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (std::size_t i = 0; i < row.size(); ++i)
            img.samples[static_cast<std::size_t>(y) * img.width * 3 + i] = row[i];
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

inline bool has_png_signature(const std::string& path) {
    FileHandle fh(path, "rb");
    if (!fh.f) return false;
    unsigned char sig[8] = {};
    if (std::fread(sig, 1, 8, fh.f) != 8) return false;
    return png_sig_cmp(sig, 0, 8) == 0;
}

}  // namespace detail

// Decodes a PNG or JPEG file to a 1x3xHxW RGB tensor in [0,1].
// Grayscale sources are replicated across the three channels.
template <typename T = float>
Tensor<T> read_image_rgb(const std::string& path) {
    require(std::filesystem::exists(path), ErrorCategory::io, "no such image file: " + path);
    detail::RawImage raw =
        detail::has_png_signature(path) ? detail::read_png_raw(path) : detail::read_jpeg_raw(path);
    const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
    Tensor<T> out(1, 3, raw.height, raw.width);
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            std::size_t base = (static_cast<std::size_t>(y) * raw.width + x) * static_cast<std::size_t>(raw.channels);
            for (int j = 0; j < 3; ++j) {
                std::uint16_t s = raw.samples[base + static_cast<std::size_t>(raw.channels == 1 ? 0 : j)];
                out.at(0, j, y, x) = static_cast<T>(s / scale);
            }
        }
    }
    return out;
}

// Single-channel map from an 8- or 16-bit grayscale PNG, values in [0,1].
template <typename T = float>
Tensor<T> read_map_png(const std::string& path) {
    require(std::filesystem::exists(path), ErrorCategory::io, "no such map file: " + path);
    detail::RawImage raw = detail::read_png_raw(path);
    require(raw.channels == 1, ErrorCategory::io, "map file is not single-channel: " + path);
    const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
    Tensor<T> out(1, 1, raw.height, raw.width);
    for (std::size_t i = 0; i < raw.samples.size(); ++i) out[i] = static_cast<T>(raw.samples[i] / scale);
    return out;
}

template <typename T>
void write_image_rgb_png(const std::string& path, const Tensor<T>& rgb) {
    require(rgb.n() == 1 && rgb.c() == 3, ErrorCategory::shape, "write_image_rgb_png expects 1x3xHxW");
    detail::RawImage raw;
    raw.width = rgb.w();
    raw.height = rgb.h();
    raw.channels = 3;
    raw.bit_depth = 8;
    raw.samples.resize(static_cast<std::size_t>(raw.width) * raw.height * 3);
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            for (int j = 0; j < 3; ++j) {
                double v = std::clamp(static_cast<double>(rgb.at(0, j, y, x)), 0.0, 1.0);
                raw.samples[(static_cast<std::size_t>(y) * raw.width + x) * 3 + static_cast<std::size_t>(j)] =
                    static_cast<std::uint16_t>(std::lround(v * 255.0));
            }
    detail::write_png_raw(path, raw);
}

// Real-valued [0,1] map -> 16-bit grayscale PNG.
template <typename T>
void write_map_png16(const std::string& path, const Tensor<T>& map) {
    require(map.n() == 1 && map.c() == 1, ErrorCategory::shape, "write_map_png16 expects 1x1xHxW");
    detail::RawImage raw;
    raw.width = map.w();
    raw.height = map.h();
    raw.channels = 1;
    raw.bit_depth = 16;
    raw.samples.resize(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        double v = std::clamp(static_cast<double>(map[i]), 0.0, 1.0);
        raw.samples[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
    detail::write_png_raw(path, raw);
}

// Binary {0,1} map -> 8-bit grayscale PNG in {0,255}.
template <typename T>
void write_map_png8_binary(const std::string& path, const Tensor<T>& map) {
    require(map.n() == 1 && map.c() == 1, ErrorCategory::shape, "write_map_png8_binary expects 1x1xHxW");
    detail::RawImage raw;
    raw.width = map.w();
    raw.height = map.h();
    raw.channels = 1;
    raw.bit_depth = 8;
    raw.samples.resize(map.size());
    for (std::size_t i = 0; i < map.size(); ++i)
        raw.samples[i] = static_cast<double>(map[i]) >= 0.5 ? 255 : 0;
    detail::write_png_raw(path, raw);
}

}  // namespace megc::io
