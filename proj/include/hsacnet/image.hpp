#pragma once
// 8-bit PNG I/O (libpng) and conversions to the [0,1] float CHW tensors the
// network consumes.

#include <png.h>

#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "hsacnet/tensor.hpp"

namespace hsacnet {

struct ImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ImageU8 {
    int64_t h = 0, w = 0, channels = 0;
    std::vector<uint8_t> data;  // row-major, interleaved

    ImageU8() = default;
    ImageU8(int64_t hh, int64_t ww, int64_t cc)
        : h(hh), w(ww), channels(cc), data(static_cast<size_t>(hh * ww * cc), 0) {}

    uint8_t& at(int64_t y, int64_t x, int64_t c) { return data[static_cast<size_t>((y * w + x) * channels + c)]; }
    uint8_t at(int64_t y, int64_t x, int64_t c) const {
        return data[static_cast<size_t>((y * w + x) * channels + c)];
    }
};

// Decodes to 8-bit gray or RGB; palette and 16-bit inputs are expanded,
// alpha is stripped.
inline ImageU8 read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ImageError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw ImageError("libpng init failed");
    }
    ImageU8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ImageError("undecodable png: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_strip_16(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int64_t channels = png_get_channels(png, info);

    img.h = h;
    img.w = w;
    img.channels = channels;
    img.data.assign(static_cast<size_t>(img.h * img.w * channels), 0);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.data.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

// Header-only probe: (h, w, channels) without decoding pixel data.
inline std::array<int64_t, 3> read_png_size(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ImageError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw ImageError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ImageError("undecodable png: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    std::array<int64_t, 3> out{png_get_image_height(png, info), png_get_image_width(png, info),
                               png_get_channels(png, info)};
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

inline void write_png(const std::string& path, const ImageU8& img) {
    check(img.channels == 1 || img.channels == 3, "write_png: only gray or RGB images");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw ImageError("cannot open image for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw ImageError("libpng init failed");
    }
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw ImageError("png write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < img.h; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<png_bytep>(img.data.data() + static_cast<size_t>(y) * img.w * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// 3-channel image to (3,H,W) float in [0,1].
template <class T>
Tensor<T> image_to_chw(const ImageU8& img) {
    check(img.channels == 3, "image_to_chw: expected a 3-channel image");
    Tensor<T> t({3, img.h, img.w});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) t[(c * img.h + y) * img.w + x] = T(img.at(y, x, c)) / T(255);
    return t;
}

template <class T>
ImageU8 chw_to_image(const Tensor<T>& t) {
    check(t.shape.size() == 3 && t.shape[0] == 3, "chw_to_image: expected (3,H,W)");
    ImageU8 img(t.shape[1], t.shape[2], 3);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) {
                T v = t[(c * img.h + y) * img.w + x];
                v = std::min(T(1), std::max(T(0), v));
                img.at(y, x, c) = static_cast<uint8_t>(std::lround(double(v) * 255.0));
            }
    return img;
}

// Gray mask image to a {0,1} map; stored values scale to [0,1] and binarize
// at 0.5, so both {0,255} and {0,1} encodings work.
inline Tensor<uint8_t> image_to_mask(const ImageU8& img) {
    check(img.channels == 1, "image_to_mask: expected a 1-channel image");
    Tensor<uint8_t> m({img.h, img.w});
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) m[y * img.w + x] = (img.at(y, x, 0) / 255.0 > 0.5) ? 1 : 0;
    return m;
}

inline ImageU8 mask_to_image(const Tensor<uint8_t>& m) {
    check(m.shape.size() == 2, "mask_to_image: expected (H,W)");
    ImageU8 img(m.shape[0], m.shape[1], 1);
    for (int64_t i = 0; i < m.numel(); ++i) img.data[static_cast<size_t>(i)] = m[i] ? 255 : 0;
    return img;
}

}  // namespace hsacnet
