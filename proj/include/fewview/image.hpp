#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fewview/error.hpp"

namespace fewview {

/// Row-major interleaved image with values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c = 3, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image& o) const noexcept {
        return width == o.width && height == o.height && channels == o.channels;
    }

    double& at(int row, int col, int ch) { return data[(static_cast<std::size_t>(row) * width + col) * channels + ch]; }
    double at(int row, int col, int ch) const {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }

    Eigen::Vector3d rgb(int row, int col) const {
        if (channels == 1) return Eigen::Vector3d::Constant(at(row, col, 0));
        return {at(row, col, 0), at(row, col, 1), at(row, col, 2)};
    }
    void set_rgb(int row, int col, const Eigen::Vector3d& v) {
        for (int c = 0; c < channels; ++c) at(row, col, c) = v[c];
    }

    /// 0.299 R + 0.587 G + 0.114 B
    double luminance(int row, int col) const {
        if (channels == 1) return at(row, col, 0);
        return 0.299 * at(row, col, 0) + 0.587 * at(row, col, 1) + 0.114 * at(row, col, 2);
    }
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
    auto* message = static_cast<std::string*>(png_get_error_ptr(png));
    if (message) *message = msg;
    png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads an 8- or 16-bit PNG as RGB (or single-channel for grey images).
inline Image read_png(const std::filesystem::path& path) {
    detail::FilePtr file(std::fopen(path.string().c_str(), "rb"));
    if (!file) throw DataError("cannot open image '" + path.string() + "'");
    std::string message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, detail::png_fail, detail::png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng initialisation failed");
    }
    Image img;
    std::vector<unsigned char> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to read '" + path.string() + "': " + message);
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // little-endian samples
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = buffer.data() + r * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img = Image(static_cast<int>(w), static_cast<int>(h), channels == 1 ? 1 : 3);
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (png_uint_32 r = 0; r < h; ++r) {
        for (png_uint_32 c = 0; c < w; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) {
                const std::size_t idx = static_cast<std::size_t>(c) * channels + ch;
                double v = 0.0;
                if (depth == 16) {
                    const auto* p = reinterpret_cast<const std::uint16_t*>(rows[r]);
                    v = p[idx];
                } else {
                    v = rows[r][idx];
                }
                img.at(static_cast<int>(r), static_cast<int>(c), ch) = v / scale;
            }
        }
    }
    return img;
}

/// Writes an image as PNG with values clamped to [0, 1]. Output bytes are a
/// pure function of the pixel values (no timestamps or text chunks).
inline void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 16) {
    if (bit_depth != 8 && bit_depth != 16) throw ConfigError("write_png: bit depth must be 8 or 16");
    detail::FilePtr file(std::fopen(path.string().c_str(), "wb"));
    if (!file) throw DataError("cannot write image '" + path.string() + "'");
    std::string message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, detail::png_fail, detail::png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialisation failed");
    }
    const int bytes = bit_depth / 8;
    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels * bytes;
    std::vector<unsigned char> buffer(stride * img.height);
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            for (int ch = 0; ch < img.channels; ++ch) {
                const double v = std::clamp(img.at(r, c, ch), 0.0, 1.0);
                const auto q = static_cast<unsigned>(std::lround(v * scale));
                unsigned char* dst = buffer.data() + r * stride + (static_cast<std::size_t>(c) * img.channels + ch) * bytes;
                if (bit_depth == 16) {
                    dst[0] = static_cast<unsigned char>(q >> 8);
                    dst[1] = static_cast<unsigned char>(q & 0xff);
                } else {
                    dst[0] = static_cast<unsigned char>(q);
                }
            }
        }
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = buffer.data() + r * stride;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed to write '" + path.string() + "': " + message);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), bit_depth,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace fewview
