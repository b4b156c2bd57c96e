#include "fewseg/image.hpp"

#include "fewseg/common.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace fewseg {

std::size_t Mask::count() const {
    std::size_t n = 0;
    for (auto b : v) n += b ? 1 : 0;
    return n;
}

Eigen::MatrixXd mask_to_matrix(const Mask& m) {
    Eigen::MatrixXd out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) out(y, x) = m.at(y, x) ? 1.0 : 0.0;
    return out;
}

Mask matrix_to_mask(const Eigen::MatrixXd& m, double threshold) {
    Mask out(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.at(y, x) = m(y, x) > threshold ? 1 : 0;
    return out;
}

void quantize_image(Image& img) {
    for (auto& v : img.pix) {
        double c = std::min(1.0, std::max(0.0, v));
        v = std::round(c * 255.0) / 255.0;
    }
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::string& path, const std::uint8_t* data, int h, int w,
               int color_type, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(data + static_cast<std::size_t>(y) * w * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png(const std::string& path, int& h, int& w,
                                   int want_color_type, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw FormatError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("malformed PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    w = static_cast<int>(png_get_image_width(png, info));
    h = static_cast<int>(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (want_color_type == PNG_COLOR_TYPE_RGB) {
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    } else { // gray
        if (color_type == PNG_COLOR_TYPE_RGB || color_type == PNG_COLOR_TYPE_RGB_ALPHA)
            png_set_rgb_to_gray_fixed(png, 1, -1, -1);
        if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(h) * w * channels);
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] = data.data() + static_cast<std::size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return data;
}

} // namespace

void write_png_rgb(const std::string& path, const Image& img) {
    std::vector<std::uint8_t> bytes(img.pix.size());
    for (std::size_t i = 0; i < img.pix.size(); ++i) {
        double c = std::min(1.0, std::max(0.0, img.pix[i]));
        bytes[i] = static_cast<std::uint8_t>(std::lround(c * 255.0));
    }
    write_png(path, bytes.data(), img.h, img.w, PNG_COLOR_TYPE_RGB, 3);
}

Image read_png_rgb(const std::string& path) {
    int h = 0, w = 0;
    auto bytes = read_png(path, h, w, PNG_COLOR_TYPE_RGB, 3);
    Image img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img.pix[i] = static_cast<double>(bytes[i]) / 255.0;
    return img;
}

void write_png_gray(const std::string& path, const std::vector<std::uint8_t>& gray,
                    int h, int w) {
    if (gray.size() != static_cast<std::size_t>(h) * w)
        throw ShapeError("write_png_gray: buffer size mismatch");
    write_png(path, gray.data(), h, w, PNG_COLOR_TYPE_GRAY, 1);
}

std::vector<std::uint8_t> read_png_gray(const std::string& path, int& h, int& w) {
    return read_png(path, h, w, PNG_COLOR_TYPE_GRAY, 1);
}

void write_mask_png(const std::string& path, const Mask& m) {
    std::vector<std::uint8_t> gray(m.v.size());
    for (std::size_t i = 0; i < m.v.size(); ++i) gray[i] = m.v[i] ? 255 : 0;
    write_png_gray(path, gray, m.h, m.w);
}

Mask read_mask_png(const std::string& path) {
    int h = 0, w = 0;
    auto gray = read_png_gray(path, h, w);
    Mask m(h, w);
    for (std::size_t i = 0; i < gray.size(); ++i) m.v[i] = gray[i] >= 128 ? 1 : 0;
    return m;
}

} // namespace fewseg
