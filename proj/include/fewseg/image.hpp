#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace fewseg {

// RGB image, double channels in [0,1], row-major, interleaved.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<double> pix; // h*w*3

    Image() = default;
    Image(int h_, int w_, double fill = 0.0)
        : h(h_), w(w_), pix(static_cast<std::size_t>(h_) * w_ * 3, fill) {}

    double& at(int y, int x, int c) {
        return pix[(static_cast<std::size_t>(y) * w + x) * 3 + c];
    }
    double at(int y, int x, int c) const {
        return pix[(static_cast<std::size_t>(y) * w + x) * 3 + c];
    }
};

// Binary mask, values in {0,1}.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> v; // h*w

    Mask() = default;
    Mask(int h_, int w_, std::uint8_t fill = 0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t count() const;
};

// Mask as an H x W double matrix (row-major pixel order preserved).
Eigen::MatrixXd mask_to_matrix(const Mask& m);
Mask matrix_to_mask(const Eigen::MatrixXd& m, double threshold = 0.5);

// Clamp channels to the 8-bit grid so PNG round trips are lossless.
void quantize_image(Image& img);

// PNG I/O (8-bit RGB for images, 8-bit gray for masks; mask pixels 0/255).
void write_png_rgb(const std::string& path, const Image& img);
Image read_png_rgb(const std::string& path);
void write_png_gray(const std::string& path, const std::vector<std::uint8_t>& gray,
                    int h, int w);
std::vector<std::uint8_t> read_png_gray(const std::string& path, int& h, int& w);

void write_mask_png(const std::string& path, const Mask& m);
Mask read_mask_png(const std::string& path);

} // namespace fewseg
