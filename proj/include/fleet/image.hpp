#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fleet/tensor.hpp"

namespace fleet {

// Axis-aligned pixel box, origin top-left, half-open in spirit: a box
// (x0,y0,x1,y1) covers [x0,x1) x [y0,y1). Coordinates may be fractional
// after affine transforms.
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool valid() const { return x0 < x1 && y0 < y1; }
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double center_x() const { return 0.5 * (x0 + x1); }
    double center_y() const { return 0.5 * (y0 + y1); }

    bool operator==(const Box&) const = default;
};

// 8-bit grayscale image.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const Image&) const = default;
};

// Binary PGM ("P5"), maxval 255.
void write_pgm(const Image& img, const std::string& path);
Image read_pgm(const std::string& path);

// Crops `src` to `crop` and resizes to target_w x target_h with bilinear
// sampling (half-pixel centers, so a full-frame same-size crop is the
// identity bit-for-bit). Throws on a degenerate or non-intersecting box.
Image crop_and_resize(const Image& src, const Box& crop, int target_w, int target_h);

// Maps a box through the same affine transform crop_and_resize applies,
// clamped to the target frame.
Box transform_box(const Box& b, const Box& crop, int target_w, int target_h);

// Image -> tensor in [-1, 1], shape {channels=1, H, W}.
template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    std::vector<T> data(img.pixels.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<T>(img.pixels[i]) / T(127.5) - T(1);
    return Tensor<T>::from_data(
        {1, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)},
        std::move(data));
}

}  // namespace fleet
