#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uidsc/tensor.hpp"

namespace uidsc {

/// Height x width x channels array in row-major HWC order. Colour images hold
/// values in [0, 1]; masks have one channel with values in {0, 1}.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0);

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool same_geometry(const Image& other) const {
        return height == other.height && width == other.width;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

using Mask = Image;

/// Pixel count with value >= 0.5 in a one-channel mask.
std::size_t mask_area(const Mask& mask);

/// (1, C, H, W) tensor from an HWC image.
Tensor to_tensor(const Image& image);
/// Stacks images of equal geometry into (N, C, H, W).
Tensor to_batch(const std::vector<Image>& images);
/// HWC image from sample `n` of an NCHW tensor.
Image from_tensor(const Tensor& tensor, int n = 0);

/// Zero-pads bottom/right to (height, width) or crops the top-left region.
Image resize_canvas(const Image& image, int height, int width);

/// Loads an 8-bit image (any format OpenCV decodes) as RGB in [0, 1], or as a
/// one-channel mask thresholded at 128 when `channels` is 1.
Image load_image(const std::filesystem::path& path, int channels = 3);
/// Writes an 8-bit lossless PNG (values rounded from [0, 1]).
void save_png(const std::filesystem::path& path, const Image& image);
/// Encodes as PNG bytes.
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_image(const std::vector<std::uint8_t>& bytes, int channels = 3);

/// Rounds to the 8-bit grid, as storage does.
Image quantize8(const Image& image);

}  // namespace uidsc
