#pragma once

#include "deblurkit/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dbk {

/// Planar CHW float image with values in [0, 1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    std::int64_t plane() const { return static_cast<std::int64_t>(height) * width; }
    float& at(int c, int y, int x) {
        return data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * height + y) * width + x)];
    }
    float at(int c, int y, int x) const {
        return data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * height + y) * width + x)];
    }
};

Image make_image(int channels, int height, int width, float fill = 0.0f);

/// Decodes an 8-bit PNG as RGB in [0, 1] (gray/palette/alpha are converted).
Image read_png(const std::filesystem::path& path);

/// Clamps to [0, 1], quantizes with round(v * 255) and writes an 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const Image& img);

/// [c,h,w] image -> [1,c,h,w] tensor.
Tensor image_to_tensor(const Image& img);
/// [1,c,h,w] tensor -> image (values are copied verbatim, no clamping).
Image tensor_to_image(const Tensor& t);

} // namespace dbk
