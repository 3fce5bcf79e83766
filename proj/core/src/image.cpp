#include "deblurkit/image.hpp"

#include "deblurkit/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dbk {

Image make_image(int channels, int height, int width, float fill) {
    if (channels < 1 || height < 1 || width < 1)
        throw ContractError("make_image: non-positive dimensions");
    Image img;
    img.channels = channels;
    img.height = height;
    img.width = width;
    img.data.assign(static_cast<std::size_t>(channels) * height * width, fill);
    return img;
}

Image read_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str()))
        throw IoError("read_png: cannot open " + path.string() + ": " + png.message);
    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> interleaved(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, interleaved.data(), 0, nullptr)) {
        png_image_free(&png);
        throw IoError("read_png: decode failed for " + path.string() + ": " + png.message);
    }
    Image img = make_image(3, static_cast<int>(png.height), static_cast<int>(png.width));
    const std::int64_t plane = img.plane();
    for (std::int64_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c)
            img.data[static_cast<std::size_t>(c * plane + i)] =
                static_cast<float>(interleaved[static_cast<std::size_t>(3 * i + c)]) / 255.0f;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 3)
        throw ContractError("write_png: expected 3 channels, got " +
                            std::to_string(img.channels));
    const std::int64_t plane = img.plane();
    std::vector<std::uint8_t> interleaved(static_cast<std::size_t>(plane) * 3);
    for (std::int64_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(img.data[static_cast<std::size_t>(c * plane + i)],
                                       0.0f, 1.0f);
            interleaved[static_cast<std::size_t>(3 * i + c)] =
                static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, interleaved.data(), 0,
                                 nullptr))
        throw IoError("write_png: cannot write " + path.string() + ": " + png.message);
}

Tensor image_to_tensor(const Image& img) {
    return Tensor::from_data(img.data, {1, img.channels, img.height, img.width});
}

Image tensor_to_image(const Tensor& t) {
    const TensorShape s = t.shape();
    if (s.n != 1) throw ContractError("tensor_to_image: batch must be 1, got " + s.str());
    Image img = make_image(s.c, s.h, s.w);
    std::copy(t.data().begin(), t.data().end(), img.data.begin());
    return img;
}

} // namespace dbk
