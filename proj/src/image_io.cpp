#include "nighthaze/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "nighthaze/error.hpp"

namespace nighthaze {

namespace {

std::uint8_t quantize(double v) {
    const double s = std::round((std::isnan(v) ? 0.0 : v) * 255.0);
    return static_cast<std::uint8_t>(s < 0.0 ? 0.0 : (s > 255.0 ? 255.0 : s));
}

void write_png(const std::filesystem::path& path, int height, int width, std::uint32_t format,
               const std::vector<std::uint8_t>& bytes) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError("cannot write " + path.string() + ": " + msg);
    }
}

}  // namespace

ImageRGB load_image(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw NotFoundError("no such image file: " + path.string());
    }
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw FormatError("cannot decode " + path.string() + ": " + image.message);
    }
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw FormatError("only 8-bit PNG is supported: " + path.string());
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("cannot decode " + path.string() + ": " + msg);
    }
    const int h = static_cast<int>(image.height);
    const int w = static_cast<int>(image.width);
    std::vector<double> data(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] / 255.0;
    return ImageRGB(h, w, std::move(data));
}

void save_image(const ImageRGB& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(img.data().size());
    auto src = img.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize(src[i]);
    write_png(path, img.height(), img.width(), PNG_FORMAT_RGB, bytes);
}

void save_gray(const ImageGray& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(img.data().size());
    auto src = img.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize(src[i]);
    write_png(path, img.height(), img.width(), PNG_FORMAT_GRAY, bytes);
}

}  // namespace nighthaze
