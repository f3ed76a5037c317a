#include "nighthaze/image.hpp"

#include <algorithm>
#include <cmath>

#include "nighthaze/error.hpp"

namespace nighthaze {

template <int C>
Image<C>::Image(int height, int width, double fill) : height_(height), width_(width) {
    if (height < 1 || width < 1) {
        throw DimensionError("image dimensions must be positive, got " + std::to_string(height) +
                             "x" + std::to_string(width));
    }
    data_.assign(static_cast<std::size_t>(height) * width * C, fill);
}

template <int C>
Image<C>::Image(int height, int width, std::vector<double> data) : height_(height), width_(width) {
    if (height < 1 || width < 1) {
        throw DimensionError("image dimensions must be positive");
    }
    if (data.size() != static_cast<std::size_t>(height) * width * C) {
        throw DimensionError("raster size does not match " + std::to_string(height) + "x" +
                             std::to_string(width) + "x" + std::to_string(C));
    }
    data_ = std::move(data);
}

template <int C>
void Image<C>::validate() const {
    for (double v : data_) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw FormatError("image value outside [0,1]: " + std::to_string(v));
        }
    }
}

template <int C>
Image<C>& Image<C>::clamp01() {
    for (double& v : data_) {
        v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    }
    return *this;
}

template class Image<1>;
template class Image<3>;

namespace {

template <typename Reduce>
ImageGray reduce_channels(const ImageRGB& img, Reduce reduce) {
    ImageGray out(img.height(), img.width());
    auto src = img.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = reduce(src[3 * i], src[3 * i + 1], src[3 * i + 2]);
    }
    return out;
}

}  // namespace

ImageGray channel_mean(const ImageRGB& img) {
    return reduce_channels(img, [](double r, double g, double b) { return (r + g + b) / 3.0; });
}

ImageGray channel_min(const ImageRGB& img) {
    return reduce_channels(img, [](double r, double g, double b) { return std::min({r, g, b}); });
}

ImageGray channel_max(const ImageRGB& img) {
    return reduce_channels(img, [](double r, double g, double b) { return std::max({r, g, b}); });
}

ImageRGB to_rgb(const ImageGray& gray) {
    ImageRGB out(gray.height(), gray.width());
    auto src = gray.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[3 * i] = dst[3 * i + 1] = dst[3 * i + 2] = src[i];
    }
    return out;
}

template <int C>
Image<C> average_pool(const Image<C>& img, int factor) {
    if (factor < 1 || img.height() % factor != 0 || img.width() % factor != 0) {
        throw DimensionError("average_pool factor must divide the image dimensions");
    }
    if (factor == 1) return img;
    Image<C> out(img.height() / factor, img.width() / factor);
    const double norm = 1.0 / (factor * factor);
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            for (int c = 0; c < C; ++c) {
                double sum = 0.0;
                for (int dy = 0; dy < factor; ++dy) {
                    for (int dx = 0; dx < factor; ++dx) {
                        sum += img.at(y * factor + dy, x * factor + dx, c);
                    }
                }
                out.at(y, x, c) = sum * norm;
            }
        }
    }
    return out;
}

template Image<1> average_pool(const Image<1>&, int);
template Image<3> average_pool(const Image<3>&, int);

}  // namespace nighthaze
