#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace nighthaze {

using Rgb = std::array<double, 3>;

/// Dense float raster with interleaved channels (row-major, HWC).
///
/// Values are expected to live in [0,1]; `validate()` checks that and the
/// producing algorithms clamp explicitly before handing images out.
template <int Channels>
class Image {
public:
    static constexpr int kChannels = Channels;

    Image() = default;
    Image(int height, int width, double fill = 0.0);
    Image(int height, int width, std::vector<double> data);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const { return data_.empty(); }

    double& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    template <int D>
    bool same_size(const Image<D>& other) const {
        return height_ == other.height() && width_ == other.width();
    }

    /// Throws FormatError if any element is non-finite or outside [0,1].
    void validate() const;
    Image& clamp01();

    bool operator==(const Image& other) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * Channels + c;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

using ImageRGB = Image<3>;
using ImageGray = Image<1>;

extern template class Image<1>;
extern template class Image<3>;

inline Rgb pixel(const ImageRGB& img, int y, int x) {
    return {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
}

/// Luminance as the plain channel mean; used wherever "Y" appears.
ImageGray channel_mean(const ImageRGB& img);
ImageGray channel_min(const ImageRGB& img);
ImageGray channel_max(const ImageRGB& img);

/// Replicates a single-channel raster into three channels.
ImageRGB to_rgb(const ImageGray& gray);

/// Integer-factor average pooling; height and width must be divisible.
template <int C>
Image<C> average_pool(const Image<C>& img, int factor);

/// Edge-replicating index clamp shared by every windowed filter.
inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace nighthaze
