#pragma once

#include <Eigen/SparseCore>

#include "nighthaze/image.hpp"

namespace nighthaze {

inline constexpr double kTransmissionFloor = 0.05;  // t_min
inline constexpr double kDefaultOmega = 0.95;
inline constexpr double kAirlightFraction = 0.001;
inline constexpr int kDeskPriorPatch = 5;
inline constexpr int kFullPriorPatch = 15;

struct PriorMaps {
    ImageGray dark;
    ImageGray bright;
    int patch = kDeskPriorPatch;
};

struct AtmosphericLight {
    Rgb a{1.0, 1.0, 1.0};

    double max_component() const;
};

/// Sliding-window minimum / maximum of a single-channel raster with edge
/// replication at the borders. `patch` must be odd.
ImageGray min_filter(const ImageGray& src, int patch);
ImageGray max_filter(const ImageGray& src, int patch);

ImageGray dark_channel(const ImageRGB& img, int patch);
ImageGray bright_channel(const ImageRGB& img, int patch);
PriorMaps compute_priors(const ImageRGB& img, int patch);

/// Per-channel mean of the source over the brightest `fraction` of
/// dark-channel pixels (at least one pixel is always selected).
AtmosphericLight estimate_atmospheric_light(const ImageRGB& img, int patch, double fraction = kAirlightFraction);

/// t = 1 - omega * dark_channel(I / a), clamped to [t_min, 1].
ImageGray dcp_transmission(const ImageRGB& img, const AtmosphericLight& a, int patch,
                           double omega = kDefaultOmega, double t_min = kTransmissionFloor);

/// t = (bright_channel(I) - max(a)) / (1 - max(a)), clamped to [t_min, 1];
/// falls back to t = 1 when max(a) is within 1e-6 of 1.
ImageGray bcp_transmission(const ImageRGB& img, const AtmosphericLight& a, int patch,
                           double t_min = kTransmissionFloor);

/// Soft-matting Laplacian over all `window`x`window` windows fully inside the
/// image. Pixel index is y * width + x.
struct MattingLaplacian {
    int height = 0;
    int width = 0;
    int window = 3;
    double epsilon = 1e-7;
    Eigen::SparseMatrix<double> matrix;

    int n() const { return height * width; }
    double quadratic_form(std::span<const double> t) const;
};

inline constexpr int kMaxLaplacianPixels = 64 * 64;

MattingLaplacian build_matting_laplacian(const ImageRGB& img, int window = 3, double epsilon = 1e-7,
                                         int max_pixels = kMaxLaplacianPixels);

/// Mean over the (2r+1)^2 window, truncated to the pixels inside the image.
ImageGray box_mean(const ImageGray& src, int radius);

/// Color-guided filter; output clamped to [0,1].
ImageGray guided_filter(const ImageRGB& guide, const ImageGray& src, int radius, double eps);

}  // namespace nighthaze
