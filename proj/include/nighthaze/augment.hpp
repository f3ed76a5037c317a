#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "nighthaze/image.hpp"

namespace nighthaze {

/// One element of the dihedral group of the square: `quarter_turns` counter-
/// clockwise rotations by 90 degrees, preceded by a horizontal flip if set.
struct Dihedral {
    int quarter_turns = 0;
    bool flip = false;

    bool operator==(const Dihedral&) const = default;
};

template <int C>
Image<C> apply_dihedral(const Image<C>& img, Dihedral t);

/// Maps a source coordinate through `t` for an image of the given size.
std::pair<int, int> dihedral_coordinate(int y, int x, int height, int width, Dihedral t);

Dihedral sample_dihedral(std::uint64_t seed);

struct CropOffset {
    int y = 0;
    int x = 0;
};

/// Offsets drawn uniformly (with overlap allowed) from a seeded generator.
/// Depends only on the image size, so paired images share offsets.
std::vector<CropOffset> crop_offsets(int height, int width, int crop, int count, std::uint64_t seed);

template <int C>
Image<C> crop(const Image<C>& img, CropOffset at, int size);

std::vector<ImageRGB> random_overlap_crops(const ImageRGB& img, int crop, int count, std::uint64_t seed);

/// Samples one of the eight rotation/flip combinations and applies it to
/// `img` and, when given, to `pair` as well.
std::pair<ImageRGB, std::optional<ImageRGB>> augment(const ImageRGB& img,
                                                     const std::optional<ImageRGB>& pair,
                                                     std::uint64_t seed);

}  // namespace nighthaze
