#include "nighthaze/augment.hpp"

#include <random>

#include "nighthaze/error.hpp"

namespace nighthaze {

std::pair<int, int> dihedral_coordinate(int y, int x, int height, int width, Dihedral t) {
    if (t.flip) x = width - 1 - x;
    const int turns = ((t.quarter_turns % 4) + 4) % 4;
    for (int i = 0; i < turns; ++i) {
        // counter-clockwise quarter turn: (y, x) in HxW -> (W-1-x, y) in WxH
        const int ny = width - 1 - x;
        const int nx = y;
        y = ny;
        x = nx;
        std::swap(height, width);
    }
    return {y, x};
}

template <int C>
Image<C> apply_dihedral(const Image<C>& img, Dihedral t) {
    const bool swap = (((t.quarter_turns % 4) + 4) % 4) % 2 == 1;
    Image<C> out(swap ? img.width() : img.height(), swap ? img.height() : img.width());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            auto [ty, tx] = dihedral_coordinate(y, x, img.height(), img.width(), t);
            for (int c = 0; c < C; ++c) out.at(ty, tx, c) = img.at(y, x, c);
        }
    }
    return out;
}

template Image<1> apply_dihedral(const Image<1>&, Dihedral);
template Image<3> apply_dihedral(const Image<3>&, Dihedral);

Dihedral sample_dihedral(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> turns(0, 3);
    std::uniform_int_distribution<int> flip(0, 1);
    Dihedral t;
    t.quarter_turns = turns(rng);
    t.flip = flip(rng) == 1;
    return t;
}

std::vector<CropOffset> crop_offsets(int height, int width, int crop, int count, std::uint64_t seed) {
    if (crop < 1 || count < 1) throw ParameterError("crop size and count must be positive");
    if (crop > height || crop > width) {
        throw DimensionError("crop " + std::to_string(crop) + " larger than image " +
                             std::to_string(height) + "x" + std::to_string(width));
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> oy(0, height - crop);
    std::uniform_int_distribution<int> ox(0, width - crop);
    std::vector<CropOffset> offsets(static_cast<std::size_t>(count));
    for (auto& o : offsets) {
        o.y = oy(rng);
        o.x = ox(rng);
    }
    return offsets;
}

template <int C>
Image<C> crop(const Image<C>& img, CropOffset at, int size) {
    if (at.y < 0 || at.x < 0 || at.y + size > img.height() || at.x + size > img.width()) {
        throw DimensionError("crop window outside the image");
    }
    Image<C> out(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < C; ++c) out.at(y, x, c) = img.at(at.y + y, at.x + x, c);
        }
    }
    return out;
}

template Image<1> crop(const Image<1>&, CropOffset, int);
template Image<3> crop(const Image<3>&, CropOffset, int);

std::vector<ImageRGB> random_overlap_crops(const ImageRGB& img, int crop_size, int count, std::uint64_t seed) {
    std::vector<ImageRGB> crops;
    for (const auto& o : crop_offsets(img.height(), img.width(), crop_size, count, seed)) {
        crops.push_back(crop(img, o, crop_size));
    }
    return crops;
}

std::pair<ImageRGB, std::optional<ImageRGB>> augment(const ImageRGB& img,
                                                     const std::optional<ImageRGB>& pair,
                                                     std::uint64_t seed) {
    if (pair && !pair->same_size(img)) {
        throw DimensionError("augment: paired images differ in size");
    }
    const Dihedral t = sample_dihedral(seed);
    std::optional<ImageRGB> out_pair;
    if (pair) out_pair = apply_dihedral(*pair, t);
    return {apply_dihedral(img, t), std::move(out_pair)};
}

}  // namespace nighthaze
