#pragma once

#include <filesystem>

#include "nighthaze/image.hpp"

namespace nighthaze {

/// Decodes an 8-bit PNG (gray, gray+alpha, palette, RGB or RGBA) into RGB in
/// [0,1], mapping each byte v to v/255. Alpha is dropped.
ImageRGB load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are rounded to the nearest of 256 levels.
void save_image(const ImageRGB& img, const std::filesystem::path& path);

/// Writes an 8-bit single-channel PNG (debug dumps of prior maps).
void save_gray(const ImageGray& img, const std::filesystem::path& path);

}  // namespace nighthaze
