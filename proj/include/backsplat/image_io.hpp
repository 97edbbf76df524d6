#pragma once

#include <string>

#include "backsplat/image.hpp"

namespace backsplat {

/// Writes an 8-bit RGBA PNG; values are clamped to [0,1] and rounded.
void save_png(const Image& img, const std::string& path);

/// Reads an 8-bit PNG (gray/palette/rgb, with or without alpha).
Image load_png(const std::string& path);

/// Reads a P3 or P6 PPM with maxval 255 (alpha set to 1).
Image load_ppm(const std::string& path);

/// Dispatches on extension: .png / .ppm.
Image load_image(const std::string& path);

}  // namespace backsplat
