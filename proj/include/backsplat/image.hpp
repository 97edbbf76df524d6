#pragma once

#include <vector>

namespace backsplat {

/// Row-major RGB + alpha raster with double precision channels in [0,1].
/// rgb has height*width*3 entries, alpha has height*width.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;
  std::vector<double> alpha;

  Image() = default;
  Image(int w, int h, double fill = 0.0, double alpha_fill = 0.0)
      : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, fill),
        alpha(static_cast<size_t>(w) * h, alpha_fill) {}

  size_t pixel_count() const { return static_cast<size_t>(width) * height; }

  double& at(int x, int y, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double& alpha_at(int x, int y) { return alpha[static_cast<size_t>(y) * width + x]; }
  double alpha_at(int x, int y) const { return alpha[static_cast<size_t>(y) * width + x]; }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }

  /// Clamps rgb and alpha into [0,1] in place (used before 8-bit output).
  void clamp01();
};

/// Mean absolute rgb difference. Throws std::invalid_argument on shape mismatch.
double mean_abs_diff(const Image& a, const Image& b);

}  // namespace backsplat
