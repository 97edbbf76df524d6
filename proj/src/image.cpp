#include "backsplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace backsplat {

void Image::clamp01() {
  for (double& v : rgb) v = std::clamp(v, 0.0, 1.0);
  for (double& v : alpha) v = std::clamp(v, 0.0, 1.0);
}

double mean_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("mean_abs_diff: image shapes differ");
  }
  if (a.rgb.empty()) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < a.rgb.size(); ++i) s += std::abs(a.rgb[i] - b.rgb[i]);
  return s / static_cast<double>(a.rgb.size());
}

}  // namespace backsplat
