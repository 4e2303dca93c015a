#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gridsight/image.hpp"

namespace gridsight {

// Camera pitch simulated as a vertical pixel shift of round(fy * tan(theta)).
// Positive angles (nose-down) move image content up; vacated rows are filled
// by edge replication. Works for photometric and label images alike.
template <typename T>
Image<T> apply_pitch(const Image<T>& image, double fy, double degrees) {
  if (!(std::abs(degrees) < 45.0)) {
    throw std::invalid_argument("apply_pitch: |degrees| must be < 45");
  }
  const double theta = degrees * 3.14159265358979323846 / 180.0;
  const int shift = static_cast<int>(std::lround(fy * std::tan(theta)));
  Image<T> out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    const int src_y = std::clamp(y + shift, 0, image.height - 1);
    std::copy_n(&image.data[static_cast<std::size_t>(src_y) * image.width * image.channels],
                static_cast<std::size_t>(image.width) * image.channels,
                &out.data[static_cast<std::size_t>(y) * image.width * image.channels]);
  }
  return out;
}

// Camera roll simulated as an in-plane rotation about the image center.
// Photometric images sample bilinearly, label images nearest-neighbor;
// samples falling outside the source are edge-replicated.
template <typename T>
Image<T> apply_roll(const Image<T>& image, double degrees, Interp interp) {
  if (!(std::abs(degrees) <= 90.0)) {
    throw std::invalid_argument("apply_roll: |degrees| must be <= 90");
  }
  const double theta = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cx = (image.width - 1) / 2.0;
  const double cy = (image.height - 1) / 2.0;
  Image<T> out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      // Inverse rotation of the output coordinate into the source.
      const double dx = x - cx, dy = y - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      if (interp == Interp::kNearest) {
        const int ix = std::clamp(static_cast<int>(std::lround(sx)), 0, image.width - 1);
        const int iy = std::clamp(static_cast<int>(std::lround(sy)), 0, image.height - 1);
        for (int ch = 0; ch < image.channels; ++ch) out.at(y, x, ch) = image.at(iy, ix, ch);
      } else {
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double wx = sx - x0, wy = sy - y0;
        const int x0c = std::clamp(x0, 0, image.width - 1);
        const int x1c = std::clamp(x0 + 1, 0, image.width - 1);
        const int y0c = std::clamp(y0, 0, image.height - 1);
        const int y1c = std::clamp(y0 + 1, 0, image.height - 1);
        for (int ch = 0; ch < image.channels; ++ch) {
          const double v =
              (1 - wy) * ((1 - wx) * image.at(y0c, x0c, ch) + wx * image.at(y0c, x1c, ch)) +
              wy * ((1 - wx) * image.at(y1c, x0c, ch) + wx * image.at(y1c, x1c, ch));
          if constexpr (std::is_integral_v<T>) {
            out.at(y, x, ch) = static_cast<T>(std::lround(v));
          } else {
            out.at(y, x, ch) = static_cast<T>(v);
          }
        }
      }
    }
  }
  return out;
}

}  // namespace gridsight
