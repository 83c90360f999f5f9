#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "attriq/errors.hpp"

namespace attriq {

// H x W x C raster, channel values in [0,1], row-major (y, x, c).
// Encoder inputs and all distortion kernels operate on this unit.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  static Image create(int h, int w, int c, double fill = 0.0) {
    if (h <= 0 || w <= 0 || (c != 1 && c != 3))
      throw ConfigError("image dims must be positive with 1 or 3 channels, got " +
                        std::to_string(h) + "x" + std::to_string(w) + "x" +
                        std::to_string(c));
    Image img;
    img.height = h;
    img.width = w;
    img.channels = c;
    img.data.assign(static_cast<std::size_t>(h) * w * c, fill);
    return img;
  }

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }
  std::size_t size() const { return data.size(); }

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_dims(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Minimum extent accepted from loaders; encoder patching needs it.
inline constexpr int kMinImageExtent = 16;

inline void require_min_extent(const Image& img, const std::string& what) {
  if (img.height < kMinImageExtent || img.width < kMinImageExtent)
    throw DataError(what + ": image " + std::to_string(img.height) + "x" +
                    std::to_string(img.width) + " below minimum extent " +
                    std::to_string(kMinImageExtent));
}

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Center-crop to square then bilinear-resize. Deterministic.
inline Image crop_resize(const Image& src, int target) {
  int side = std::min(src.height, src.width);
  int y0 = (src.height - side) / 2;
  int x0 = (src.width - side) / 2;
  if (side == target && src.height == src.width) return src;
  Image out = Image::create(target, target, src.channels);
  double scale = static_cast<double>(side) / target;
  for (int y = 0; y < target; ++y) {
    double sy = (y + 0.5) * scale - 0.5 + y0;
    int iy = static_cast<int>(std::floor(sy));
    double fy = sy - iy;
    int y1 = std::clamp(iy, 0, src.height - 1);
    int y2 = std::clamp(iy + 1, 0, src.height - 1);
    for (int x = 0; x < target; ++x) {
      double sx = (x + 0.5) * scale - 0.5 + x0;
      int ix = static_cast<int>(std::floor(sx));
      double fx = sx - ix;
      int x1 = std::clamp(ix, 0, src.width - 1);
      int x2 = std::clamp(ix + 1, 0, src.width - 1);
      for (int c = 0; c < src.channels; ++c) {
        double top = src.at(y1, x1, c) * (1 - fx) + src.at(y1, x2, c) * fx;
        double bot = src.at(y2, x1, c) * (1 - fx) + src.at(y2, x2, c) * fx;
        out.at(y, x, c) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

}  // namespace attriq
