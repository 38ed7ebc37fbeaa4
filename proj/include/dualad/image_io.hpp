#pragma once

#include <filesystem>
#include <vector>

#include "dualad/tensor.hpp"

namespace dualad {

/// Image tensor in height x width x channels order with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  bool same_shape(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Reads an 8-bit PNG. Grayscale sources (with or without alpha) load as one
/// channel, everything else as RGB.
Image read_png(const std::filesystem::path& path);

/// Writes 8-bit grayscale (1 channel) or RGB (3 channels), rounding to the nearest level.
void write_png(const std::filesystem::path& path, const Image& image);

/// Bilinear resampling with half-pixel centres.
Image resize_bilinear(const Image& image, int height, int width);

/// HWC image to the CHW layout the networks consume.
FeatureMap to_feature_map(const Image& image);

}  // namespace dualad
