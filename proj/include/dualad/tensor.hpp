#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dualad {

/// Dense rank-3 float tensor in channel-major (C x H x W) order.
///
/// Used both for network feature maps and, after conversion, network inputs.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  float& at(int c, int h, int w) { return data[(c * plane()) + static_cast<std::size_t>(h) * width + w]; }
  float at(int c, int h, int w) const { return data[(c * plane()) + static_cast<std::size_t>(h) * width + w]; }

  std::span<float> channel(int c) { return {data.data() + c * plane(), plane()}; }
  std::span<const float> channel(int c) const { return {data.data() + c * plane(), plane()}; }

  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  std::string shape_string() const;
};

/// Rank-2 spatial map (H x W), row-major, double precision.
struct Map2d {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Map2d() = default;
  Map2d(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int h, int w) { return values[static_cast<std::size_t>(h) * width + w]; }
  double at(int h, int w) const { return values[static_cast<std::size_t>(h) * width + w]; }
  bool empty() const { return values.empty(); }
};

}  // namespace dualad
