#include "dualad/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>

#include "dualad/error.hpp"

namespace dualad {

Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorKind::input, "image file not found: " + path.string());

  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    fail(ErrorKind::decode, "cannot decode " + path.string() + ": " + png.message);

  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::decode, "cannot decode " + path.string() + ": " + msg);
  }

  Image out(static_cast<int>(png.height), static_cast<int>(png.width), channels);
  for (std::size_t i = 0; i < buffer.size(); ++i) out.pixels[i] = static_cast<float>(buffer[i]) / 255.0f;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    fail(ErrorKind::input, "PNG export supports 1 or 3 channels, got " + std::to_string(image.channels));

  std::vector<std::uint8_t> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    buffer[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }

  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr))
    fail(ErrorKind::input, "cannot write " + path.string() + ": " + png.message);
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height <= 0 || width <= 0) fail(ErrorKind::config, "resize target must be positive");
  if (height == image.height && width == image.width) return image;
  Image out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1 - wx) + image.at(y0, x1, c) * wx;
        const double bottom = image.at(y1, x0, c) * (1 - wx) + image.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

FeatureMap to_feature_map(const Image& image) {
  FeatureMap out(image.channels, image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(c, y, x) = image.at(y, x, c);
  return out;
}

}  // namespace dualad
