#include "dualad/picturable.hpp"

#include <algorithm>
#include <cmath>

#include "dualad/binary_io.hpp"
#include "dualad/error.hpp"
#include "dualad/image_io.hpp"

namespace dualad {

namespace {

AnomalyMap squared_difference_map(const FeatureMap& a, const FeatureMap& b, const char* what) {
  if (!a.same_shape(b))
    fail(ErrorKind::input, std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  if (a.empty()) fail(ErrorKind::input, std::string(what) + ": empty feature maps");
  AnomalyMap out(a.height, a.width);
  const std::size_t plane = a.plane();
  for (int c = 0; c < a.channels; ++c) {
    const float* pa = a.data.data() + static_cast<std::size_t>(c) * plane;
    const float* pb = b.data.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
      out.values[i] += d * d;
    }
  }
  const double inv = 1.0 / a.channels;
  for (auto& v : out.values) v *= inv;
  return out;
}

QuantilePair pooled_quantiles(std::span<const AnomalyMap> maps, double low, double high, const char* kind) {
  std::vector<double> pooled;
  for (const auto& m : maps) pooled.insert(pooled.end(), m.values.begin(), m.values.end());
  std::sort(pooled.begin(), pooled.end());
  QuantilePair q{empirical_quantile(pooled, low), empirical_quantile(pooled, high)};
  if (!(q.high > q.low))
    fail(ErrorKind::calibration, std::string("map normalizer: degenerate ") + kind + " validation maps (q_high == q_low)");
  return q;
}

double rescale(double v, const QuantilePair& q) {
  return std::max(0.0, 0.1 * (v - q.low) / (q.high - q.low));
}

constexpr std::string_view kMapMagic = "DUALADMP";

}  // namespace

AnomalyMap local_map(const FeatureMap& teacher, const FeatureMap& student_former) {
  return squared_difference_map(teacher, student_former, "local_map");
}

AnomalyMap global_map(const FeatureMap& student_latter, const FeatureMap& autoencoder) {
  return squared_difference_map(student_latter, autoencoder, "global_map");
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrorKind::input, "quantile of empty sample");
  if (!(q >= 0.0 && q <= 1.0)) fail(ErrorKind::config, "quantile level must lie in [0, 1]");
  if (!std::is_sorted(values.begin(), values.end())) std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

MapNormalizer calibrate_map_normalizer(std::span<const AnomalyMap> local_maps, std::span<const AnomalyMap> global_maps,
                                       double low_level, double high_level) {
  if (local_maps.size() < 2 || global_maps.size() < 2)
    fail(ErrorKind::calibration, "map normalizer: need at least 2 validation images");
  if (!(low_level >= 0.0 && high_level <= 1.0 && low_level < high_level))
    fail(ErrorKind::config, "map normalizer: need 0 <= q_low < q_high <= 1");
  MapNormalizer n;
  n.low_level = low_level;
  n.high_level = high_level;
  n.local = pooled_quantiles(local_maps, low_level, high_level, "local");
  n.global = pooled_quantiles(global_maps, low_level, high_level, "global");
  n.calibrated = true;
  return n;
}

AnomalyMap combined_map(const AnomalyMap& local, const AnomalyMap& global, const MapNormalizer& normalizer) {
  if (!normalizer.calibrated) fail(ErrorKind::state, "combined_map: map normalizer is not calibrated");
  if (local.height != global.height || local.width != global.width)
    fail(ErrorKind::input, "combined_map: local and global maps differ in shape");
  AnomalyMap out(local.height, local.width);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = 0.5 * (rescale(local.values[i], normalizer.local) + rescale(global.values[i], normalizer.global));
  return out;
}

double picturable_score(const AnomalyMap& map) {
  if (map.values.empty()) fail(ErrorKind::input, "picturable_score: empty map");
  return *std::max_element(map.values.begin(), map.values.end());
}

void write_map_raw(const std::filesystem::path& path, const AnomalyMap& map) {
  ByteWriter w;
  w.magic(kMapMagic);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(map.height));
  w.u32(static_cast<std::uint32_t>(map.width));
  for (double v : map.values) w.f32(static_cast<float>(v));
  w.save(path);
}

AnomalyMap read_map_raw(const std::filesystem::path& path) {
  auto r = ByteReader::open(path);
  r.expect_magic(kMapMagic);
  if (const auto version = r.u32(); version != 1)
    fail(ErrorKind::decode, path.string() + ": unsupported map version " + std::to_string(version));
  const auto h = r.u32();
  const auto w = r.u32();
  if (h > 1u << 15 || w > 1u << 15) fail(ErrorKind::decode, path.string() + ": implausible map size");
  AnomalyMap map(static_cast<int>(h), static_cast<int>(w));
  for (auto& v : map.values) v = r.f32();
  if (!r.at_end()) fail(ErrorKind::decode, path.string() + ": trailing bytes");
  return map;
}

void write_heatmap_png(const std::filesystem::path& path, const AnomalyMap& map, double vmax, int upscale) {
  if (upscale < 1) upscale = 1;
  if (!(vmax > 0.0)) vmax = std::max(picturable_score(map), 1e-12);
  Image img(map.height * upscale, map.width * upscale, 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double t = std::clamp(map.at(y / upscale, x / upscale) / vmax, 0.0, 1.0);
      // Piecewise-linear "jet": blue -> cyan -> yellow -> red.
      const auto ramp = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
      img.at(y, x, 0) = ramp(1.5 - std::abs(4.0 * t - 3.0));
      img.at(y, x, 1) = ramp(1.5 - std::abs(4.0 * t - 2.0));
      img.at(y, x, 2) = ramp(1.5 - std::abs(4.0 * t - 1.0));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_png(path, img);
}

}  // namespace dualad
