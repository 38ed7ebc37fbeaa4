#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "dualad/tensor.hpp"

namespace dualad {

/// Non-negative per-location anomaly evidence, H_out x W_out.
using AnomalyMap = Map2d;

/// Channel mean of squared teacher / student-former differences.
AnomalyMap local_map(const FeatureMap& teacher, const FeatureMap& student_former);

/// Same construction for the student's latter half against the autoencoder.
AnomalyMap global_map(const FeatureMap& student_latter, const FeatureMap& autoencoder);

struct QuantilePair {
  double low = 0.0;
  double high = 0.0;
};

/// Quantile-based rescaling of local and global maps, estimated on validation maps.
struct MapNormalizer {
  double low_level = 0.9;     // quantile mapped to 0
  double high_level = 0.995;  // quantile mapped to 0.1
  QuantilePair local;
  QuantilePair global;
  bool calibrated = false;
};

/// Empirical quantile with linear interpolation between order statistics
/// (position q * (n - 1) in the sorted sample).
double empirical_quantile(std::vector<double> values, double q);

/// Pools all entries of the validation maps per kind and takes the configured quantiles.
MapNormalizer calibrate_map_normalizer(std::span<const AnomalyMap> local_maps, std::span<const AnomalyMap> global_maps,
                                       double low_level = 0.9, double high_level = 0.995);

/// Rescales each map so q_low -> 0 and q_high -> 0.1, clamps below at 0, and averages.
AnomalyMap combined_map(const AnomalyMap& local, const AnomalyMap& global, const MapNormalizer& normalizer);

/// Maximum entry of the map.
double picturable_score(const AnomalyMap& map);

/// Raw map dump: "DUALADMP", u32 version, u32 height, u32 width, then
/// row-major little-endian float32 values.
void write_map_raw(const std::filesystem::path& path, const AnomalyMap& map);
AnomalyMap read_map_raw(const std::filesystem::path& path);

/// False-colour PNG, linearly scaled so `vmax` saturates. Upscaled by an integer factor.
void write_heatmap_png(const std::filesystem::path& path, const AnomalyMap& map, double vmax, int upscale = 4);

}  // namespace dualad
