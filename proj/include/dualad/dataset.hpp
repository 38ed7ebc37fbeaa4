#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dualad/image_io.hpp"
#include "dualad/kvconfig.hpp"

namespace dualad {

enum class Label { normal, structural, logical };
enum class AnomalyFamily { picturable, unpicturable };
enum class Split { train, validation, test };

const char* to_string(Label label);
const char* to_string(AnomalyFamily family);
const char* to_string(Split split);
AnomalyFamily parse_family(const std::string& text);
Split parse_split(const std::string& text);

struct ImageSample {
  Image pixels;
  Label label = Label::normal;
  std::optional<AnomalyFamily> family;  // set iff label != normal
  Split split = Split::train;
  std::string category;
  std::string id;  // relative path inside the category, e.g. "test/good/003.png"

  bool is_anomalous() const { return label != Label::normal; }
};

/// Parameters of the desk-scale generator.
///
/// Normal images contain k uniform discs, k in [min_objects, max_objects], on a
/// textured background. Structural anomalies invert a small patch inside one
/// disc; logical anomalies use a count just outside the normal range.
struct SynthConfig {
  int height = 64;
  int width = 64;
  int min_objects = 3;
  int max_objects = 3;
  double defect_intensity = 1.0;
  int train_count = 0;
  int validation_count = 0;
  int test_normal_count = 0;
  int test_picturable_count = 0;
  int test_unpicturable_count = 0;
  std::uint64_t seed = 0;

  double object_radius = 5.0;
  double object_intensity = 0.8;
  double defect_radius = 2.0;
  std::string category = "synthetic";

  /// Throws a configuration error for non-positive counts or sizes.
  void validate() const;
};

/// Reads `<prefix>key` entries. Counts are required; everything else has
/// defaults. The seed is required unless `default_seed` is given.
SynthConfig parse_synth_config(const KeyValueFile& kv, const std::string& prefix,
                               std::optional<std::uint64_t> default_seed = std::nullopt);

/// Standalone generator config file. Unknown keys are rejected.
SynthConfig load_synth_config(const std::filesystem::path& path);

/// Immutable collection of splits for one category.
struct DatasetBundle {
  std::string category;
  std::map<Split, std::vector<ImageSample>> splits;
  std::optional<SynthConfig> generator_config;

  bool has(Split split) const { return splits.count(split) != 0; }
  /// Throws an input error if the split is absent.
  const std::vector<ImageSample>& split(Split split) const;
};

DatasetBundle generate_synthetic(const SynthConfig& config);

/// Number of non-overlapping discs the generator can always place.
int placeable_capacity(const SynthConfig& config);

struct LoadOptions {
  /// Resample every image to this (height, width) on load.
  std::optional<std::pair<int, int>> resize;
};

/// Loads one category directory laid out as
///   train/good, validation/good, test/{good,logical_anomalies,structural_anomalies}.
///
/// Default family mapping: logical -> unpicturable, structural -> picturable.
/// An optional `family_map.txt` in the category root overrides it; keys are a
/// test subdirectory name or a file id ("logical_anomalies/005.png").
DatasetBundle load_loco_layout(const std::filesystem::path& category_root, const LoadOptions& options = {});

/// Writes a bundle using the same layout. Files are named 000.png, 001.png, ...
void export_loco_layout(const DatasetBundle& bundle, const std::filesystem::path& category_root);

/// Mini-batch stream over one split.
///
/// Each epoch visits every sample exactly once; the order is a pure function
/// of (seed, epoch). Iterators hold no shared state and may be used per consumer.
class BatchIterator {
 public:
  BatchIterator(const DatasetBundle& bundle, Split split, int batch_size, std::uint64_t seed);

  /// Next batch; the final batch of an epoch may be smaller. Rolls into the next epoch.
  std::vector<const ImageSample*> next();

  std::uint64_t epoch() const { return epoch_; }
  std::size_t split_size() const { return samples_->size(); }

  /// Batches of indices for a whole epoch.
  std::vector<std::vector<std::size_t>> epoch_batches(std::uint64_t epoch) const;

  static std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

 private:
  const std::vector<ImageSample>* samples_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace dualad
