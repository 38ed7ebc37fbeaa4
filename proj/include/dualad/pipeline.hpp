#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "dualad/backbone.hpp"
#include "dualad/dataset.hpp"
#include "dualad/fusion_eval.hpp"
#include "dualad/kvconfig.hpp"
#include "dualad/picturable.hpp"
#include "dualad/unpicturable.hpp"

namespace dualad {

enum class DatasetSource { synthetic, loco };

/// Everything a command needs, parsed from one key=value file.
///
/// Keys (section prefixes in brackets):
///   seed
///   [dataset.] source (synthetic|loco), path, resize (HxW)
///   [synth.]   see SynthConfig; counts required when source=synthetic
///   [backbone.] size (S|M), out_channels
///   [train.]   steps, optimizer, learning_rate, momentum, batch_size, teacher_mode
///   [unpicturable.] source (student_former|teacher), epsilon (number|auto)
///   [picturable.] q_low, q_high
///   [eval.]    workers, warmup, runs
struct PipelineConfig {
  std::uint64_t seed = 0;

  DatasetSource source = DatasetSource::synthetic;
  std::filesystem::path loco_path;
  std::optional<std::pair<int, int>> resize;
  std::optional<SynthConfig> synth;

  SizeTag size = SizeTag::S;
  int out_channels = 0;  // 0 keeps the size-tag default
  TrainHParams train;

  FeatureSourceConfig features;
  std::optional<double> epsilon;  // nullopt = scale-aware default ridge

  double q_low = 0.9;
  double q_high = 0.995;

  int workers = 1;
  int bench_warmup = 10;
  int bench_runs = 100;

  std::string canonical_text;  // normalized config, hashed into artifacts
};

/// Parses and validates a config. `seed_override` replaces the file's seed.
PipelineConfig parse_pipeline_config(const KeyValueFile& kv, std::optional<std::uint64_t> seed_override = std::nullopt);
PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> seed_override = std::nullopt);

std::string config_hash(const PipelineConfig& config);

/// Synthetic: generated in memory. LOCO: loaded from dataset.path.
DatasetBundle resolve_dataset(const PipelineConfig& config);

Arch arch_for(const PipelineConfig& config, const DatasetBundle& dataset);

/// All calibrations in one artifact, tied to a checkpoint.
struct Statistics {
  std::string checkpoint_hash;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::uint64_t train_count = 0;       // images behind the Gaussian fit
  std::uint64_t validation_count = 0;  // images behind both normalizers
  SizeTag size = SizeTag::S;
  GaussianModel gaussian;
  MapNormalizer map_normalizer;
  ScoreNormalizer score_normalizer;
};

/// Gaussian on the train split; map and score normalizers on the validation split.
Statistics calibrate(const BackboneBundle& backbone, const DatasetBundle& dataset, const PipelineConfig& config);

std::vector<std::uint8_t> statistics_bytes(const Statistics& stats);
void save_statistics(const std::filesystem::path& path, const Statistics& stats);
Statistics load_statistics(const std::filesystem::path& path);

Detector make_detector(const BackboneBundle& backbone, const Statistics& stats, const PipelineConfig& config);

/// Refuses statistics produced for a different checkpoint unless allowed.
void check_provenance(const Statistics& stats, const std::string& checkpoint_hash, bool allow_mismatch);

// ---------------------------------------------------------------------------
// Commands. Each returns its primary result and writes its artifacts.

struct SplitCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test_normal = 0;
  std::size_t test_logical = 0;
  std::size_t test_structural = 0;
};
SplitCounts count_splits(const DatasetBundle& bundle);

/// Writes the synthetic dataset under out_dir/<category>. Refuses a non-empty
/// target unless `force`, in which case the target is replaced.
SplitCounts cmd_generate(const PipelineConfig& config, const std::filesystem::path& out_dir, bool force);

/// Trains from scratch, or continues `resume_from` for `train.steps` more steps
/// (0 copies the checkpoint unchanged). Writes `<checkpoint>.loss.csv` alongside.
BackboneBundle cmd_train(const PipelineConfig& config, const std::filesystem::path& checkpoint,
                         const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                         std::optional<int> steps_override = std::nullopt);

Statistics cmd_calibrate(const PipelineConfig& config, const std::filesystem::path& checkpoint,
                         const std::filesystem::path& statistics);

struct ScoreOutputs {
  std::filesystem::path heatmap_png;
  std::filesystem::path raw_map;
};
ImageScores cmd_score(const PipelineConfig& config, const std::filesystem::path& checkpoint,
                      const std::filesystem::path& statistics, const std::filesystem::path& image_path,
                      const ScoreOutputs& outputs = {}, bool allow_mismatch = false);

ScoreReport cmd_evaluate(const PipelineConfig& config, const std::filesystem::path& checkpoint,
                         const std::filesystem::path& statistics, BranchMode mode,
                         const std::filesystem::path& report_json_path, const std::filesystem::path& report_csv_path,
                         bool allow_mismatch = false);

BenchResult cmd_bench(const PipelineConfig& config, const std::filesystem::path& checkpoint,
                      const std::filesystem::path& statistics, bool allow_mismatch = false);

std::string loss_trace_csv(const BackboneBundle& bundle);

}  // namespace dualad
