#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualad/backbone.hpp"
#include "dualad/dataset.hpp"
#include "dualad/picturable.hpp"
#include "dualad/unpicturable.hpp"

namespace dualad {

enum class Branch { picturable, unpicturable };

const char* to_string(Branch branch);
/// Throws an input (lookup) error for unknown names.
Branch parse_branch(const std::string& text);

struct BranchStats {
  double mean = 0.0;
  double stddev = 0.0;  // population (divisor n)
};

/// Per-branch standardization constants estimated on validation scores.
struct ScoreNormalizer {
  BranchStats picturable;
  BranchStats unpicturable;

  const BranchStats& stats(Branch b) const { return b == Branch::picturable ? picturable : unpicturable; }
};

/// Population mean and standard deviation (two-pass).
BranchStats population_moments(std::span<const double> scores);

ScoreNormalizer calibrate_score_normalizer(std::span<const double> picturable_scores,
                                           std::span<const double> unpicturable_scores);

double normalize(const ScoreNormalizer& normalizer, Branch branch, double score);

/// Sum of the two standardized branch scores.
double fuse(double z_picturable, double z_unpicturable);

/// Mann-Whitney AUROC with half credit for ties. `labels` are 1 for anomalous.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Which score ranks test images in the report.
enum class BranchMode { fused, picturable_only, unpicturable_only };
const char* to_string(BranchMode mode);
BranchMode parse_branch_mode(const std::string& text);

/// Everything needed to score one image. The backbone is borrowed.
struct Detector {
  const BackboneBundle* backbone = nullptr;
  GaussianModel gaussian;
  MapNormalizer map_normalizer;
  ScoreNormalizer score_normalizer;
  FeatureSourceConfig features;
};

/// Wall-clock seconds spent in each scoring stage for one image.
struct StageTimes {
  double backbone = 0.0;
  double picturable = 0.0;
  double unpicturable = 0.0;
  double fusion = 0.0;
  double total = 0.0;
};

struct ImageScores {
  double picturable = 0.0;
  double unpicturable = 0.0;
  double z_picturable = 0.0;
  double z_unpicturable = 0.0;
  double fused = 0.0;
  AnomalyMap combined;
  StageTimes times;
};

ImageScores score_image(const Detector& detector, const Image& image);

/// Branch scores for a set of images, used when calibrating.
struct BranchMaps {
  std::vector<AnomalyMap> local;
  std::vector<AnomalyMap> global;
  std::vector<FeatureVector> features;
};
BranchMaps collect_branch_inputs(const BackboneBundle& backbone, const std::vector<ImageSample>& samples,
                                 FeatureSource source);

struct SampleRecord {
  std::string id;
  Label label = Label::normal;
  std::optional<AnomalyFamily> family;
  double picturable = 0.0;
  double unpicturable = 0.0;
  double z_picturable = 0.0;
  double z_unpicturable = 0.0;
  double fused = 0.0;
  double final_score = 0.0;  // the column selected by the branch mode
};

struct LatencyStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

/// Stage names in report order: backbone, picturable, unpicturable, fusion, total.
const std::vector<std::string>& stage_names();

struct ScoreReport {
  static constexpr int kSchemaVersion = 1;
  std::string category;
  BranchMode mode = BranchMode::fused;
  std::vector<SampleRecord> records;
  // score column -> subset -> AUROC; absent subsets are nullopt.
  std::map<std::string, std::map<std::string, std::optional<double>>> auroc;
  std::map<std::string, LatencyStats> latency;

  std::optional<double> get_auroc(const std::string& column, const std::string& subset) const;
};

/// Subset names: all, logical, structural, picturable, unpicturable.
const std::vector<std::string>& subset_names();
/// Score columns: picturable, unpicturable, fused, final.
const std::vector<std::string>& score_columns();

/// Recomputes every AUROC cell from the records.
std::map<std::string, std::map<std::string, std::optional<double>>> auroc_table(std::span<const SampleRecord> records);

struct EvaluateOptions {
  BranchMode mode = BranchMode::fused;
  int workers = 1;
};

ScoreReport evaluate(const Detector& detector, const std::vector<ImageSample>& testset, const EvaluateOptions& options = {});

LatencyStats summarize_latency(std::vector<double> seconds);

struct BenchResult {
  std::map<std::string, LatencyStats> stages;
  int warmup = 0;
  int runs = 0;
};

/// Single-threaded, batch size 1; images are cycled in order.
BenchResult bench(const Detector& detector, std::span<const Image> images, int warmup = 10, int runs = 100);

std::string format_bench_table(const BenchResult& result);

std::string report_json(const ScoreReport& report);
std::string report_csv(const ScoreReport& report);
void write_report(const ScoreReport& report, const std::filesystem::path& json_path, const std::filesystem::path& csv_path);

}  // namespace dualad
