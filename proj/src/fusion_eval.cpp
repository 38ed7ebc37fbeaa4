#include "dualad/fusion_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"

#include "dualad/error.hpp"

namespace dualad {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0, Clock::time_point t1) {
  return std::chrono::duration<double>(t1 - t0).count();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool in_subset(const SampleRecord& r, const std::string& subset) {
  if (r.label == Label::normal) return true;
  if (subset == "all") return true;
  if (subset == "logical") return r.label == Label::logical;
  if (subset == "structural") return r.label == Label::structural;
  if (subset == "picturable") return r.family == AnomalyFamily::picturable;
  if (subset == "unpicturable") return r.family == AnomalyFamily::unpicturable;
  return false;
}

double column_value(const SampleRecord& r, const std::string& column) {
  if (column == "picturable") return r.picturable;
  if (column == "unpicturable") return r.unpicturable;
  if (column == "fused") return r.fused;
  return r.final_score;
}

}  // namespace

const char* to_string(Branch branch) { return branch == Branch::picturable ? "picturable" : "unpicturable"; }

Branch parse_branch(const std::string& text) {
  if (text == "picturable") return Branch::picturable;
  if (text == "unpicturable") return Branch::unpicturable;
  fail(ErrorKind::input, "unknown branch '" + text + "'");
}

const char* to_string(BranchMode mode) {
  switch (mode) {
    case BranchMode::fused: return "fused";
    case BranchMode::picturable_only: return "picturable-only";
    case BranchMode::unpicturable_only: return "unpicturable-only";
  }
  return "?";
}

BranchMode parse_branch_mode(const std::string& text) {
  if (text == "fused") return BranchMode::fused;
  if (text == "picturable-only") return BranchMode::picturable_only;
  if (text == "unpicturable-only") return BranchMode::unpicturable_only;
  fail(ErrorKind::config, "branch mode must be fused, picturable-only or unpicturable-only; got '" + text + "'");
}

BranchStats population_moments(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorKind::input, "moments of an empty sample");
  const double n = static_cast<double>(scores.size());
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= n;
  double ss = 0.0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  return {mean, std::sqrt(ss / n)};
}

ScoreNormalizer calibrate_score_normalizer(std::span<const double> picturable_scores,
                                           std::span<const double> unpicturable_scores) {
  auto one = [](std::span<const double> scores, const char* branch) {
    if (scores.size() < 2)
      fail(ErrorKind::calibration, std::string("score normalizer (") + branch + "): need at least 2 validation scores");
    for (double s : scores)
      if (!std::isfinite(s)) fail(ErrorKind::calibration, std::string("score normalizer (") + branch + "): non-finite score");
    const auto st = population_moments(scores);
    // Identical scores can leave a rounding-level sigma (~1e-17) behind.
    if (!(st.stddev > 1e-12 * std::max(1.0, std::abs(st.mean))))
      fail(ErrorKind::calibration, std::string("score normalizer (") + branch + "): zero standard deviation on validation scores");
    return st;
  };
  return {one(picturable_scores, "picturable"), one(unpicturable_scores, "unpicturable")};
}

double normalize(const ScoreNormalizer& normalizer, Branch branch, double score) {
  const auto& st = normalizer.stats(branch);
  if (!(st.stddev > 0.0)) fail(ErrorKind::state, std::string("normalize: ") + to_string(branch) + " branch not calibrated");
  return (score - st.mean) / st.stddev;
}

double fuse(double z_picturable, double z_unpicturable) {
  if (!std::isfinite(z_picturable) || !std::isfinite(z_unpicturable))
    fail(ErrorKind::numeric, "fuse: non-finite branch score");
  return z_picturable + z_unpicturable;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::evaluation, "auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of mid-ranks (1-based) of the anomalous samples, doubled to stay integral.
  double twice_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double twice_mid = static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) {
        twice_rank_sum += twice_mid;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) fail(ErrorKind::evaluation, "auroc: both classes must be present");
  const double p = static_cast<double>(positives);
  const double twice_u = twice_rank_sum - p * (p + 1.0);
  return twice_u / (2.0 * p * static_cast<double>(negatives));
}

// ---------------------------------------------------------------------------
// Scoring

ImageScores score_image(const Detector& d, const Image& image) {
  if (d.backbone == nullptr) fail(ErrorKind::state, "detector has no backbone");
  if (d.gaussian.source != d.features.source)
    fail(ErrorKind::config, std::string("detector: Gaussian model fit on ") + to_string(d.gaussian.source) +
                                " but features configured as " + to_string(d.features.source));
  ImageScores s;
  const auto t0 = Clock::now();
  const RawOutputs raw = forward(*d.backbone, image);
  const auto t1 = Clock::now();
  const auto local = local_map(raw.teacher, raw.student_former);
  const auto global = global_map(raw.student_latter, raw.autoencoder);
  s.combined = combined_map(local, global, d.map_normalizer);
  s.picturable = picturable_score(s.combined);
  const auto t2 = Clock::now();
  s.unpicturable = mahalanobis(d.gaussian, gap(select_source(raw, d.features.source)));
  const auto t3 = Clock::now();
  s.z_picturable = normalize(d.score_normalizer, Branch::picturable, s.picturable);
  s.z_unpicturable = normalize(d.score_normalizer, Branch::unpicturable, s.unpicturable);
  s.fused = fuse(s.z_picturable, s.z_unpicturable);
  const auto t4 = Clock::now();
  s.times = {seconds_since(t0, t1), seconds_since(t1, t2), seconds_since(t2, t3), seconds_since(t3, t4),
             seconds_since(t0, t4)};
  return s;
}

BranchMaps collect_branch_inputs(const BackboneBundle& backbone, const std::vector<ImageSample>& samples,
                                 FeatureSource source) {
  BranchMaps out;
  for (const auto& s : samples) {
    const auto raw = forward(backbone, s.pixels);
    out.local.push_back(local_map(raw.teacher, raw.student_former));
    out.global.push_back(global_map(raw.student_latter, raw.autoencoder));
    out.features.push_back(gap(select_source(raw, source)));
  }
  return out;
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"backbone", "picturable", "unpicturable", "fusion", "total"};
  return names;
}

const std::vector<std::string>& subset_names() {
  static const std::vector<std::string> names{"all", "logical", "structural", "picturable", "unpicturable"};
  return names;
}

const std::vector<std::string>& score_columns() {
  static const std::vector<std::string> names{"picturable", "unpicturable", "fused", "final"};
  return names;
}

std::optional<double> ScoreReport::get_auroc(const std::string& column, const std::string& subset) const {
  const auto c = auroc.find(column);
  if (c == auroc.end()) return std::nullopt;
  const auto s = c->second.find(subset);
  return s == c->second.end() ? std::nullopt : s->second;
}

std::map<std::string, std::map<std::string, std::optional<double>>> auroc_table(std::span<const SampleRecord> records) {
  std::map<std::string, std::map<std::string, std::optional<double>>> table;
  for (const auto& column : score_columns()) {
    for (const auto& subset : subset_names()) {
      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto& r : records) {
        if (!in_subset(r, subset)) continue;
        scores.push_back(column_value(r, column));
        labels.push_back(r.label == Label::normal ? 0 : 1);
      }
      const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
      table[column][subset] = both ? std::optional<double>(auroc(scores, labels)) : std::nullopt;
    }
  }
  return table;
}

LatencyStats summarize_latency(std::vector<double> seconds) {
  if (seconds.empty()) return {};
  std::sort(seconds.begin(), seconds.end());
  LatencyStats st;
  st.mean_ms = 1e3 * std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
  const std::size_t n = seconds.size();
  st.median_ms = 1e3 * (n % 2 ? seconds[n / 2] : 0.5 * (seconds[n / 2 - 1] + seconds[n / 2]));
  const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1;
  st.p95_ms = 1e3 * seconds[std::min(idx, n - 1)];
  return st;
}

namespace {

std::map<std::string, LatencyStats> summarize_stages(const std::vector<StageTimes>& times) {
  std::map<std::string, std::vector<double>> columns;
  for (const auto& t : times) {
    columns["backbone"].push_back(t.backbone);
    columns["picturable"].push_back(t.picturable);
    columns["unpicturable"].push_back(t.unpicturable);
    columns["fusion"].push_back(t.fusion);
    columns["total"].push_back(t.total);
  }
  std::map<std::string, LatencyStats> out;
  for (auto& [name, values] : columns) out[name] = summarize_latency(std::move(values));
  return out;
}

}  // namespace

ScoreReport evaluate(const Detector& detector, const std::vector<ImageSample>& testset, const EvaluateOptions& options) {
  if (testset.empty()) fail(ErrorKind::evaluation, "evaluate: empty test set");
  const std::size_t n = testset.size();
  std::vector<ImageScores> scores(n);
  const auto workers = static_cast<std::size_t>(std::max(1, options.workers));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) scores[i] = score_image(detector, testset[i].pixels);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) scores[i] = score_image(detector, testset[i].pixels);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  ScoreReport report;
  report.category = testset.front().category;
  report.mode = options.mode;
  std::vector<StageTimes> times;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = scores[i];
    SampleRecord r;
    r.id = testset[i].id;
    r.label = testset[i].label;
    r.family = testset[i].family;
    r.picturable = s.picturable;
    r.unpicturable = s.unpicturable;
    r.z_picturable = s.z_picturable;
    r.z_unpicturable = s.z_unpicturable;
    r.fused = s.fused;
    switch (options.mode) {
      case BranchMode::fused: r.final_score = s.fused; break;
      case BranchMode::picturable_only: r.final_score = s.z_picturable; break;
      case BranchMode::unpicturable_only: r.final_score = s.z_unpicturable; break;
    }
    report.records.push_back(std::move(r));
    times.push_back(s.times);
  }
  report.auroc = auroc_table(report.records);
  report.latency = summarize_stages(times);
  return report;
}

BenchResult bench(const Detector& detector, std::span<const Image> images, int warmup, int runs) {
  if (images.empty()) fail(ErrorKind::input, "bench: no images");
  if (runs < 1 || warmup < 0) fail(ErrorKind::config, "bench: runs must be >= 1 and warmup >= 0");
  for (int i = 0; i < warmup; ++i) (void)score_image(detector, images[static_cast<std::size_t>(i) % images.size()]);
  std::vector<StageTimes> times;
  times.reserve(static_cast<std::size_t>(runs));
  for (int i = 0; i < runs; ++i)
    times.push_back(score_image(detector, images[static_cast<std::size_t>(i) % images.size()]).times);
  return {summarize_stages(times), warmup, runs};
}

std::string format_bench_table(const BenchResult& result) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %12s %12s %12s %9s\n", "stage", "median_ms", "mean_ms", "p95_ms", "share");
  out += line;
  const double total = result.stages.at("total").median_ms;
  for (const auto& name : stage_names()) {
    const auto& st = result.stages.at(name);
    std::snprintf(line, sizeof(line), "%-14s %12.4f %12.4f %12.4f %8.2f%%\n", name.c_str(), st.median_ms, st.mean_ms,
                  st.p95_ms, total > 0 ? 100.0 * st.median_ms / total : 0.0);
    out += line;
  }
  std::snprintf(line, sizeof(line), "(%d warm-up, %d measured, batch size 1)\n", result.warmup, result.runs);
  out += line;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string report_json(const ScoreReport& report) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["schema_version"] = ScoreReport::kSchemaVersion;
  j["category"] = report.category;
  j["branch_mode"] = to_string(report.mode);
  j["record_count"] = report.records.size();
  ordered_json au = ordered_json::object();
  for (const auto& column : score_columns()) {
    ordered_json row = ordered_json::object();
    for (const auto& subset : subset_names()) {
      const auto v = report.get_auroc(column, subset);
      row[subset] = v ? ordered_json(*v) : ordered_json(nullptr);
    }
    au[column] = row;
  }
  j["auroc"] = au;
  ordered_json lat = ordered_json::object();
  for (const auto& name : stage_names()) {
    const auto it = report.latency.find(name);
    if (it == report.latency.end()) continue;
    lat[name] = {{"mean_ms", it->second.mean_ms}, {"median_ms", it->second.median_ms}, {"p95_ms", it->second.p95_ms}};
  }
  j["latency"] = lat;
  ordered_json recs = ordered_json::array();
  for (const auto& r : report.records) {
    recs.push_back({{"id", r.id},
                    {"label", to_string(r.label)},
                    {"anomaly_family", r.family ? ordered_json(to_string(*r.family)) : ordered_json(nullptr)},
                    {"picturable_score", r.picturable},
                    {"unpicturable_score", r.unpicturable},
                    {"z_picturable", r.z_picturable},
                    {"z_unpicturable", r.z_unpicturable},
                    {"fused_score", r.fused},
                    {"final_score", r.final_score}});
  }
  j["records"] = recs;
  return j.dump(2) + "\n";
}

std::string report_csv(const ScoreReport& report) {
  std::string out =
      "id,label,anomaly_family,picturable_score,unpicturable_score,z_picturable,z_unpicturable,fused_score,final_score\n";
  for (const auto& r : report.records) {
    out += r.id + "," + to_string(r.label) + "," + (r.family ? to_string(*r.family) : "") + "," +
           format_double(r.picturable) + "," + format_double(r.unpicturable) + "," + format_double(r.z_picturable) +
           "," + format_double(r.z_unpicturable) + "," + format_double(r.fused) + "," + format_double(r.final_score) +
           "\n";
  }
  return out;
}

void write_report(const ScoreReport& report, const std::filesystem::path& json_path, const std::filesystem::path& csv_path) {
  auto write = [](const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::input, "cannot write " + path.string());
    out << text;
  };
  write(json_path, report_json(report));
  write(csv_path, report_csv(report));
}

}  // namespace dualad
