#include "dualad/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "dualad/binary_io.hpp"
#include "dualad/error.hpp"

namespace fs = std::filesystem;

namespace dualad {

namespace {

constexpr std::string_view kStatsMagic = "DUALADST";
constexpr std::uint32_t kStatsVersion = 1;

std::pair<int, int> parse_extent(const std::string& text, const std::string& key) {
  const auto x = text.find('x');
  if (x == std::string::npos) fail(ErrorKind::config, key + ": expected HxW, got '" + text + "'");
  const auto h = parse_int(text.substr(0, x), key);
  const auto w = parse_int(text.substr(x + 1), key);
  if (h <= 0 || w <= 0) fail(ErrorKind::config, key + ": extents must be positive");
  return {static_cast<int>(h), static_cast<int>(w)};
}

std::string checkpoint_hash_of(const fs::path& path) {
  auto r = ByteReader::open(path);
  return sha256_hex(r.bytes());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::input, "cannot write " + path.string());
  out << text;
}

}  // namespace

PipelineConfig parse_pipeline_config(const KeyValueFile& kv, std::optional<std::uint64_t> seed_override) {
  PipelineConfig c;
  const auto file_seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.seed = seed_override ? *seed_override : file_seed;

  const auto source = kv.get_string("dataset.source", "synthetic");
  if (source == "synthetic") {
    c.source = DatasetSource::synthetic;
    if (kv.contains("dataset.path"))
      fail(ErrorKind::config, "dataset.path given with dataset.source=synthetic; specify exactly one dataset source");
    c.synth = parse_synth_config(kv, "synth.", c.seed);
    if (seed_override) c.synth->seed = *seed_override;
    c.synth->validate();
  } else if (source == "loco") {
    c.source = DatasetSource::loco;
    c.loco_path = kv.require("dataset.path");
    for (const char* key : {"synth.train_count", "synth.validation_count", "synth.test_normal_count"})
      if (kv.contains(key)) fail(ErrorKind::config, std::string(key) + " given with dataset.source=loco; specify exactly one dataset source");
  } else {
    fail(ErrorKind::config, "dataset.source must be synthetic or loco, got '" + source + "'");
  }
  if (auto r = kv.get("dataset.resize")) c.resize = parse_extent(*r, "dataset.resize");

  c.size = parse_size_tag(kv.get_string("backbone.size", "S"));
  c.out_channels = static_cast<int>(kv.get_int("backbone.out_channels", 0));
  if (c.out_channels < 0) fail(ErrorKind::config, "backbone.out_channels must be positive");

  c.train.steps = static_cast<int>(kv.get_int("train.steps", c.train.steps));
  c.train.learning_rate = kv.get_double("train.learning_rate", c.train.learning_rate);
  c.train.momentum = kv.get_double("train.momentum", c.train.momentum);
  c.train.optimizer = parse_optimizer(kv.get_string("train.optimizer", "sgd"));
  c.train.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.train.batch_size));
  c.train.teacher_mode = parse_teacher_mode(kv.get_string("train.teacher_mode", "frozen_random"));
  c.train.seed = c.seed;
  if (c.train.steps < 0) fail(ErrorKind::config, "train.steps must be >= 0");
  if (c.train.batch_size < 1) fail(ErrorKind::config, "train.batch_size must be >= 1");
  if (!(c.train.learning_rate > 0.0)) fail(ErrorKind::config, "train.learning_rate must be positive");
  if (!(c.train.momentum >= 0.0 && c.train.momentum < 1.0)) fail(ErrorKind::config, "train.momentum must lie in [0, 1)");

  c.features.source = parse_feature_source(kv.get_string("unpicturable.source", "student_former"));
  c.features.size = c.size;
  const auto eps = kv.get_string("unpicturable.epsilon", "auto");
  if (eps != "auto") {
    c.epsilon = parse_double(eps, "unpicturable.epsilon");
    if (!(*c.epsilon >= 0.0)) fail(ErrorKind::config, "unpicturable.epsilon must be >= 0");
  }

  c.q_low = kv.get_double("picturable.q_low", c.q_low);
  c.q_high = kv.get_double("picturable.q_high", c.q_high);
  if (!(c.q_low >= 0.0 && c.q_high <= 1.0 && c.q_low < c.q_high))
    fail(ErrorKind::config, "picturable quantiles need 0 <= q_low < q_high <= 1");

  c.workers = static_cast<int>(kv.get_int("eval.workers", 1));
  c.bench_warmup = static_cast<int>(kv.get_int("eval.warmup", 10));
  c.bench_runs = static_cast<int>(kv.get_int("eval.runs", 100));
  if (c.workers < 1) fail(ErrorKind::config, "eval.workers must be >= 1");
  if (c.bench_warmup < 0 || c.bench_runs < 1) fail(ErrorKind::config, "eval.warmup must be >= 0 and eval.runs >= 1");

  kv.reject_unknown();
  c.canonical_text = kv.canonical_text() + "seed.effective=" + std::to_string(c.seed) + "\n";
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  return parse_pipeline_config(KeyValueFile::load(path), seed_override);
}

std::string config_hash(const PipelineConfig& config) { return sha256_hex(config.canonical_text); }

DatasetBundle resolve_dataset(const PipelineConfig& config) {
  if (config.source == DatasetSource::synthetic) {
    auto bundle = generate_synthetic(*config.synth);
    if (config.resize) {
      for (auto& [split, samples] : bundle.splits)
        for (auto& s : samples) s.pixels = resize_bilinear(s.pixels, config.resize->first, config.resize->second);
    }
    return bundle;
  }
  LoadOptions options;
  options.resize = config.resize;
  return load_loco_layout(config.loco_path, options);
}

Arch arch_for(const PipelineConfig& config, const DatasetBundle& dataset) {
  const auto& train = dataset.split(Split::train);
  if (train.empty()) fail(ErrorKind::input, "train split is empty");
  const auto& img = train.front().pixels;
  return default_arch(config.size, img.channels, img.height, img.width, config.out_channels);
}

// ---------------------------------------------------------------------------
// Calibration artifact

Statistics calibrate(const BackboneBundle& backbone, const DatasetBundle& dataset, const PipelineConfig& config) {
  if (!backbone.trained) fail(ErrorKind::state, "calibrate: backbone is not trained");
  const auto& train = dataset.split(Split::train);
  const auto& validation = dataset.split(Split::validation);
  for (const auto* split : {&train, &validation})
    for (const auto& s : *split)
      if (s.is_anomalous()) fail(ErrorKind::contract, "calibrate: anomalous sample " + s.id + " in a normal-only split");

  Statistics st;
  st.seed = config.seed;
  st.size = backbone.arch.size;
  st.train_count = train.size();
  st.validation_count = validation.size();
  st.config_hash = config_hash(config);

  const auto train_inputs = collect_branch_inputs(backbone, train, config.features.source);
  st.gaussian = fit_gaussian(train_inputs.features, config.epsilon, config.features.source);

  const auto val = collect_branch_inputs(backbone, validation, config.features.source);
  st.map_normalizer = calibrate_map_normalizer(val.local, val.global, config.q_low, config.q_high);

  std::vector<double> pict, unpict;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    pict.push_back(picturable_score(combined_map(val.local[i], val.global[i], st.map_normalizer)));
    unpict.push_back(mahalanobis(st.gaussian, val.features[i]));
  }
  st.score_normalizer = calibrate_score_normalizer(pict, unpict);
  return st;
}

std::vector<std::uint8_t> statistics_bytes(const Statistics& s) {
  ByteWriter w;
  w.magic(kStatsMagic);
  w.u32(kStatsVersion);
  w.str(s.checkpoint_hash);
  w.str(s.config_hash);
  w.u64(s.seed);
  w.u64(s.train_count);
  w.u64(s.validation_count);
  w.u8(static_cast<std::uint8_t>(s.size));
  write_gaussian(w, s.gaussian);
  const auto& m = s.map_normalizer;
  for (double v : {m.low_level, m.high_level, m.local.low, m.local.high, m.global.low, m.global.high}) w.f64(v);
  const auto& n = s.score_normalizer;
  for (double v : {n.picturable.mean, n.picturable.stddev, n.unpicturable.mean, n.unpicturable.stddev}) w.f64(v);
  return w.bytes();
}

void save_statistics(const fs::path& path, const Statistics& stats) {
  ByteWriter w;
  w.raw(statistics_bytes(stats));
  w.save(path);
}

Statistics load_statistics(const fs::path& path) {
  auto r = ByteReader::open(path);
  r.expect_magic(kStatsMagic);
  if (const auto version = r.u32(); version != kStatsVersion)
    fail(ErrorKind::decode, path.string() + ": unsupported statistics version " + std::to_string(version));
  Statistics s;
  s.checkpoint_hash = r.str();
  s.config_hash = r.str();
  s.seed = r.u64();
  s.train_count = r.u64();
  s.validation_count = r.u64();
  const auto tag = r.u8();
  if (tag > 1) fail(ErrorKind::decode, path.string() + ": bad size tag");
  s.size = static_cast<SizeTag>(tag);
  s.gaussian = read_gaussian(r);
  auto& m = s.map_normalizer;
  m.low_level = r.f64();
  m.high_level = r.f64();
  m.local = {r.f64(), r.f64()};
  m.global = {r.f64(), r.f64()};
  m.calibrated = true;
  auto& n = s.score_normalizer;
  n.picturable = {r.f64(), r.f64()};
  n.unpicturable = {r.f64(), r.f64()};
  if (!r.at_end()) fail(ErrorKind::decode, path.string() + ": trailing bytes");
  return s;
}

Detector make_detector(const BackboneBundle& backbone, const Statistics& stats, const PipelineConfig& config) {
  if (stats.gaussian.source != config.features.source)
    fail(ErrorKind::config, std::string("statistics were fit on ") + to_string(stats.gaussian.source) +
                                " features but config requests " + to_string(config.features.source));
  Detector d;
  d.backbone = &backbone;
  d.gaussian = stats.gaussian;
  d.map_normalizer = stats.map_normalizer;
  d.score_normalizer = stats.score_normalizer;
  d.features = config.features;
  return d;
}

void check_provenance(const Statistics& stats, const std::string& checkpoint_hash, bool allow_mismatch) {
  if (stats.checkpoint_hash != checkpoint_hash && !allow_mismatch)
    fail(ErrorKind::config, "statistics were calibrated for checkpoint " + stats.checkpoint_hash.substr(0, 12) +
                                "..., not " + checkpoint_hash.substr(0, 12) + "...; rerun calibrate or pass --allow-mismatch");
}

// ---------------------------------------------------------------------------
// Commands

SplitCounts count_splits(const DatasetBundle& bundle) {
  SplitCounts c;
  if (bundle.has(Split::train)) c.train = bundle.split(Split::train).size();
  if (bundle.has(Split::validation)) c.validation = bundle.split(Split::validation).size();
  if (bundle.has(Split::test)) {
    for (const auto& s : bundle.split(Split::test)) {
      switch (s.label) {
        case Label::normal: ++c.test_normal; break;
        case Label::logical: ++c.test_logical; break;
        case Label::structural: ++c.test_structural; break;
      }
    }
  }
  return c;
}

SplitCounts cmd_generate(const PipelineConfig& config, const fs::path& out_dir, bool force) {
  if (config.source != DatasetSource::synthetic || !config.synth)
    fail(ErrorKind::config, "generate requires dataset.source=synthetic");
  const auto bundle = generate_synthetic(*config.synth);
  const fs::path target = out_dir / bundle.category;
  if (fs::exists(target) && !fs::is_empty(target)) {
    if (!force) fail(ErrorKind::input, "output directory " + target.string() + " is not empty (use --force)");
    fs::remove_all(target);
  }
  export_loco_layout(bundle, target);
  return count_splits(bundle);
}

std::string loss_trace_csv(const BackboneBundle& bundle) {
  std::string out = "step,total,student_teacher,autoencoder,student_autoencoder\n";
  char line[200];
  for (const auto& r : bundle.loss_trace) {
    std::snprintf(line, sizeof(line), "%llu,%.9g,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step), r.total,
                  r.student_teacher, r.autoencoder, r.student_autoencoder);
    out += line;
  }
  return out;
}

BackboneBundle cmd_train(const PipelineConfig& config, const fs::path& checkpoint,
                         const std::optional<fs::path>& resume_from, std::optional<int> steps_override) {
  const auto dataset = resolve_dataset(config);
  BackboneBundle bundle;
  if (resume_from) {
    bundle = load_checkpoint(*resume_from);
    if (bundle.arch != arch_for(config, dataset))
      fail(ErrorKind::config, "checkpoint architecture does not match the configured backbone and dataset");
  } else {
    bundle = init_networks(arch_for(config, dataset), config.seed);
  }
  TrainHParams hp = config.train;
  if (steps_override) hp.steps = *steps_override;
  if (hp.steps > 0) {
    bundle = train(std::move(bundle), dataset.split(Split::train), hp);
  } else if (!resume_from) {
    fail(ErrorKind::config, "train.steps must be >= 1 for a fresh run");
  }
  save_checkpoint(checkpoint, bundle);
  if (!bundle.loss_trace.empty() || !resume_from) {
    write_text(fs::path(checkpoint.string() + ".loss.csv"), loss_trace_csv(bundle));
  }
  return bundle;
}

Statistics cmd_calibrate(const PipelineConfig& config, const fs::path& checkpoint, const fs::path& statistics) {
  const auto dataset = resolve_dataset(config);
  const auto bundle = load_checkpoint(checkpoint);
  auto stats = calibrate(bundle, dataset, config);
  stats.checkpoint_hash = checkpoint_hash_of(checkpoint);
  save_statistics(statistics, stats);
  return stats;
}

ImageScores cmd_score(const PipelineConfig& config, const fs::path& checkpoint, const fs::path& statistics,
                      const fs::path& image_path, const ScoreOutputs& outputs, bool allow_mismatch) {
  const auto bundle = load_checkpoint(checkpoint);
  const auto stats = load_statistics(statistics);
  check_provenance(stats, checkpoint_hash_of(checkpoint), allow_mismatch);
  Image image = read_png(image_path);
  if (config.resize) image = resize_bilinear(image, config.resize->first, config.resize->second);
  const auto detector = make_detector(bundle, stats, config);
  auto scores = score_image(detector, image);
  if (!outputs.heatmap_png.empty()) write_heatmap_png(outputs.heatmap_png, scores.combined, 0.2);
  if (!outputs.raw_map.empty()) write_map_raw(outputs.raw_map, scores.combined);
  return scores;
}

ScoreReport cmd_evaluate(const PipelineConfig& config, const fs::path& checkpoint, const fs::path& statistics,
                         BranchMode mode, const fs::path& report_json_path, const fs::path& report_csv_path,
                         bool allow_mismatch) {
  const auto bundle = load_checkpoint(checkpoint);
  const auto stats = load_statistics(statistics);
  check_provenance(stats, checkpoint_hash_of(checkpoint), allow_mismatch);
  const auto dataset = resolve_dataset(config);
  const auto detector = make_detector(bundle, stats, config);
  EvaluateOptions options;
  options.mode = mode;
  options.workers = config.workers;
  auto report = evaluate(detector, dataset.split(Split::test), options);
  write_report(report, report_json_path, report_csv_path);
  return report;
}

BenchResult cmd_bench(const PipelineConfig& config, const fs::path& checkpoint, const fs::path& statistics,
                      bool allow_mismatch) {
  const auto bundle = load_checkpoint(checkpoint);
  const auto stats = load_statistics(statistics);
  check_provenance(stats, checkpoint_hash_of(checkpoint), allow_mismatch);
  const auto dataset = resolve_dataset(config);
  const auto detector = make_detector(bundle, stats, config);
  std::vector<Image> images;
  for (const auto& s : dataset.split(Split::test)) images.push_back(s.pixels);
  return bench(detector, images, config.bench_warmup, config.bench_runs);
}

}  // namespace dualad
