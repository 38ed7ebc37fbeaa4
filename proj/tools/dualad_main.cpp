// Command-line front end: generate | train | calibrate | score | evaluate | bench.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dualad/error.hpp"
#include "dualad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dualad;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  bool force = false;
};

PipelineConfig load(const GlobalFlags& g) {
  if (g.config.empty()) fail(ErrorKind::config, "--config is required");
  return load_pipeline_config(g.config, g.seed);
}

fs::path or_default(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback : fs::path(value);
}

void print_auroc(const ScoreReport& report) {
  std::printf("%-14s", "auroc");
  for (const auto& subset : subset_names()) std::printf(" %13s", subset.c_str());
  std::printf("\n");
  for (const auto& column : score_columns()) {
    std::printf("%-14s", column.c_str());
    for (const auto& subset : subset_names()) {
      const auto v = report.get_auroc(column, subset);
      if (v) {
        std::printf(" %13.4f", *v);
      } else {
        std::printf(" %13s", "-");
      }
    }
    std::printf("\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-branch image anomaly detection: anomaly-map and pooled-feature scoring with fused calibration"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "Pipeline config file (key = value)");
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out", g.out, "Output directory for artifacts")->capture_default_str();
  app.add_flag("--force", g.force, "Overwrite a non-empty output directory");

  std::string checkpoint, statistics, resume, image, heatmap, raw_map, branch = "fused";
  std::optional<int> steps;
  bool allow_mismatch = false;

  auto* gen = app.add_subcommand("generate", "Write the synthetic dataset in the category directory layout");

  auto* tr = app.add_subcommand("train", "Train student and autoencoder; writes a checkpoint and loss trace");
  tr->add_option("--checkpoint", checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");
  tr->add_option("--resume", resume, "Continue from an existing checkpoint");
  tr->add_option("--steps", steps, "Override train.steps");

  auto* cal = app.add_subcommand("calibrate", "Fit the Gaussian model and both normalizers");
  auto* sc = app.add_subcommand("score", "Score one image");
  auto* ev = app.add_subcommand("evaluate", "Score the test split and write the report");
  auto* be = app.add_subcommand("bench", "Per-stage latency table");
  for (auto* sub : {cal, sc, ev, be}) {
    sub->add_option("--checkpoint", checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");
  }
  for (auto* sub : {sc, ev, be}) {
    sub->add_option("--statistics", statistics, "Statistics path (default <out>/statistics.bin)");
    sub->add_flag("--allow-mismatch", allow_mismatch, "Accept statistics calibrated for another checkpoint");
  }
  cal->add_option("--statistics", statistics, "Statistics path (default <out>/statistics.bin)");
  sc->add_option("--image", image, "PNG image to score")->required();
  sc->add_option("--heatmap", heatmap, "Write the combined anomaly map as a PNG heatmap");
  sc->add_option("--raw-map", raw_map, "Write the combined anomaly map as raw float32");
  ev->add_option("--branch", branch, "fused | picturable-only | unpicturable-only")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorKind::config);
  }

  const fs::path out(g.out);
  const fs::path ckpt = or_default(checkpoint, out / "checkpoint.bin");
  const fs::path stats = or_default(statistics, out / "statistics.bin");

  try {
    if (*gen) {
      const auto config = load(g);
      const auto counts = cmd_generate(config, out, g.force);
      std::printf("wrote %s\n", (out / config.synth->category).string().c_str());
      std::printf("train/good %zu\nvalidation/good %zu\ntest/good %zu\ntest/logical_anomalies %zu\n"
                  "test/structural_anomalies %zu\n",
                  counts.train, counts.validation, counts.test_normal, counts.test_logical, counts.test_structural);
    } else if (*tr) {
      const auto config = load(g);
      if (resume.empty() && fs::exists(ckpt) && !g.force)
        fail(ErrorKind::input, "checkpoint " + ckpt.string() + " exists (use --force or --resume)");
      std::optional<fs::path> from;
      if (!resume.empty()) from = fs::path(resume);
      const auto bundle = cmd_train(config, ckpt, from, steps);
      const double last = bundle.loss_trace.empty() ? 0.0 : bundle.loss_trace.back().total;
      std::printf("checkpoint %s (steps_done=%llu, final loss %.6g)\n", ckpt.string().c_str(),
                  static_cast<unsigned long long>(bundle.steps_done), last);
    } else if (*cal) {
      const auto config = load(g);
      const auto st = cmd_calibrate(config, ckpt, stats);
      std::printf("statistics %s\n", stats.string().c_str());
      std::printf("gaussian: source=%s dim=%zu n_train=%llu epsilon=%.6g\n", to_string(st.gaussian.source),
                  st.gaussian.dim(), static_cast<unsigned long long>(st.train_count), st.gaussian.epsilon);
      std::printf("map quantiles: local [%.6g, %.6g] global [%.6g, %.6g]\n", st.map_normalizer.local.low,
                  st.map_normalizer.local.high, st.map_normalizer.global.low, st.map_normalizer.global.high);
      std::printf("score normalizer (n_val=%llu): picturable %.6g +- %.6g, unpicturable %.6g +- %.6g\n",
                  static_cast<unsigned long long>(st.validation_count), st.score_normalizer.picturable.mean,
                  st.score_normalizer.picturable.stddev, st.score_normalizer.unpicturable.mean,
                  st.score_normalizer.unpicturable.stddev);
    } else if (*sc) {
      const auto config = load(g);
      const auto s = cmd_score(config, ckpt, stats, image, {heatmap, raw_map}, allow_mismatch);
      std::printf("picturable %.17g\nunpicturable %.17g\nfused %.17g\n", s.picturable, s.unpicturable, s.fused);
    } else if (*ev) {
      const auto config = load(g);
      const auto report = cmd_evaluate(config, ckpt, stats, parse_branch_mode(branch), out / "report.json",
                                       out / "report.csv", allow_mismatch);
      std::printf("%zu records -> %s, %s\n", report.records.size(), (out / "report.json").string().c_str(),
                  (out / "report.csv").string().c_str());
      print_auroc(report);
    } else if (*be) {
      const auto config = load(g);
      std::cout << format_bench_table(cmd_bench(config, ckpt, stats, allow_mismatch));
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
