// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: dualad_acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "dualad/pipeline.hpp"
#include "support/oracles.hpp"

using namespace dualad;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [violated]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::vector<FeatureVector> correlated_vectors(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(d * d), b(d);
  for (auto& v : a) v = g(rng);
  for (auto& v : b) v = 5.0 * g(rng);
  std::vector<FeatureVector> out(n, FeatureVector(d));
  for (auto& x : out)
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = b[i];
      for (std::size_t j = 0; j < d; ++j) x[i] += a[i * d + j] * g(rng);
    }
  return out;
}

// --- 1 ----------------------------------------------------------------------
Outcome oracle_equivalence() {
  Outcome o;
  std::mt19937_64 rng(101);
  double cov_err = 0.0, maha_rel = 0.0, gap_err = 0.0, auroc_err = 0.0;
  for (std::size_t d : {2u, 4u, 8u}) {
    for (std::size_t n : {10u, 50u, 200u}) {
      const auto xs = correlated_vectors(rng, n, d);
      const auto want = oracle::covariance(xs);
      const auto m = fit_gaussian(xs, 0.0, FeatureSource::teacher);
      for (std::size_t i = 0; i < d * d; ++i) cov_err = std::max(cov_err, std::abs(m.covariance[i] - want[i]));
      std::normal_distribution<double> g(0.0, 4.0);
      for (int q = 0; q < 20; ++q) {
        FeatureVector v(d);
        for (auto& x : v) x = g(rng);
        const double ref = oracle::mahalanobis(m.mean, m.covariance, 0.0, v);
        maha_rel = std::max(maha_rel, std::abs(mahalanobis(m, v) - ref) / ref);
      }
    }
  }
  for (int t = 0; t < 10; ++t) {
    const auto fm = oracle::random_map(rng, 16, 8 + t, 12, -10, 10);
    const auto got = gap(fm);
    const auto want = oracle::gap(fm);
    for (std::size_t c = 0; c < got.size(); ++c) gap_err = std::max(gap_err, std::abs(got[c] - want[c]));
  }
  std::uniform_int_distribution<int> grid(0, 50);
  std::bernoulli_distribution coin(0.5);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t) * 4;  // up to 198 scores
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = coin(rng);
      s[i] = (t % 2 ? grid(rng) / 50.0 : std::uniform_real_distribution<double>()(rng)) + 0.2 * l[i];
    }
    l[0] = 0;
    l[1] = 1;
    auroc_err = std::max(auroc_err, std::abs(auroc(s, l) - oracle::auroc(s, l)));
  }
  o.require(cov_err <= 1e-10, "covariance max abs err " + fmt("%.2e", cov_err) + " <= 1e-10");
  o.require(maha_rel <= 1e-8, "mahalanobis max rel err " + fmt("%.2e", maha_rel) + " <= 1e-8");
  o.require(gap_err <= 1e-12, "gap max abs err " + fmt("%.2e", gap_err) + " <= 1e-12");
  o.require(auroc_err <= 1e-12, "auroc max abs err " + fmt("%.2e", auroc_err) + " <= 1e-12");
  return o;
}

// --- 2 ----------------------------------------------------------------------
Outcome mahalanobis_properties() {
  Outcome o;
  std::mt19937_64 rng(202);
  std::normal_distribution<double> g(0.0, 1.0);
  bool nonneg = true, zero_at_mean = true;
  double euclid_err = 0.0, affine_rel = 0.0;
  for (std::size_t d = 1; d <= 8; ++d) {
    const auto xs = correlated_vectors(rng, 40, d);
    const auto m = fit_gaussian(xs, 0.0, FeatureSource::teacher);
    zero_at_mean = zero_at_mean && mahalanobis(m, m.mean) == 0.0;
    for (int q = 0; q < 50; ++q) {
      FeatureVector v(d);
      for (auto& x : v) x = 10.0 * g(rng);
      nonneg = nonneg && mahalanobis(m, v) >= 0.0;
    }

    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    const auto id = make_gaussian(std::vector<double>(d, 0.0), eye, 0.0, FeatureSource::teacher, 2);
    for (int q = 0; q < 20; ++q) {
      FeatureVector v(d);
      double norm = 0.0;
      for (auto& x : v) {
        x = 3.0 * g(rng);
        norm += x * x;
      }
      euclid_err = std::max(euclid_err, std::abs(mahalanobis(id, v) - std::sqrt(norm)) / std::max(1.0, std::sqrt(norm)));
    }

    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> l(d * d);
      for (auto& x : l) x = g(rng);
      for (std::size_t i = 0; i < d; ++i) l[i * d + i] += 2.0;
      auto apply = [&](const FeatureVector& x) {
        FeatureVector y(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) y[i] += l[i * d + j] * x[j];
        return y;
      };
      std::vector<FeatureVector> ys;
      for (const auto& x : xs) ys.push_back(apply(x));
      const auto my = fit_gaussian(ys, 0.0, FeatureSource::teacher);
      for (int q = 0; q < 10; ++q) {
        FeatureVector v(d);
        for (auto& x : v) x = 5.0 * g(rng);
        const double a = mahalanobis(m, v), b = mahalanobis(my, apply(v));
        affine_rel = std::max(affine_rel, std::abs(a - b) / a);
      }
    }
  }
  o.require(nonneg, "non-negative on 400 random queries");
  o.require(zero_at_mean, "zero at the mean");
  o.require(euclid_err <= 1e-12, "identity covariance = Euclidean norm (max rel err " + fmt("%.2e", euclid_err) + ")");
  o.require(affine_rel <= 1e-6, "affine invariance, dims 1..8, eps=0: max rel err " + fmt("%.2e", affine_rel) + " <= 1e-6");
  return o;
}

// --- 3 ----------------------------------------------------------------------
Outcome normalization_identities() {
  Outcome o;
  std::mt19937_64 rng(303);
  double mean_err = 0.0, sd_err = 0.0;
  bool monotone_exact = true;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t) * 10;
    std::lognormal_distribution<double> lp(-2.0, 0.7), lu(2.0, 0.3);
    std::vector<double> p(n), u(n);
    for (auto& x : p) x = lp(rng);
    for (auto& x : u) x = lu(rng);
    const auto cal = calibrate_score_normalizer(p, u);
    for (auto [branch, xs] : {std::pair{Branch::picturable, &p}, std::pair{Branch::unpicturable, &u}}) {
      std::vector<double> z;
      for (double x : *xs) z.push_back(normalize(cal, branch, x));
      const auto [m, sd] = oracle::moments(z);
      mean_err = std::max(mean_err, std::abs(m));
      sd_err = std::max(sd_err, std::abs(sd - 1.0));
    }

    std::vector<double> s(120);
    std::vector<int> l(120);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      l[i] = i % 3 == 0;
      s[i] = std::round(uni(rng) * 64.0) / 64.0 + 0.1 * l[i];
    }
    const double base = auroc(s, l);
    const std::vector<std::function<double(double)>> transforms{
        [](double x) { return std::exp(2.0 * x); }, [](double x) { return x * x * x - 4.0; },
        [](double x) { return std::atan(x) * 8.0 + 1.0; }};
    for (const auto& f : transforms) {
      std::vector<double> w;
      for (double x : s) w.push_back(f(x));
      monotone_exact = monotone_exact && auroc(w, l) == base;
    }
  }
  o.require(mean_err <= 1e-9, "normalized validation mean " + fmt("%.2e", mean_err) + " <= 1e-9");
  o.require(sd_err <= 1e-9, "normalized validation population std err " + fmt("%.2e", sd_err) + " <= 1e-9");
  o.require(monotone_exact, "auroc identical under strictly increasing transforms");
  return o;
}

// --- 4/5/6 ------------------------------------------------------------------
const char* kDichotomyConfig =
    "seed = 7\n"
    "dataset.source = synthetic\n"
    "synth.height = 64\n"
    "synth.width = 64\n"
    "synth.train_count = 200\n"
    "synth.validation_count = 50\n"
    "synth.test_normal_count = 40\n"
    "synth.test_picturable_count = 30\n"
    "synth.test_unpicturable_count = 30\n"
    "train.steps = 500\n";

struct PipelineRun {
  ScoreReport report;
  fs::path checkpoint;
  fs::path statistics;
  PipelineConfig config;
};

PipelineRun run_pipeline(const PipelineConfig& config, const fs::path& dir) {
  PipelineRun r;
  r.config = config;
  r.checkpoint = dir / "checkpoint.bin";
  r.statistics = dir / "statistics.bin";
  cmd_train(config, r.checkpoint);
  cmd_calibrate(config, r.checkpoint, r.statistics);
  r.report = cmd_evaluate(config, r.checkpoint, r.statistics, BranchMode::fused, dir / "report.json", dir / "report.csv");
  return r;
}

Outcome dichotomy(const PipelineRun& run) {
  Outcome o;
  const auto& rep = run.report;
  const double pic_unp = rep.get_auroc("picturable", "unpicturable").value_or(NAN);
  const double unp_unp = rep.get_auroc("unpicturable", "unpicturable").value_or(NAN);
  const double fused = rep.get_auroc("fused", "all").value_or(NAN);
  const double best = std::max(rep.get_auroc("picturable", "all").value_or(NAN), rep.get_auroc("unpicturable", "all").value_or(NAN));
  o.require(pic_unp <= 0.65, "(a) picturable-only AUROC on unpicturable subset " + fmt("%.4f", pic_unp) + " <= 0.65");
  o.require(unp_unp >= 0.90, "(b) unpicturable AUROC on unpicturable subset " + fmt("%.4f", unp_unp) + " >= 0.90");
  o.require(fused >= best - 0.02,
            "(c) fused overall " + fmt("%.4f", fused) + " >= best single " + fmt("%.4f", best) + " - 0.02");
  return o;
}

Outcome latency(const PipelineRun& run) {
  Outcome o;
  const auto b = cmd_bench(run.config, run.checkpoint, run.statistics);
  const double unp = b.stages.at("unpicturable").median_ms;
  const double total = b.stages.at("total").median_ms;
  std::printf("%s", format_bench_table(b).c_str());
  o.require(unp <= 0.10 * total, "unpicturable stage median " + fmt("%.4f", unp) + " ms <= 10% of total " +
                                     fmt("%.4f", total) + " ms (" + fmt("%.2f", 100.0 * unp / total) + "%)");
  return o;
}

Outcome determinism(const fs::path& work) {
  Outcome o;
  auto kv = KeyValueFile::parse(kDichotomyConfig);
  const auto synth_config = parse_pipeline_config(kv);
  double worst = 0.0;
  std::vector<PipelineRun> runs;
  for (const char* name : {"det_a", "det_b"}) {
    const auto dir = work / name;
    fs::remove_all(dir);
    cmd_generate(synth_config, dir / "data", false);
    auto loco = KeyValueFile::parse("seed = 7\ndataset.source = loco\ndataset.path = " +
                                    (dir / "data" / "synthetic").string() + "\ntrain.steps = 500\n");
    runs.push_back(run_pipeline(parse_pipeline_config(loco), dir));
  }
  const auto& a = runs[0].report.records;
  const auto& b = runs[1].report.records;
  bool same_ids = a.size() == b.size();
  for (std::size_t i = 0; same_ids && i < a.size(); ++i) {
    same_ids = a[i].id == b[i].id;
    for (auto [x, y] : {std::pair{a[i].picturable, b[i].picturable}, std::pair{a[i].unpicturable, b[i].unpicturable},
                        std::pair{a[i].z_picturable, b[i].z_picturable},
                        std::pair{a[i].z_unpicturable, b[i].z_unpicturable}, std::pair{a[i].fused, b[i].fused}})
      worst = std::max(worst, std::abs(x - y));
  }
  o.require(same_ids && a.size() == 100, "two generate->train->calibrate->evaluate runs, 100 records each");
  o.require(worst <= 1e-12, "max score-column difference " + fmt("%.2e", worst) + " <= 1e-12");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "dualad-acceptance";
  fs::create_directories(work);
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report(1, "oracle equivalence", oracle_equivalence);
  report(2, "mahalanobis properties", mahalanobis_properties);
  report(3, "normalization identities", normalization_identities);

  std::optional<PipelineRun> run;
  const auto dichotomy_dir = work / "dichotomy";
  report(4, "synthetic dichotomy", [&] {
    fs::remove_all(dichotomy_dir);
    fs::create_directories(dichotomy_dir);
    auto kv = KeyValueFile::parse(kDichotomyConfig);
    run = run_pipeline(parse_pipeline_config(kv), dichotomy_dir);
    return dichotomy(*run);
  });
  report(5, "latency decomposition", [&] {
    if (!run) {
      Outcome o;
      o.require(false, "needs the criterion 4 artifacts");
      return o;
    }
    return latency(*run);
  });
  report(6, "determinism", [&] { return determinism(work); });

  std::printf("%d of 6 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
