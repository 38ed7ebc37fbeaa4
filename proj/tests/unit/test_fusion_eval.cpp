#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "checks.hpp"
#include "doctest.h"
#include "dualad/fusion_eval.hpp"
#include "json.hpp"
#include "support/oracles.hpp"

using namespace dualad;

namespace {

std::vector<double> random_scores(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = u(rng);
  return out;
}

std::vector<std::size_t> ranking(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  return idx;
}

// A small trained detector assembled directly from the module APIs.
struct Fixture {
  DatasetBundle data;
  BackboneBundle backbone;
  Detector detector;

  Fixture() {
    SynthConfig c;
    c.train_count = 60;
    c.validation_count = 12;
    c.test_normal_count = 10;
    c.test_picturable_count = 8;
    c.test_unpicturable_count = 8;
    c.seed = 5;
    data = generate_synthetic(c);
    TrainHParams hp;
    hp.steps = 60;
    hp.seed = 5;
    backbone = train(init_networks(default_arch(SizeTag::S, 1, 64, 64), 5), data.split(Split::train), hp);

    detector.backbone = &backbone;
    const auto tr = collect_branch_inputs(backbone, data.split(Split::train), detector.features.source);
    detector.gaussian = fit_gaussian(tr.features, std::nullopt, detector.features.source);
    const auto val = collect_branch_inputs(backbone, data.split(Split::validation), detector.features.source);
    detector.map_normalizer = calibrate_map_normalizer(val.local, val.global);
    std::vector<double> p, u;
    for (std::size_t i = 0; i < val.local.size(); ++i) {
      p.push_back(picturable_score(combined_map(val.local[i], val.global[i], detector.map_normalizer)));
      u.push_back(mahalanobis(detector.gaussian, val.features[i]));
    }
    detector.score_normalizer = calibrate_score_normalizer(p, u);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_SUITE("fusion_eval") {

TEST_CASE("population moments and score normalizer calibration") {
  const std::vector<double> s{1, 2, 3};
  const auto m = population_moments(s);
  CHECK(m.mean == doctest::Approx(2.0));
  CHECK(m.stddev == doctest::Approx(std::sqrt(2.0 / 3.0)));

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto xs = random_scores(rng, 37, -4.0, 9.0);
    const auto got = population_moments(xs);
    const auto [mean, sd] = oracle::moments(xs);
    CHECK(std::abs(got.mean - mean) <= 1e-12);
    CHECK(std::abs(got.stddev - sd) <= 1e-12);
  }

  const std::vector<double> flat{0.4, 0.4, 0.4};
  auto msg = CHECK_FAILS_WITH(ErrorKind::calibration, calibrate_score_normalizer(flat, s));
  CHECK(msg.find("picturable") != std::string::npos);
  msg = CHECK_FAILS_WITH(ErrorKind::calibration, calibrate_score_normalizer(s, flat));
  CHECK(msg.find("unpicturable") != std::string::npos);
  CHECK_FAILS_WITH(ErrorKind::calibration, calibrate_score_normalizer(std::vector<double>{1.0}, s));
}

TEST_CASE("normalize centers and scales per branch") {
  const std::vector<double> s{1, 2, 3};
  const auto n = calibrate_score_normalizer(s, std::vector<double>{10, 20, 60});
  CHECK(normalize(n, Branch::picturable, 2.0) == 0.0);
  CHECK(normalize(n, Branch::picturable, 3.0) == doctest::Approx(1.224745).epsilon(1e-6));
  CHECK(normalize(n, Branch::unpicturable, 30.0) == doctest::Approx(0.0));
  CHECK(parse_branch("unpicturable") == Branch::unpicturable);
  CHECK_FAILS_WITH(ErrorKind::input, parse_branch("fusion"));

  std::mt19937_64 rng(2);
  const auto p = random_scores(rng, 50, 0.0, 0.3);
  const auto u = random_scores(rng, 50, 5.0, 40.0);
  const auto cal = calibrate_score_normalizer(p, u);
  for (auto [branch, xs] : {std::pair{Branch::picturable, &p}, std::pair{Branch::unpicturable, &u}}) {
    std::vector<double> z;
    for (double x : *xs) z.push_back(normalize(cal, branch, x));
    const auto [mean, sd] = oracle::moments(z);
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(sd - 1.0) <= 1e-9);
  }
}

TEST_CASE("fuse is a plain sum of finite inputs") {
  CHECK(fuse(0.0, 0.0) == 0.0);
  CHECK(fuse(1.5, -0.5) == 1.0);
  CHECK(fuse(0.1, 0.2) < fuse(0.1 + 1e-9, 0.2));
  CHECK(fuse(0.1, 0.2) < fuse(0.1, 0.2 + 1e-9));
  CHECK_FAILS_WITH(ErrorKind::numeric, fuse(NAN, 0.0));
  CHECK_FAILS_WITH(ErrorKind::numeric, fuse(0.0, INFINITY));
}

TEST_CASE("auroc conventions") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> l{0, 0, 1, 1};
  CHECK(auroc(s, l) == 1.0);
  CHECK(auroc(std::vector<double>(6, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0}) == 0.5);
  CHECK(auroc(std::vector<double>{0.9, 0.1}, std::vector<int>{0, 1}) == 0.0);
  CHECK_FAILS_WITH(ErrorKind::evaluation, auroc(s, std::vector<int>{1, 1, 1, 1}));
  CHECK_FAILS_WITH(ErrorKind::evaluation, auroc(s, std::vector<int>{0, 1}));
}

TEST_CASE("auroc equals the pairwise oracle and ignores monotone transforms") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.4);
  std::uniform_int_distribution<int> grid(0, 40);  // coarse grid forces many ties
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> scores(200);
    std::vector<int> labels(200);
    for (std::size_t i = 0; i < 200; ++i) {
      labels[i] = coin(rng) ? 1 : 0;
      scores[i] = grid(rng) / 40.0 + 0.3 * labels[i] * (trial % 2);
    }
    labels[0] = 0;
    labels[1] = 1;
    const double got = auroc(scores, labels);
    CHECK(std::abs(got - oracle::auroc(scores, labels)) <= 1e-12);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);

    std::vector<double> warped;
    for (double x : scores) warped.push_back(std::exp(3.0 * x) - 7.0);
    CHECK(auroc(warped, labels) == got);
  }
}

TEST_CASE("fused ranking survives positive affine rescaling of a branch before calibration") {
  std::mt19937_64 rng(4);
  const auto vp = random_scores(rng, 30), vu = random_scores(rng, 30, 2.0, 9.0);
  const auto tp = random_scores(rng, 60), tu = random_scores(rng, 60, 2.0, 9.0);
  auto fused_scores = [](const std::vector<double>& vp, const std::vector<double>& vu, const std::vector<double>& tp,
                         const std::vector<double>& tu) {
    const auto n = calibrate_score_normalizer(vp, vu);
    std::vector<double> out;
    for (std::size_t i = 0; i < tp.size(); ++i)
      out.push_back(fuse(normalize(n, Branch::picturable, tp[i]), normalize(n, Branch::unpicturable, tu[i])));
    return out;
  };
  const auto base = fused_scores(vp, vu, tp, tu);
  auto affine = [](std::vector<double> xs, double a, double b) {
    for (auto& x : xs) x = a * x + b;
    return xs;
  };
  CHECK(ranking(fused_scores(affine(vp, 7.5, -3.0), vu, affine(tp, 7.5, -3.0), tu)) == ranking(base));
  CHECK(ranking(fused_scores(vp, affine(vu, 0.01, 100.0), tp, affine(tu, 0.01, 100.0))) == ranking(base));
}

TEST_CASE("evaluate: records, subset aurocs against the oracle, absent subsets, latency") {
  auto& f = fixture();
  const auto& test = f.data.split(Split::test);
  const auto report = evaluate(f.detector, test);
  REQUIRE(report.records.size() == test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(report.records[i].id == test[i].id);
    CHECK(report.records[i].final_score == report.records[i].fused);
  }

  auto column = [](const SampleRecord& r, const std::string& c) {
    return c == "picturable" ? r.picturable : c == "unpicturable" ? r.unpicturable : c == "fused" ? r.fused : r.final_score;
  };
  auto member = [](const SampleRecord& r, const std::string& subset) {
    if (r.label == Label::normal || subset == "all") return true;
    if (subset == "logical") return r.label == Label::logical;
    if (subset == "structural") return r.label == Label::structural;
    return r.family && to_string(*r.family) == subset;
  };
  for (const auto& c : score_columns())
    for (const auto& subset : subset_names()) {
      std::vector<double> s;
      std::vector<int> l;
      for (const auto& r : report.records)
        if (member(r, subset)) {
          s.push_back(column(r, c));
          l.push_back(r.label == Label::normal ? 0 : 1);
        }
      const auto got = report.get_auroc(c, subset);
      REQUIRE(got.has_value());
      CHECK(*got == oracle::auroc(s, l));
    }

  std::vector<ImageSample> no_logical;
  for (const auto& s : test)
    if (s.label != Label::logical) no_logical.push_back(s);
  const auto partial = evaluate(f.detector, no_logical);
  CHECK_FALSE(partial.get_auroc("fused", "logical").has_value());
  CHECK_FALSE(partial.get_auroc("fused", "unpicturable").has_value());
  CHECK(partial.get_auroc("fused", "structural").has_value());

  for (const auto& name : stage_names()) CHECK(report.latency.count(name) == 1);
  double stages = 0.0;
  for (const char* s : {"backbone", "picturable", "unpicturable", "fusion"}) stages += report.latency.at(s).mean_ms;
  const double total = report.latency.at("total").mean_ms;
  CHECK(stages <= total * 1.05 + 0.05);
  CHECK(stages >= total * 0.8 - 0.05);
}

TEST_CASE("evaluate is deterministic and independent of the worker count") {
  auto& f = fixture();
  const auto& test = f.data.split(Split::test);
  const auto a = evaluate(f.detector, test);
  EvaluateOptions opts;
  opts.workers = 3;
  const auto b = evaluate(f.detector, test, opts);
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(a.records[i].picturable == b.records[i].picturable);
    CHECK(a.records[i].unpicturable == b.records[i].unpicturable);
    CHECK(a.records[i].fused == b.records[i].fused);
  }
  opts.workers = 1;
  opts.mode = BranchMode::picturable_only;
  const auto p = evaluate(f.detector, test, opts);
  for (const auto& r : p.records) CHECK(r.final_score == r.z_picturable);
  CHECK(*p.get_auroc("final", "all") == *p.get_auroc("picturable", "all"));
  CHECK(parse_branch_mode("unpicturable-only") == BranchMode::unpicturable_only);
  CHECK_FAILS_WITH(ErrorKind::config, parse_branch_mode("both"));
  CHECK_FAILS_WITH(ErrorKind::evaluation, evaluate(f.detector, {}));
}

TEST_CASE("score_image agrees with the branch primitives") {
  auto& f = fixture();
  const auto& img = f.data.split(Split::test).back().pixels;
  const auto s = score_image(f.detector, img);
  const auto out = forward(f.backbone, img);
  const auto map = combined_map(local_map(out.teacher, out.student_former), global_map(out.student_latter, out.autoencoder),
                                f.detector.map_normalizer);
  CHECK(s.picturable == picturable_score(map));
  CHECK(s.unpicturable == unpicturable_score(f.backbone, f.detector.gaussian, img, f.detector.features));
  CHECK(s.fused == s.z_picturable + s.z_unpicturable);
  CHECK(s.z_picturable == normalize(f.detector.score_normalizer, Branch::picturable, s.picturable));
}

TEST_CASE("report serialization") {
  auto& f = fixture();
  const auto report = evaluate(f.detector, f.data.split(Split::test));
  const auto j = nlohmann::json::parse(report_json(report));
  CHECK(j.at("schema_version") == ScoreReport::kSchemaVersion);
  CHECK(j.at("record_count") == report.records.size());
  CHECK(j.at("records").size() == report.records.size());
  CHECK(j.at("auroc").contains("fused"));
  const auto csv = report_csv(report);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(report.records.size() + 1));
  CHECK(csv.rfind("id,label,", 0) == 0);
}

TEST_CASE("latency summaries and bench") {
  const auto st = summarize_latency({0.004, 0.001, 0.002, 0.003});
  CHECK(st.mean_ms == doctest::Approx(2.5));
  CHECK(st.median_ms == doctest::Approx(2.5));
  CHECK(st.p95_ms == doctest::Approx(4.0));

  auto& f = fixture();
  std::vector<Image> images{f.data.split(Split::test)[0].pixels, f.data.split(Split::test)[1].pixels};
  const auto r = bench(f.detector, images, 1, 5);
  CHECK(r.runs == 5);
  for (const auto& name : stage_names()) CHECK(r.stages.at(name).median_ms >= 0.0);
  const auto table = format_bench_table(r);
  CHECK(table.find("unpicturable") != std::string::npos);
  CHECK_FAILS_WITH(ErrorKind::config, bench(f.detector, images, 0, 0));
  CHECK_FAILS_WITH(ErrorKind::input, bench(f.detector, std::span<const Image>{}, 1, 1));
}

}  // TEST_SUITE
