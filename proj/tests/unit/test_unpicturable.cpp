#include <cmath>
#include <random>

#include "checks.hpp"
#include "doctest.h"
#include "dualad/dataset.hpp"
#include "dualad/unpicturable.hpp"
#include "support/oracles.hpp"

using namespace dualad;

namespace {

std::vector<FeatureVector> random_vectors(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g(0.0, 1.0);
  // Correlated data: x = A z + b with a fixed random A.
  std::vector<double> a(d * d), b(d);
  for (auto& v : a) v = g(rng);
  for (auto& v : b) v = 3.0 * g(rng);
  std::vector<FeatureVector> out(n, FeatureVector(d));
  for (auto& x : out) {
    FeatureVector z(d);
    for (auto& v : z) v = g(rng);
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = b[i];
      for (std::size_t j = 0; j < d; ++j) x[i] += a[i * d + j] * z[j];
    }
  }
  return out;
}

GaussianModel diag_model(std::vector<double> mean, std::vector<double> diag) {
  const std::size_t d = mean.size();
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) cov[i * d + i] = diag[i];
  return make_gaussian(std::move(mean), std::move(cov), 0.0, FeatureSource::teacher, 10);
}

}  // namespace

TEST_SUITE("unpicturable") {

TEST_CASE("gap: constants, small arithmetic, loop oracle and linearity") {
  FeatureMap m(3, 4, 5);
  for (int c = 0; c < 3; ++c)
    for (auto& v : m.channel(c)) v = static_cast<float>(c) - 0.5f;
  const auto g = gap(m);
  CHECK(g == FeatureVector{-0.5, 0.5, 1.5});

  FeatureMap s(1, 2, 2);
  s.data = {1, 2, 3, 4};
  CHECK(gap(s) == FeatureVector{2.5});

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto r = oracle::random_map(rng, 16, 16, 16, -5, 5);
    const auto got = gap(r);
    const auto want = oracle::gap(r);
    for (std::size_t c = 0; c < got.size(); ++c) CHECK(std::abs(got[c] - want[c]) <= 1e-12);
  }

  // Coefficients and entries are dyadic so the float combination is exact.
  std::uniform_int_distribution<int> k(-64, 64);
  FeatureMap a(4, 8, 8), b(4, 8, 8), mix(4, 8, 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.data[i] = static_cast<float>(k(rng)) / 16.0f;
    b.data[i] = static_cast<float>(k(rng)) / 16.0f;
    mix.data[i] = 2.5f * a.data[i] - 0.75f * b.data[i];
  }
  const auto ga = gap(a), gb = gap(b), gm = gap(mix);
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(gm[c] - (2.5 * ga[c] - 0.75 * gb[c])) <= 1e-12);

  CHECK_FAILS_WITH(ErrorKind::input, gap(FeatureMap(3, 0, 4)));
}

TEST_CASE("fit: zero-variance data with a positive ridge") {
  const FeatureVector v{1.0, -2.0, 0.5};
  const std::vector<FeatureVector> copies(5, v);
  const auto m = fit_gaussian(copies, 0.25, FeatureSource::student_former);
  CHECK(m.mean == v);
  for (double c : m.covariance) CHECK(c == 0.0);
  CHECK(m.epsilon == 0.25);
  CHECK(m.sample_count == 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(m.factor[i * 3 + j] == doctest::Approx(i == j ? 0.5 : 0.0));
  CHECK(mahalanobis(m, FeatureVector{2.0, -2.0, 0.5}) == doctest::Approx(2.0));
}

TEST_CASE("fit: covariance matches the two-pass oracle within 1e-10") {
  std::mt19937_64 rng(2);
  for (std::size_t d : {1u, 4u, 8u}) {
    const auto xs = random_vectors(rng, 50, d);
    std::vector<double> mean;
    const auto want = oracle::covariance(xs, &mean);
    const auto m = fit_gaussian(xs, std::nullopt, FeatureSource::teacher);
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(m.mean[i] - mean[i]) <= 1e-10);
    for (std::size_t i = 0; i < d * d; ++i) CHECK(std::abs(m.covariance[i] - want[i]) <= 1e-10);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double x = m.covariance[i * d + j], y = m.covariance[j * d + i];
        CHECK(std::abs(x - y) <= 1e-12 * std::max(1.0, std::abs(x)));
      }
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += want[i * d + i];
    CHECK(m.epsilon == doctest::Approx(1e-3 * trace / d));
  }
}

TEST_CASE("fit: error paths") {
  std::mt19937_64 rng(3);
  const auto few = random_vectors(rng, 3, 6);  // n < d: rank deficient
  const auto msg = CHECK_FAILS_WITH(ErrorKind::numeric, fit_gaussian(few, 0.0, FeatureSource::teacher));
  CHECK(msg.find("epsilon") != std::string::npos);
  CHECK_NOTHROW(fit_gaussian(few, std::nullopt, FeatureSource::teacher));
  CHECK_FAILS_WITH(ErrorKind::input, fit_gaussian(std::vector<FeatureVector>{{1.0, 2.0}}, 0.1, FeatureSource::teacher));
  CHECK_FAILS_WITH(ErrorKind::input,
                   fit_gaussian(std::vector<FeatureVector>{{1.0, 2.0}, {1.0}}, 0.1, FeatureSource::teacher));
  CHECK_FAILS_WITH(ErrorKind::config, fit_gaussian(random_vectors(rng, 5, 2), -1.0, FeatureSource::teacher));
}

TEST_CASE("mahalanobis closed forms") {
  const auto id = diag_model({0.0, 0.0}, {1.0, 1.0});
  CHECK(mahalanobis(id, FeatureVector{3.0, 4.0}) == doctest::Approx(5.0));
  CHECK(mahalanobis(id, FeatureVector{0.0, 0.0}) == 0.0);
  const auto d = diag_model({1.0, 2.0}, {4.0, 9.0});
  CHECK(mahalanobis(d, FeatureVector{3.0, 5.0}) == doctest::Approx(std::sqrt(2.0)));
  CHECK(mahalanobis(d, FeatureVector{1.0, 2.0}) == 0.0);
  CHECK_FAILS_WITH(ErrorKind::input, mahalanobis(d, FeatureVector{1.0}));
}

TEST_CASE("mahalanobis matches the explicit-inverse oracle within 1e-8 relative") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 2.0);
  for (std::size_t d : {2u, 5u, 8u}) {
    const auto xs = random_vectors(rng, 40, d);
    for (double eps : {0.0, 0.3}) {
      const auto m = fit_gaussian(xs, eps, FeatureSource::teacher);
      for (int q = 0; q < 10; ++q) {
        FeatureVector v(d);
        for (auto& x : v) x = g(rng);
        const double got = mahalanobis(m, v);
        const double want = oracle::mahalanobis(m.mean, m.covariance, eps, v);
        CHECK(std::abs(got - want) <= 1e-8 * want);
        CHECK(got >= 0.0);
      }
    }
  }
}

TEST_CASE("mahalanobis is invariant under invertible linear maps of the data") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t d : {3u, 8u}) {
    const auto xs = random_vectors(rng, 60, d);
    std::vector<double> l(d * d);
    for (auto& v : l) v = g(rng);
    for (std::size_t i = 0; i < d; ++i) l[i * d + i] += 3.0;  // keep it comfortably invertible
    auto apply = [&](const FeatureVector& x) {
      FeatureVector y(d, 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) y[i] += l[i * d + j] * x[j];
      return y;
    };
    std::vector<FeatureVector> ys;
    for (const auto& x : xs) ys.push_back(apply(x));
    const auto mx = fit_gaussian(xs, 0.0, FeatureSource::teacher);
    const auto my = fit_gaussian(ys, 0.0, FeatureSource::teacher);
    for (int q = 0; q < 10; ++q) {
      FeatureVector v(d);
      for (auto& x : v) x = 2.0 * g(rng);
      const double a = mahalanobis(mx, v), b = mahalanobis(my, apply(v));
      CHECK(std::abs(a - b) <= 1e-6 * a);
    }
  }
}

TEST_CASE("feature sources: only teacher and student former half are accepted") {
  CHECK(parse_feature_source("teacher") == FeatureSource::teacher);
  CHECK(parse_feature_source("student_former") == FeatureSource::student_former);
  CHECK_FAILS_WITH(ErrorKind::config, parse_feature_source("autoencoder"));
  CHECK_FAILS_WITH(ErrorKind::config, parse_feature_source("student_latter"));
  RawOutputs out;
  out.teacher = FeatureMap(1, 1, 1, 1.0f);
  out.student_former = FeatureMap(1, 1, 1, 2.0f);
  CHECK(&select_source(out, FeatureSource::teacher) == &out.teacher);
  CHECK(&select_source(out, FeatureSource::student_former) == &out.student_former);
}

TEST_CASE("gaussian file round trip recomputes the factor") {
  std::mt19937_64 rng(6);
  const auto m = fit_gaussian(random_vectors(rng, 20, 4), std::nullopt, FeatureSource::teacher);
  oracle::TempDir dir("gauss");
  save_gaussian(dir / "g.bin", m);
  const auto back = load_gaussian(dir / "g.bin");
  CHECK(back.mean == m.mean);
  CHECK(back.covariance == m.covariance);
  CHECK(back.factor == m.factor);
  CHECK(back.epsilon == m.epsilon);
  CHECK(back.source == m.source);
  CHECK(back.sample_count == 20);
  oracle::write_text(dir / "junk.bin", "DUALADGM");
  CHECK_FAILS_WITH(ErrorKind::decode, load_gaussian(dir / "junk.bin"));
}

TEST_CASE("end to end: count anomalies score above held-out normals") {
  SynthConfig c;
  c.train_count = 100;
  c.validation_count = 20;
  c.test_normal_count = 2;
  c.test_picturable_count = 2;
  c.test_unpicturable_count = 20;
  c.seed = 11;
  const auto data = generate_synthetic(c);
  TrainHParams hp;
  hp.steps = 200;
  hp.seed = 11;
  const auto b = train(init_networks(default_arch(SizeTag::S, 1, 64, 64), 11), data.split(Split::train), hp);

  FeatureSourceConfig cfg;
  std::vector<FeatureVector> feats;
  for (const auto& s : data.split(Split::train)) feats.push_back(gap(forward(b, s.pixels).student_former));
  const auto model = fit_gaussian(feats, std::nullopt, cfg.source);

  const double train_score = unpicturable_score(b, model, data.split(Split::train)[0].pixels, cfg);
  CHECK(std::isfinite(train_score));
  CHECK(train_score >= 0.0);

  double normal = 0.0, logical = 0.0;
  for (const auto& s : data.split(Split::validation)) normal += unpicturable_score(b, model, s.pixels, cfg) / 20.0;
  for (const auto& s : data.split(Split::test))
    if (s.label == Label::logical) logical += unpicturable_score(b, model, s.pixels, cfg) / 20.0;
  MESSAGE("mean distance: validation " << normal << ", unpicturable " << logical);
  CHECK(normal < logical);

  FeatureSourceConfig wrong;
  wrong.source = FeatureSource::teacher;
  CHECK_FAILS_WITH(ErrorKind::config, unpicturable_score(b, model, data.split(Split::train)[0].pixels, wrong));
  const auto untrained = init_networks(default_arch(SizeTag::S, 1, 64, 64), 11);
  CHECK_FAILS_WITH(ErrorKind::state, unpicturable_score(untrained, model, data.split(Split::train)[0].pixels, cfg));
}

}  // TEST_SUITE
