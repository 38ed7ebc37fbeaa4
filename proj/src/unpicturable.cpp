#include "dualad/unpicturable.hpp"

#include <cmath>

#include "dualad/error.hpp"

namespace dualad {

namespace {

constexpr std::string_view kGaussianMagic = "DUALADGM";

// In-place lower Cholesky of a row-major SPD matrix. A pivot below
// `tol * max_diag` counts as a failure so singular inputs are not accepted
// on the strength of rounding noise.
bool cholesky(std::vector<double>& a, std::size_t n) {
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a[i * n + i]));
  const double tol = 1e-12 * std::max(max_diag, 1e-300);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > tol) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    a[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / ljj;
    }
    for (std::size_t k = j + 1; k < n; ++k) a[j * n + k] = 0.0;
  }
  return true;
}

}  // namespace

const char* to_string(FeatureSource source) {
  return source == FeatureSource::teacher ? "teacher" : "student_former";
}

FeatureSource parse_feature_source(const std::string& text) {
  if (text == "teacher") return FeatureSource::teacher;
  if (text == "student_former") return FeatureSource::student_former;
  if (text == "autoencoder" || text == "student_latter")
    fail(ErrorKind::config, "feature source '" + text + "' is not supported; use teacher or student_former");
  fail(ErrorKind::config, "unknown feature source '" + text + "'");
}

FeatureVector gap(const FeatureMap& map) {
  if (map.channels <= 0 || map.plane() == 0) fail(ErrorKind::input, "gap: empty spatial extent");
  FeatureVector out(static_cast<std::size_t>(map.channels));
  const double inv = 1.0 / static_cast<double>(map.plane());
  for (int c = 0; c < map.channels; ++c) {
    double s = 0.0;
    for (float v : map.channel(c)) s += v;
    out[static_cast<std::size_t>(c)] = s * inv;
  }
  return out;
}

double default_ridge(std::span<const double> covariance, std::size_t dim) {
  double trace = 0.0;
  for (std::size_t i = 0; i < dim; ++i) trace += covariance[i * dim + i];
  return 1e-3 * trace / static_cast<double>(dim);
}

GaussianModel make_gaussian(std::vector<double> mean, std::vector<double> covariance, double epsilon,
                            FeatureSource source, std::uint64_t sample_count) {
  const std::size_t d = mean.size();
  if (d == 0 || covariance.size() != d * d) fail(ErrorKind::input, "gaussian: mean/covariance size mismatch");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) fail(ErrorKind::config, "gaussian: epsilon must be >= 0");
  if (sample_count < 2) fail(ErrorKind::input, "gaussian: need at least 2 samples");
  GaussianModel m;
  m.mean = std::move(mean);
  m.covariance = std::move(covariance);
  m.epsilon = epsilon;
  m.source = source;
  m.sample_count = sample_count;
  m.factor = m.covariance;
  for (std::size_t i = 0; i < d; ++i) m.factor[i * d + i] += epsilon;
  if (!cholesky(m.factor, d))
    fail(ErrorKind::numeric, "gaussian: covariance + epsilon*I is not positive definite (epsilon=" +
                                 std::to_string(epsilon) + "); increase epsilon");
  return m;
}

GaussianModel fit_gaussian(std::span<const FeatureVector> vectors, std::optional<double> epsilon, FeatureSource source) {
  if (vectors.size() < 2) fail(ErrorKind::input, "fit_gaussian: need at least 2 feature vectors");
  const std::size_t d = vectors.front().size();
  if (d == 0) fail(ErrorKind::input, "fit_gaussian: empty feature vectors");
  for (const auto& v : vectors)
    if (v.size() != d) fail(ErrorKind::input, "fit_gaussian: feature vectors differ in length");

  const double n = static_cast<double>(vectors.size());
  std::vector<double> mean(d, 0.0);
  for (const auto& v : vectors)
    for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
  for (auto& m : mean) m /= n;

  std::vector<double> cov(d * d, 0.0);
  std::vector<double> centered(d);
  for (const auto& v : vectors) {
    for (std::size_t i = 0; i < d; ++i) centered[i] = v[i] - mean[i];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) cov[i * d + j] += centered[i] * centered[j];
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      cov[i * d + j] /= (n - 1.0);
      cov[j * d + i] = cov[i * d + j];
    }

  const double eps = epsilon ? *epsilon : default_ridge(cov, d);
  return make_gaussian(std::move(mean), std::move(cov), eps, source, vectors.size());
}

double mahalanobis(const GaussianModel& model, std::span<const double> v) {
  const std::size_t d = model.dim();
  if (v.size() != d)
    fail(ErrorKind::input, "mahalanobis: expected length " + std::to_string(d) + ", got " + std::to_string(v.size()));
  if (model.factor.size() != d * d) fail(ErrorKind::state, "mahalanobis: model is not factorized");
  // Solve L z = v - mean; the squared distance is |z|^2.
  std::vector<double> z(d);
  double sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double s = v[i] - model.mean[i];
    for (std::size_t k = 0; k < i; ++k) s -= model.factor[i * d + k] * z[k];
    z[i] = s / model.factor[i * d + i];
    sq += z[i] * z[i];
  }
  return std::sqrt(sq);
}

const FeatureMap& select_source(const RawOutputs& outputs, FeatureSource source) {
  return source == FeatureSource::teacher ? outputs.teacher : outputs.student_former;
}

double unpicturable_score(const BackboneBundle& bundle, const GaussianModel& model, const Image& image,
                          const FeatureSourceConfig& cfg) {
  if (model.source != cfg.source)
    fail(ErrorKind::config, std::string("unpicturable_score: model was fit on ") + to_string(model.source) +
                                " features but config requests " + to_string(cfg.source));
  if (bundle.arch.size != cfg.size)
    fail(ErrorKind::config, std::string("unpicturable_score: backbone size ") + to_string(bundle.arch.size) +
                                " does not match configured size " + to_string(cfg.size));
  if (!bundle.trained) fail(ErrorKind::state, "unpicturable_score: backbone is not trained");
  const auto outputs = forward(bundle, image);
  return mahalanobis(model, gap(select_source(outputs, cfg.source)));
}

void write_gaussian(ByteWriter& w, const GaussianModel& m) {
  w.u8(static_cast<std::uint8_t>(m.source));
  w.f64(m.epsilon);
  w.u64(m.sample_count);
  w.f64_array(m.mean);
  w.f64_array(m.covariance);
}

GaussianModel read_gaussian(ByteReader& r) {
  const auto src = r.u8();
  if (src > 1) fail(ErrorKind::decode, r.source() + ": bad feature source tag");
  const double eps = r.f64();
  const auto n = r.u64();
  auto mean = r.f64_array(1u << 16);
  auto cov = r.f64_array(mean.size() * mean.size());
  if (cov.size() != mean.size() * mean.size()) fail(ErrorKind::decode, r.source() + ": covariance size mismatch");
  return make_gaussian(std::move(mean), std::move(cov), eps, static_cast<FeatureSource>(src), n);
}

void save_gaussian(const std::filesystem::path& path, const GaussianModel& model) {
  ByteWriter w;
  w.magic(kGaussianMagic);
  w.u32(1);
  write_gaussian(w, model);
  w.save(path);
}

GaussianModel load_gaussian(const std::filesystem::path& path) {
  auto r = ByteReader::open(path);
  r.expect_magic(kGaussianMagic);
  if (const auto version = r.u32(); version != 1)
    fail(ErrorKind::decode, path.string() + ": unsupported statistics version " + std::to_string(version));
  auto m = read_gaussian(r);
  if (!r.at_end()) fail(ErrorKind::decode, path.string() + ": trailing bytes");
  return m;
}

}  // namespace dualad
