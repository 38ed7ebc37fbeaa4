#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dualad/backbone.hpp"
#include "dualad/binary_io.hpp"
#include "dualad/tensor.hpp"

namespace dualad {

/// Network output whose pooled features feed the Gaussian model.
///
/// The autoencoder and the student's latter half are intentionally not
/// offered: they are trained to reproduce a bottlenecked reconstruction and
/// lose the part-level detail that count-style anomalies depend on.
enum class FeatureSource : std::uint8_t { teacher = 0, student_former = 1 };

const char* to_string(FeatureSource source);
FeatureSource parse_feature_source(const std::string& text);

struct FeatureSourceConfig {
  FeatureSource source = FeatureSource::student_former;
  SizeTag size = SizeTag::S;
};

using FeatureVector = std::vector<double>;

/// Global average pooling: one spatial mean per channel.
FeatureVector gap(const FeatureMap& map);

/// Multivariate Gaussian over pooled features with a ridge-regularized
/// Cholesky factor of (covariance + epsilon * I).
struct GaussianModel {
  std::vector<double> mean;
  std::vector<double> covariance;  // row-major dim x dim, divisor n - 1
  std::vector<double> factor;      // lower-triangular, row-major
  double epsilon = 0.0;
  FeatureSource source = FeatureSource::student_former;
  std::uint64_t sample_count = 0;

  std::size_t dim() const { return mean.size(); }
};

/// Default ridge: 1e-3 * trace(covariance) / dim.
double default_ridge(std::span<const double> covariance, std::size_t dim);

/// Mean and unbiased covariance of the vectors. With no epsilon given the
/// default ridge is used.
GaussianModel fit_gaussian(std::span<const FeatureVector> vectors, std::optional<double> epsilon, FeatureSource source);

/// Rebuilds a model from stored moments, recomputing the factor.
GaussianModel make_gaussian(std::vector<double> mean, std::vector<double> covariance, double epsilon,
                            FeatureSource source, std::uint64_t sample_count);

/// sqrt((v - mean)^T (covariance + epsilon I)^-1 (v - mean)) via a forward
/// substitution against the stored factor.
double mahalanobis(const GaussianModel& model, std::span<const double> v);

const FeatureMap& select_source(const RawOutputs& outputs, FeatureSource source);

/// forward -> selected map -> gap -> mahalanobis.
double unpicturable_score(const BackboneBundle& bundle, const GaussianModel& model, const Image& image,
                          const FeatureSourceConfig& cfg);

/// Gaussian section of the statistics container.
void write_gaussian(ByteWriter& w, const GaussianModel& model);
GaussianModel read_gaussian(ByteReader& r);

/// Standalone statistics file: "DUALADGM", u32 version, then the Gaussian section
/// (u8 source, f64 epsilon, u64 sample_count, f64 arrays for mean and covariance).
void save_gaussian(const std::filesystem::path& path, const GaussianModel& model);
GaussianModel load_gaussian(const std::filesystem::path& path);

}  // namespace dualad
