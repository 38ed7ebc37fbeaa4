#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dualad/dataset.hpp"
#include "dualad/nn.hpp"
#include "dualad/tensor.hpp"

namespace dualad {

enum class SizeTag : std::uint8_t { S = 0, M = 1 };
enum class TeacherMode : std::uint8_t { frozen_random = 0, distilled = 1 };
enum class Optimizer : std::uint8_t { sgd, adam };

const char* to_string(SizeTag tag);
SizeTag parse_size_tag(const std::string& text);
TeacherMode parse_teacher_mode(const std::string& text);
Optimizer parse_optimizer(const std::string& text);

/// Architecture record shared by all three networks.
///
/// The teacher and student are four-conv patch extractors with two 2x2
/// average-pooling stages (output stride 4); the autoencoder squeezes to a 1/16-resolution bottleneck and
/// upsamples back to the feature resolution.
struct Arch {
  int in_channels = 1;
  int in_height = 64;
  int in_width = 64;
  int out_channels = 16;
  int out_height = 16;
  int out_width = 16;
  SizeTag size = SizeTag::S;
  int hidden1 = 16;  // first feature-extractor conv
  int hidden2 = 32;  // second and third feature-extractor convs
  int ae_hidden = 16;
  int ae_bottleneck = 8;

  friend bool operator==(const Arch&, const Arch&) = default;
};

/// Documented defaults for a size tag. `out_channels` <= 0 keeps the tag default.
Arch default_arch(SizeTag size, int in_channels, int in_height, int in_width, int out_channels = 0);

struct LossRecord {
  std::uint64_t step = 0;
  double total = 0.0;
  double student_teacher = 0.0;
  double autoencoder = 0.0;
  double student_autoencoder = 0.0;
};

struct BackboneBundle {
  Arch arch;
  nn::Network teacher;
  nn::Network student;      // 2 * out_channels outputs: [former | latter]
  nn::Network autoencoder;
  // Channel-wise standardization applied to raw teacher outputs. Identity until
  // the first train() call estimates it on the training set.
  std::vector<float> teacher_mean;
  std::vector<float> teacher_std;
  bool trained = false;
  std::uint64_t steps_done = 0;
  std::vector<LossRecord> loss_trace;
};

struct RawOutputs {
  FeatureMap teacher;
  FeatureMap student_former;
  FeatureMap student_latter;
  FeatureMap autoencoder;
};

struct TrainHParams {
  int steps = 500;
  Optimizer optimizer = Optimizer::sgd;
  double learning_rate = 3e-2;
  double momentum = 0.9;  // sgd only; adam uses fixed betas (0.9, 0.999)
  int batch_size = 8;
  std::uint64_t seed = 0;
  TeacherMode teacher_mode = TeacherMode::frozen_random;
};

/// Builds and deterministically initializes the three networks.
BackboneBundle init_networks(const Arch& arch, std::uint64_t seed);

/// Trains student and autoencoder with plain MSE objectives:
///   student former half -> teacher, autoencoder -> teacher,
///   student latter half -> autoencoder (autoencoder output treated as constant).
/// Teacher weights are never modified.
BackboneBundle train(BackboneBundle bundle, const std::vector<ImageSample>& trainset, const TrainHParams& hp);

RawOutputs forward(const BackboneBundle& bundle, const Image& image);
std::vector<RawOutputs> forward_batch(const BackboneBundle& bundle, std::span<const Image> images);

/// Teacher output after standardization, without running the other networks.
FeatureMap teacher_forward(const BackboneBundle& bundle, const FeatureMap& input);

/// Serialized checkpoint bytes (see README for the layout).
std::vector<std::uint8_t> checkpoint_bytes(const BackboneBundle& bundle);
BackboneBundle parse_checkpoint(std::vector<std::uint8_t> bytes, const std::string& source);
void save_checkpoint(const std::filesystem::path& path, const BackboneBundle& bundle);
BackboneBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace dualad
