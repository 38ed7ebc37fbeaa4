#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dualad/tensor.hpp"

namespace dualad::nn {

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  std::size_t weight_offset = 0;  // out x in x k x k, into Network::params
  std::size_t bias_offset = 0;

  int out_extent(int in) const { return (in + 2 * padding - kernel) / stride + 1; }
  std::size_t patch_size() const { return static_cast<std::size_t>(in_channels) * kernel * kernel; }
  std::size_t weight_count() const { return patch_size() * out_channels; }
};

enum class LayerKind : std::uint8_t { conv, relu, upsample2, avgpool2 };

struct Layer {
  LayerKind kind = LayerKind::relu;
  Conv2d conv;  // only meaningful for LayerKind::conv
};

/// Activations retained by a training forward pass.
struct Trace {
  std::vector<FeatureMap> inputs;          // input to each layer
  std::vector<std::vector<float>> cols;    // unfolded patches for conv layers
};

/// A feed-forward stack of conv / ReLU / nearest-upsample layers.
///
/// All parameters live in one flat array in declaration order (per conv:
/// weights then bias), which is also the checkpoint order.
class Network {
 public:
  Network() = default;

  void add_conv(int in_channels, int out_channels, int kernel, int stride, int padding);
  void add_relu();
  void add_upsample2();
  void add_avgpool2();

  /// He-uniform weights, zero biases.
  void initialize(std::uint64_t seed);

  FeatureMap forward(const FeatureMap& x) const;
  FeatureMap forward(const FeatureMap& x, Trace& trace) const;

  /// Accumulates parameter gradients into `grad` (same size as params).
  void backward(const Trace& trace, const FeatureMap& grad_out, std::span<float> grad) const;

  /// Output shape for an input of the given shape.
  void output_shape(int& c, int& h, int& w) const;

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<float>& params() { return params_; }
  const std::vector<float>& params() const { return params_; }

 private:
  std::vector<Layer> layers_;
  std::vector<float> params_;
};

}  // namespace dualad::nn
