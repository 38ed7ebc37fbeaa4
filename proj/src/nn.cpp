#include "dualad/nn.hpp"

#include <Eigen/Core>
#include <cmath>

#include "dualad/error.hpp"
#include "dualad/rng.hpp"

namespace dualad::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

void im2col(const FeatureMap& x, const Conv2d& cv, int out_h, int out_w, std::vector<float>& cols) {
  const std::size_t positions = static_cast<std::size_t>(out_h) * out_w;
  cols.assign(cv.patch_size() * positions, 0.0f);
  std::size_t row = 0;
  for (int c = 0; c < cv.in_channels; ++c) {
    for (int ky = 0; ky < cv.kernel; ++ky) {
      for (int kx = 0; kx < cv.kernel; ++kx, ++row) {
        float* dst = cols.data() + row * positions;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * cv.stride - cv.padding + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * cv.stride - cv.padding + kx;
            if (ix < 0 || ix >= x.width) continue;
            dst[static_cast<std::size_t>(oy) * out_w + ox] = x.at(c, iy, ix);
          }
        }
      }
    }
  }
}

void col2im(const std::vector<float>& cols, const Conv2d& cv, int out_h, int out_w, FeatureMap& dx) {
  const std::size_t positions = static_cast<std::size_t>(out_h) * out_w;
  std::size_t row = 0;
  for (int c = 0; c < cv.in_channels; ++c) {
    for (int ky = 0; ky < cv.kernel; ++ky) {
      for (int kx = 0; kx < cv.kernel; ++kx, ++row) {
        const float* src = cols.data() + row * positions;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * cv.stride - cv.padding + ky;
          if (iy < 0 || iy >= dx.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * cv.stride - cv.padding + kx;
            if (ix < 0 || ix >= dx.width) continue;
            dx.at(c, iy, ix) += src[static_cast<std::size_t>(oy) * out_w + ox];
          }
        }
      }
    }
  }
}

FeatureMap conv_forward(const Conv2d& cv, const std::vector<float>& params, const FeatureMap& x,
                        std::vector<float>& cols) {
  if (x.channels != cv.in_channels)
    fail(ErrorKind::input, "conv expects " + std::to_string(cv.in_channels) + " input channels, got " +
                               std::to_string(x.channels));
  const int oh = cv.out_extent(x.height);
  const int ow = cv.out_extent(x.width);
  if (oh <= 0 || ow <= 0) fail(ErrorKind::input, "input " + x.shape_string() + " too small for convolution");
  im2col(x, cv, oh, ow, cols);
  const auto positions = static_cast<Eigen::Index>(oh) * ow;
  const auto patch = static_cast<Eigen::Index>(cv.patch_size());

  FeatureMap y(cv.out_channels, oh, ow);
  ConstMapMatrix w(params.data() + cv.weight_offset, cv.out_channels, patch);
  ConstMapMatrix col(cols.data(), patch, positions);
  MapMatrix out(y.data.data(), cv.out_channels, positions);
  out.noalias() = w * col;
  const float* b = params.data() + cv.bias_offset;
  for (int o = 0; o < cv.out_channels; ++o) out.row(o).array() += b[o];
  return y;
}

FeatureMap upsample2(const FeatureMap& x) {
  FeatureMap up(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < up.height; ++y)
      for (int xx = 0; xx < up.width; ++xx) up.at(c, y, xx) = x.at(c, y / 2, xx / 2);
  return up;
}

FeatureMap avgpool2(const FeatureMap& x) {
  FeatureMap out(x.channels, x.height / 2, x.width / 2);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int xx = 0; xx < out.width; ++xx)
        out.at(c, y, xx) = 0.25f * (x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1) + x.at(c, 2 * y + 1, 2 * xx) +
                                    x.at(c, 2 * y + 1, 2 * xx + 1));
  return out;
}

}  // namespace

void Network::add_conv(int in_channels, int out_channels, int kernel, int stride, int padding) {
  Layer layer;
  layer.kind = LayerKind::conv;
  auto& cv = layer.conv;
  cv.in_channels = in_channels;
  cv.out_channels = out_channels;
  cv.kernel = kernel;
  cv.stride = stride;
  cv.padding = padding;
  cv.weight_offset = params_.size();
  cv.bias_offset = cv.weight_offset + cv.weight_count();
  params_.resize(cv.bias_offset + static_cast<std::size_t>(out_channels), 0.0f);
  layers_.push_back(layer);
}

void Network::add_relu() { layers_.push_back(Layer{LayerKind::relu, {}}); }
void Network::add_upsample2() { layers_.push_back(Layer{LayerKind::upsample2, {}}); }
void Network::add_avgpool2() { layers_.push_back(Layer{LayerKind::avgpool2, {}}); }

void Network::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& layer : layers_) {
    if (layer.kind != LayerKind::conv) continue;
    const auto& cv = layer.conv;
    const double bound = std::sqrt(6.0 / static_cast<double>(cv.patch_size()));
    for (std::size_t i = 0; i < cv.weight_count(); ++i)
      params_[cv.weight_offset + i] = static_cast<float>(rng.uniform(-bound, bound));
    for (int o = 0; o < cv.out_channels; ++o) params_[cv.bias_offset + static_cast<std::size_t>(o)] = 0.0f;
  }
}

void Network::output_shape(int& c, int& h, int& w) const {
  for (const auto& layer : layers_) {
    switch (layer.kind) {
      case LayerKind::conv:
        c = layer.conv.out_channels;
        h = layer.conv.out_extent(h);
        w = layer.conv.out_extent(w);
        break;
      case LayerKind::relu: break;
      case LayerKind::upsample2:
        h *= 2;
        w *= 2;
        break;
      case LayerKind::avgpool2:
        h /= 2;
        w /= 2;
        break;
    }
  }
}

FeatureMap Network::forward(const FeatureMap& x) const {
  FeatureMap cur = x;
  std::vector<float> cols;
  for (const auto& layer : layers_) {
    switch (layer.kind) {
      case LayerKind::conv: cur = conv_forward(layer.conv, params_, cur, cols); break;
      case LayerKind::relu:
        for (auto& v : cur.data) v = v > 0.0f ? v : 0.0f;
        break;
      case LayerKind::upsample2: cur = upsample2(cur); break;
      case LayerKind::avgpool2: cur = avgpool2(cur); break;
    }
  }
  return cur;
}

FeatureMap Network::forward(const FeatureMap& x, Trace& trace) const {
  trace.inputs.clear();
  trace.cols.assign(layers_.size(), {});
  FeatureMap cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    trace.inputs.push_back(cur);
    switch (layer.kind) {
      case LayerKind::conv: cur = conv_forward(layer.conv, params_, cur, trace.cols[i]); break;
      case LayerKind::relu:
        for (auto& v : cur.data) v = v > 0.0f ? v : 0.0f;
        break;
      case LayerKind::upsample2: cur = upsample2(cur); break;
      case LayerKind::avgpool2: cur = avgpool2(cur); break;
    }
  }
  return cur;
}

void Network::backward(const Trace& trace, const FeatureMap& grad_out, std::span<float> grad) const {
  if (grad.size() != params_.size()) fail(ErrorKind::input, "gradient buffer size mismatch");
  FeatureMap g = grad_out;
  std::vector<float> dcols;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const auto& layer = layers_[idx];
    const FeatureMap& in = trace.inputs[idx];
    switch (layer.kind) {
      case LayerKind::conv: {
        const auto& cv = layer.conv;
        const auto positions = static_cast<Eigen::Index>(g.height) * g.width;
        const auto patch = static_cast<Eigen::Index>(cv.patch_size());
        ConstMapMatrix dy(g.data.data(), cv.out_channels, positions);
        ConstMapMatrix col(trace.cols[idx].data(), patch, positions);
        MapMatrix dw(grad.data() + cv.weight_offset, cv.out_channels, patch);
        dw.noalias() += dy * col.transpose();
        float* db = grad.data() + cv.bias_offset;
        // Plain loop: Eigen's vectorized sum peels by buffer alignment, which would
        // make the summation order (and the last bits) depend on allocation addresses.
        for (int o = 0; o < cv.out_channels; ++o) {
          const float* row = g.data.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(positions);
          float acc = 0.0f;
          for (Eigen::Index k = 0; k < positions; ++k) acc += row[k];
          db[o] += acc;
        }
        if (idx == 0) return;  // no gradient needed w.r.t. the image
        dcols.assign(static_cast<std::size_t>(patch * positions), 0.0f);
        MapMatrix dc(dcols.data(), patch, positions);
        ConstMapMatrix w(params_.data() + cv.weight_offset, cv.out_channels, patch);
        dc.noalias() = w.transpose() * dy;
        FeatureMap dx(in.channels, in.height, in.width);
        col2im(dcols, cv, g.height, g.width, dx);
        g = std::move(dx);
        break;
      }
      case LayerKind::relu:
        for (std::size_t i = 0; i < g.data.size(); ++i)
          if (!(in.data[i] > 0.0f)) g.data[i] = 0.0f;
        break;
      case LayerKind::upsample2: {
        FeatureMap dx(in.channels, in.height, in.width);
        for (int c = 0; c < g.channels; ++c)
          for (int y = 0; y < g.height; ++y)
            for (int xx = 0; xx < g.width; ++xx) dx.at(c, y / 2, xx / 2) += g.at(c, y, xx);
        g = std::move(dx);
        break;
      }
      case LayerKind::avgpool2: {
        FeatureMap dx(in.channels, in.height, in.width);
        for (int c = 0; c < g.channels; ++c)
          for (int y = 0; y < g.height; ++y)
            for (int xx = 0; xx < g.width; ++xx) {
              const float v = 0.25f * g.at(c, y, xx);
              dx.at(c, 2 * y, 2 * xx) += v;
              dx.at(c, 2 * y, 2 * xx + 1) += v;
              dx.at(c, 2 * y + 1, 2 * xx) += v;
              dx.at(c, 2 * y + 1, 2 * xx + 1) += v;
            }
        g = std::move(dx);
        break;
      }
    }
  }
}

}  // namespace dualad::nn
