#include "dualad/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "dualad/binary_io.hpp"
#include "dualad/error.hpp"
#include "dualad/rng.hpp"

namespace dualad {

namespace {

constexpr std::string_view kCheckpointMagic = "DUALADCK";
constexpr std::uint32_t kCheckpointVersion = 1;

// Pooling rather than strided convolutions keeps the random teacher's features
// smooth enough for the student to regress them in a few hundred steps.
void build_extractor(nn::Network& net, const Arch& a, int out_channels) {
  const int h1 = a.hidden1, h2 = a.hidden2;
  net.add_conv(a.in_channels, h1, 3, 1, 1);
  net.add_relu();
  net.add_avgpool2();
  net.add_conv(h1, h2, 3, 1, 1);
  net.add_relu();
  net.add_avgpool2();
  net.add_conv(h2, h2, 3, 1, 1);
  net.add_relu();
  net.add_conv(h2, out_channels, 3, 1, 1);
}

void build_autoencoder(nn::Network& net, const Arch& a) {
  net.add_conv(a.in_channels, a.ae_hidden, 4, 2, 1);
  net.add_relu();
  net.add_conv(a.ae_hidden, a.ae_hidden, 4, 2, 1);
  net.add_relu();
  net.add_conv(a.ae_hidden, a.ae_hidden, 4, 2, 1);
  net.add_relu();
  net.add_conv(a.ae_hidden, a.ae_bottleneck, 4, 2, 1);
  net.add_relu();
  net.add_upsample2();
  net.add_conv(a.ae_bottleneck, a.ae_hidden, 3, 1, 1);
  net.add_relu();
  net.add_upsample2();
  net.add_conv(a.ae_hidden, a.ae_hidden, 3, 1, 1);
  net.add_relu();
  net.add_conv(a.ae_hidden, a.out_channels, 3, 1, 1);
}

void validate_arch(const Arch& a) {
  auto positive = [](int v, const char* name) {
    if (v <= 0) fail(ErrorKind::config, std::string("architecture: ") + name + " must be positive, got " + std::to_string(v));
  };
  positive(a.in_channels, "in_channels");
  positive(a.in_height, "in_height");
  positive(a.in_width, "in_width");
  positive(a.out_channels, "out_channels");
  positive(a.hidden1, "hidden1");
  positive(a.hidden2, "hidden2");
  positive(a.ae_hidden, "ae_hidden");
  positive(a.ae_bottleneck, "ae_bottleneck");
  if (a.in_height % 16 != 0 || a.in_width % 16 != 0)
    fail(ErrorKind::config, "architecture: input height and width must be multiples of 16");
  if (a.out_height != a.in_height / 4 || a.out_width != a.in_width / 4)
    fail(ErrorKind::config, "architecture: output extent must be input extent / 4");
  if (a.size != SizeTag::S && a.size != SizeTag::M) fail(ErrorKind::config, "architecture: unknown size tag");
}

FeatureMap network_input(const Image& image) {
  FeatureMap x = to_feature_map(image);
  for (auto& v : x.data) v = (v - 0.5f) * 4.0f;
  return x;
}

FeatureMap standardize(const BackboneBundle& b, FeatureMap t) {
  const std::size_t plane = t.plane();
  for (int c = 0; c < t.channels; ++c) {
    const float mean = b.teacher_mean[static_cast<std::size_t>(c)];
    const float inv = 1.0f / b.teacher_std[static_cast<std::size_t>(c)];
    float* p = t.data.data() + static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mean) * inv;
  }
  return t;
}

void check_input(const Arch& a, const Image& image) {
  if (image.height != a.in_height || image.width != a.in_width || image.channels != a.in_channels)
    fail(ErrorKind::input, "image shape mismatch: expected " + std::to_string(a.in_height) + "x" +
                               std::to_string(a.in_width) + "x" + std::to_string(a.in_channels) + ", got " +
                               std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                               std::to_string(image.channels));
}

// Channel-wise mean and standard deviation of raw teacher outputs.
void estimate_teacher_norm(BackboneBundle& b, const std::vector<FeatureMap>& raw) {
  const int channels = b.arch.out_channels;
  std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(channels), 0.0);
  double count = 0.0;
  for (const auto& t : raw) {
    for (int c = 0; c < channels; ++c)
      for (float v : t.channel(c)) sum[static_cast<std::size_t>(c)] += v;
    count += static_cast<double>(t.plane());
  }
  for (int c = 0; c < channels; ++c) sum[static_cast<std::size_t>(c)] /= count;
  for (const auto& t : raw)
    for (int c = 0; c < channels; ++c)
      for (float v : t.channel(c)) {
        const double d = v - sum[static_cast<std::size_t>(c)];
        sq[static_cast<std::size_t>(c)] += d * d;
      }
  for (int c = 0; c < channels; ++c) {
    const auto i = static_cast<std::size_t>(c);
    b.teacher_mean[i] = static_cast<float>(sum[i]);
    const double sd = std::sqrt(sq[i] / count);
    b.teacher_std[i] = sd > 1e-6 ? static_cast<float>(sd) : 1.0f;
  }
}

}  // namespace

const char* to_string(SizeTag tag) { return tag == SizeTag::S ? "S" : "M"; }

SizeTag parse_size_tag(const std::string& text) {
  if (text == "S" || text == "s") return SizeTag::S;
  if (text == "M" || text == "m") return SizeTag::M;
  fail(ErrorKind::config, "size tag must be S or M, got '" + text + "'");
}

TeacherMode parse_teacher_mode(const std::string& text) {
  if (text == "frozen_random") return TeacherMode::frozen_random;
  if (text == "distilled") return TeacherMode::distilled;
  fail(ErrorKind::config, "teacher_mode must be frozen_random or distilled, got '" + text + "'");
}

Optimizer parse_optimizer(const std::string& text) {
  if (text == "sgd") return Optimizer::sgd;
  if (text == "adam") return Optimizer::adam;
  fail(ErrorKind::config, "optimizer must be sgd or adam, got '" + text + "'");
}

Arch default_arch(SizeTag size, int in_channels, int in_height, int in_width, int out_channels) {
  Arch a;
  a.size = size;
  a.in_channels = in_channels;
  a.in_height = in_height;
  a.in_width = in_width;
  a.out_height = in_height / 4;
  a.out_width = in_width / 4;
  if (size == SizeTag::S) {
    a.hidden1 = 16;
    a.hidden2 = 32;
    a.out_channels = 16;
    a.ae_hidden = 16;
    a.ae_bottleneck = 8;
  } else {
    a.hidden1 = 32;
    a.hidden2 = 64;
    a.out_channels = 32;
    a.ae_hidden = 32;
    a.ae_bottleneck = 16;
  }
  if (out_channels > 0) a.out_channels = out_channels;
  return a;
}

BackboneBundle init_networks(const Arch& arch, std::uint64_t seed) {
  validate_arch(arch);
  BackboneBundle b;
  b.arch = arch;
  build_extractor(b.teacher, arch, arch.out_channels);
  build_extractor(b.student, arch, 2 * arch.out_channels);
  build_autoencoder(b.autoencoder, arch);
  b.teacher.initialize(mix_seed(seed, 1));
  b.student.initialize(mix_seed(seed, 2));
  b.autoencoder.initialize(mix_seed(seed, 3));
  b.teacher_mean.assign(static_cast<std::size_t>(arch.out_channels), 0.0f);
  b.teacher_std.assign(static_cast<std::size_t>(arch.out_channels), 1.0f);
  return b;
}

FeatureMap teacher_forward(const BackboneBundle& bundle, const FeatureMap& input) {
  return standardize(bundle, bundle.teacher.forward(input));
}

namespace {

RawOutputs assemble(const BackboneBundle& bundle, FeatureMap teacher_raw, const FeatureMap& student, FeatureMap ae) {
  RawOutputs out;
  out.teacher = standardize(bundle, std::move(teacher_raw));
  const int c = bundle.arch.out_channels;
  const auto half = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(c) * student.plane());
  out.student_former = FeatureMap(c, student.height, student.width);
  out.student_latter = FeatureMap(c, student.height, student.width);
  std::copy(student.data.begin(), student.data.begin() + half, out.student_former.data.begin());
  std::copy(student.data.begin() + half, student.data.end(), out.student_latter.data.begin());
  out.autoencoder = std::move(ae);
  return out;
}

}  // namespace

RawOutputs forward(const BackboneBundle& bundle, const Image& image) {
  check_input(bundle.arch, image);
  const FeatureMap x = network_input(image);
  return assemble(bundle, bundle.teacher.forward(x), bundle.student.forward(x), bundle.autoencoder.forward(x));
}

// Images are spread over threads, one GEMM chain per image. A single wide GEMM
// over the whole batch would change the float summation order with the batch
// size; this way batched and single results are bitwise identical.
std::vector<RawOutputs> forward_batch(const BackboneBundle& bundle, std::span<const Image> images) {
  for (const auto& image : images) check_input(bundle.arch, image);
  std::vector<RawOutputs> out(images.size());
  const std::size_t workers =
      std::min<std::size_t>(images.size(), std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = forward(bundle, images[i]);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < images.size(); i += workers) out[i] = forward(bundle, images[i]);
    });
  for (auto& t : pool) t.join();
  return out;
}

BackboneBundle train(BackboneBundle b, const std::vector<ImageSample>& trainset, const TrainHParams& hp) {
  if (hp.steps < 1) fail(ErrorKind::contract, "train: steps must be >= 1, got " + std::to_string(hp.steps));
  if (hp.batch_size < 1) fail(ErrorKind::contract, "train: batch_size must be >= 1");
  if (!(hp.learning_rate > 0.0)) fail(ErrorKind::contract, "train: learning_rate must be positive");
  if (hp.teacher_mode == TeacherMode::distilled)
    fail(ErrorKind::config, "train: teacher_mode=distilled needs a pretrained teacher source, which is not available");
  if (trainset.empty()) fail(ErrorKind::contract, "train: empty training set");
  for (const auto& s : trainset) {
    if (s.is_anomalous()) fail(ErrorKind::contract, "train: training set contains anomalous sample " + s.id);
    check_input(b.arch, s.pixels);
  }

  // The teacher is frozen, so its targets are computed once.
  std::vector<FeatureMap> inputs;
  std::vector<FeatureMap> targets;
  inputs.reserve(trainset.size());
  targets.reserve(trainset.size());
  for (const auto& s : trainset) {
    inputs.push_back(network_input(s.pixels));
    targets.push_back(b.teacher.forward(inputs.back()));
  }
  if (!b.trained) estimate_teacher_norm(b, targets);
  for (auto& t : targets) t = standardize(b, std::move(t));

  const std::uint64_t order_seed = mix_seed(hp.seed, b.steps_done);
  std::uint64_t epoch = 0;
  std::size_t cursor = 0;
  auto order = BatchIterator::epoch_order(trainset.size(), order_seed, epoch);

  std::vector<float> grad_student(b.student.params().size());
  std::vector<float> grad_ae(b.autoencoder.params().size());
  std::vector<float> vel_student(grad_student.size(), 0.0f);
  std::vector<float> vel_ae(grad_ae.size(), 0.0f);
  std::vector<float> sq_student(hp.optimizer == Optimizer::adam ? grad_student.size() : 0, 0.0f);
  std::vector<float> sq_ae(hp.optimizer == Optimizer::adam ? grad_ae.size() : 0, 0.0f);
  nn::Trace trace_student;
  nn::Trace trace_ae;

  for (int step = 0; step < hp.steps; ++step) {
    std::fill(grad_student.begin(), grad_student.end(), 0.0f);
    std::fill(grad_ae.begin(), grad_ae.end(), 0.0f);
    std::vector<std::size_t> batch;
    while (batch.size() < static_cast<std::size_t>(hp.batch_size) && batch.size() < trainset.size()) {
      if (cursor == order.size()) {
        order = BatchIterator::epoch_order(trainset.size(), order_seed, ++epoch);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    LossRecord rec;
    rec.step = b.steps_done + static_cast<std::uint64_t>(step);
    const float inv_batch = 1.0f / static_cast<float>(batch.size());

    for (const std::size_t i : batch) {
      const FeatureMap& t = targets[i];
      const FeatureMap s = b.student.forward(inputs[i], trace_student);
      const FeatureMap a = b.autoencoder.forward(inputs[i], trace_ae);

      const std::size_t n = t.size();
      const float scale = 2.0f / static_cast<float>(n) * inv_batch;
      FeatureMap gs(s.channels, s.height, s.width);
      FeatureMap ga(a.channels, a.height, a.width);
      double l_st = 0.0, l_ae = 0.0, l_stae = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const float d_st = s.data[k] - t.data[k];
        const float d_ae = a.data[k] - t.data[k];
        const float d_stae = s.data[k + n] - a.data[k];
        l_st += static_cast<double>(d_st) * d_st;
        l_ae += static_cast<double>(d_ae) * d_ae;
        l_stae += static_cast<double>(d_stae) * d_stae;
        gs.data[k] = scale * d_st;
        gs.data[k + n] = scale * d_stae;
        ga.data[k] = scale * d_ae;
      }
      rec.student_teacher += l_st / static_cast<double>(n) * inv_batch;
      rec.autoencoder += l_ae / static_cast<double>(n) * inv_batch;
      rec.student_autoencoder += l_stae / static_cast<double>(n) * inv_batch;
      b.student.backward(trace_student, gs, grad_student);
      b.autoencoder.backward(trace_ae, ga, grad_ae);
    }
    rec.total = rec.student_teacher + rec.autoencoder + rec.student_autoencoder;
    if (!std::isfinite(rec.total))
      fail(ErrorKind::numeric, "training diverged: non-finite loss at step " + std::to_string(rec.step));
    b.loss_trace.push_back(rec);

    const auto lr = static_cast<float>(hp.learning_rate);
    if (hp.optimizer == Optimizer::adam) {
      constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
      const float c1 = 1.0f / (1.0f - std::pow(b1, static_cast<float>(step + 1)));
      const float c2 = 1.0f / (1.0f - std::pow(b2, static_cast<float>(step + 1)));
      auto adam = [&](std::vector<float>& params, std::vector<float>& m1, std::vector<float>& m2,
                      const std::vector<float>& grad) {
        for (std::size_t k = 0; k < params.size(); ++k) {
          m1[k] = b1 * m1[k] + (1 - b1) * grad[k];
          m2[k] = b2 * m2[k] + (1 - b2) * grad[k] * grad[k];
          params[k] -= lr * (m1[k] * c1) / (std::sqrt(m2[k] * c2) + eps);
        }
      };
      adam(b.student.params(), vel_student, sq_student, grad_student);
      adam(b.autoencoder.params(), vel_ae, sq_ae, grad_ae);
    } else {
      const auto mu = static_cast<float>(hp.momentum);
      auto sgd = [&](std::vector<float>& params, std::vector<float>& vel, const std::vector<float>& grad) {
        for (std::size_t k = 0; k < params.size(); ++k) {
          vel[k] = mu * vel[k] + grad[k];
          params[k] -= lr * vel[k];
        }
      };
      sgd(b.student.params(), vel_student, grad_student);
      sgd(b.autoencoder.params(), vel_ae, grad_ae);
    }
  }
  b.steps_done += static_cast<std::uint64_t>(hp.steps);
  b.trained = true;
  return b;
}

// ---------------------------------------------------------------------------
// Checkpoint

std::vector<std::uint8_t> checkpoint_bytes(const BackboneBundle& b) {
  ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const Arch& a = b.arch;
  for (int v : {a.in_channels, a.in_height, a.in_width, a.out_channels, a.out_height, a.out_width}) w.i32(v);
  w.u8(static_cast<std::uint8_t>(a.size));
  for (int v : {a.hidden1, a.hidden2, a.ae_hidden, a.ae_bottleneck}) w.i32(v);
  w.u8(b.trained ? 1 : 0);
  w.u64(b.steps_done);
  w.f32_array(b.teacher_mean);
  w.f32_array(b.teacher_std);
  w.f32_array(b.teacher.params());
  w.f32_array(b.student.params());
  w.f32_array(b.autoencoder.params());
  return w.bytes();
}

BackboneBundle parse_checkpoint(std::vector<std::uint8_t> bytes, const std::string& source) {
  ByteReader r(std::move(bytes), source);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorKind::decode, source + ": unsupported checkpoint version " + std::to_string(version));
  Arch a;
  a.in_channels = r.i32();
  a.in_height = r.i32();
  a.in_width = r.i32();
  a.out_channels = r.i32();
  a.out_height = r.i32();
  a.out_width = r.i32();
  const auto tag = r.u8();
  if (tag > 1) fail(ErrorKind::decode, source + ": bad size tag");
  a.size = static_cast<SizeTag>(tag);
  a.hidden1 = r.i32();
  a.hidden2 = r.i32();
  a.ae_hidden = r.i32();
  a.ae_bottleneck = r.i32();

  BackboneBundle b;
  try {
    b = init_networks(a, 0);
  } catch (const Error& e) {
    fail(ErrorKind::decode, source + ": invalid architecture record (" + e.what() + ")");
  }
  b.trained = r.u8() != 0;
  b.steps_done = r.u64();
  auto load = [&](std::vector<float>& dst, const char* what) {
    auto v = r.f32_array(dst.size());
    if (v.size() != dst.size()) fail(ErrorKind::decode, source + ": " + what + " length mismatch");
    dst = std::move(v);
  };
  load(b.teacher_mean, "teacher mean");
  load(b.teacher_std, "teacher std");
  load(b.teacher.params(), "teacher parameters");
  load(b.student.params(), "student parameters");
  load(b.autoencoder.params(), "autoencoder parameters");
  if (!r.at_end()) fail(ErrorKind::decode, source + ": trailing bytes");
  return b;
}

void save_checkpoint(const std::filesystem::path& path, const BackboneBundle& bundle) {
  ByteWriter w;
  w.raw(checkpoint_bytes(bundle));
  w.save(path);
}

BackboneBundle load_checkpoint(const std::filesystem::path& path) {
  auto r = ByteReader::open(path);
  return parse_checkpoint(r.bytes(), path.string());
}

}  // namespace dualad
