#include "dualad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dualad/error.hpp"
#include "dualad/rng.hpp"

namespace fs = std::filesystem;

namespace dualad {

const char* to_string(Label label) {
  switch (label) {
    case Label::normal: return "normal";
    case Label::structural: return "structural";
    case Label::logical: return "logical";
  }
  return "?";
}

const char* to_string(AnomalyFamily family) {
  return family == AnomalyFamily::picturable ? "picturable" : "unpicturable";
}

const char* to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

AnomalyFamily parse_family(const std::string& text) {
  if (text == "picturable") return AnomalyFamily::picturable;
  if (text == "unpicturable") return AnomalyFamily::unpicturable;
  fail(ErrorKind::config, "unknown anomaly family '" + text + "'");
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "validation") return Split::validation;
  if (text == "test") return Split::test;
  fail(ErrorKind::input, "unknown split '" + text + "'");
}

const std::vector<ImageSample>& DatasetBundle::split(Split s) const {
  const auto it = splits.find(s);
  if (it == splits.end()) fail(ErrorKind::input, std::string("split '") + to_string(s) + "' not present in bundle");
  return it->second;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthConfig::validate() const {
  auto positive = [](long long v, const char* name) {
    if (v <= 0) fail(ErrorKind::config, std::string("synthetic config: ") + name + " must be positive, got " + std::to_string(v));
  };
  positive(height, "height");
  positive(width, "width");
  positive(train_count, "train_count");
  positive(validation_count, "validation_count");
  positive(test_normal_count, "test_normal_count");
  positive(test_picturable_count, "test_picturable_count");
  positive(test_unpicturable_count, "test_unpicturable_count");
  positive(min_objects, "min_objects");
  if (max_objects < min_objects) fail(ErrorKind::config, "synthetic config: max_objects < min_objects");
  if (!(defect_intensity > 0.0 && defect_intensity <= 1.0))
    fail(ErrorKind::config, "synthetic config: defect_intensity must lie in (0, 1]");
  if (!(object_radius > 0.0) || !(defect_radius > 0.0) || defect_radius >= object_radius)
    fail(ErrorKind::config, "synthetic config: need 0 < defect_radius < object_radius");
  if (!(object_intensity > 0.0 && object_intensity <= 1.0))
    fail(ErrorKind::config, "synthetic config: object_intensity must lie in (0, 1]");
  if (validation_count < 2) fail(ErrorKind::config, "synthetic config: validation_count must be at least 2");
}

SynthConfig parse_synth_config(const KeyValueFile& kv, const std::string& p, std::optional<std::uint64_t> default_seed) {
  SynthConfig c;
  c.height = static_cast<int>(kv.get_int(p + "height", c.height));
  c.width = static_cast<int>(kv.get_int(p + "width", c.width));
  c.min_objects = static_cast<int>(kv.get_int(p + "min_objects", c.min_objects));
  c.max_objects = static_cast<int>(kv.get_int(p + "max_objects", c.max_objects));
  c.defect_intensity = kv.get_double(p + "defect_intensity", c.defect_intensity);
  c.object_radius = kv.get_double(p + "object_radius", c.object_radius);
  c.object_intensity = kv.get_double(p + "object_intensity", c.object_intensity);
  c.defect_radius = kv.get_double(p + "defect_radius", c.defect_radius);
  c.category = kv.get_string(p + "category", c.category);
  c.train_count = static_cast<int>(kv.require_int(p + "train_count"));
  c.validation_count = static_cast<int>(kv.require_int(p + "validation_count"));
  c.test_normal_count = static_cast<int>(kv.require_int(p + "test_normal_count"));
  c.test_picturable_count = static_cast<int>(kv.require_int(p + "test_picturable_count"));
  c.test_unpicturable_count = static_cast<int>(kv.require_int(p + "test_unpicturable_count"));
  if (default_seed && !kv.contains(p + "seed")) {
    c.seed = *default_seed;
  } else {
    c.seed = static_cast<std::uint64_t>(kv.require_int(p + "seed"));
  }
  return c;
}

SynthConfig load_synth_config(const fs::path& path) {
  const auto kv = KeyValueFile::load(path);
  auto config = parse_synth_config(kv, "");
  kv.reject_unknown();
  return config;
}

namespace {

struct Disc {
  double cy, cx;
};

double min_center_distance(const SynthConfig& c) { return 2.0 * c.object_radius + 2.0; }
double border_margin(const SynthConfig& c) { return c.object_radius + 1.0; }

// Count values used for logical anomalies: one below and one above the normal range.
std::vector<int> anomalous_counts(const SynthConfig& c) {
  std::vector<int> out;
  if (c.min_objects - 1 >= 1) out.push_back(c.min_objects - 1);
  if (c.max_objects + 1 <= placeable_capacity(c)) out.push_back(c.max_objects + 1);
  return out;
}

float quantize(double v) {
  const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<float>(q) / 255.0f;
}

std::vector<Disc> place_discs(const SynthConfig& c, int count, Rng& rng) {
  const double margin = border_margin(c);
  const double dmin = min_center_distance(c);
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<Disc> discs;
    for (int tries = 0; tries < 1000 && static_cast<int>(discs.size()) < count; ++tries) {
      const Disc d{rng.uniform(margin, c.height - margin), rng.uniform(margin, c.width - margin)};
      const bool clear = std::none_of(discs.begin(), discs.end(), [&](const Disc& o) {
        return std::hypot(o.cy - d.cy, o.cx - d.cx) < dmin;
      });
      if (clear) discs.push_back(d);
    }
    if (static_cast<int>(discs.size()) == count) return discs;
  }
  fail(ErrorKind::input, "generation error: could not place " + std::to_string(count) + " objects");
}

Image render(const SynthConfig& c, const std::vector<Disc>& discs, Rng& rng, const Disc* defect) {
  Image img(c.height, c.width, 1);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double wavelength = 12.0;
  const double kx = std::cos(theta) * 2.0 * std::numbers::pi / wavelength;
  const double ky = std::sin(theta) * 2.0 * std::numbers::pi / wavelength;
  const double r2 = c.object_radius * c.object_radius;
  const double d2 = c.defect_radius * c.defect_radius;
  const double inverted = c.object_intensity + c.defect_intensity * ((1.0 - c.object_intensity) - c.object_intensity);

  for (int y = 0; y < c.height; ++y) {
    for (int x = 0; x < c.width; ++x) {
      // Noise is drawn for every pixel so the stream does not depend on object placement.
      const double noise = rng.uniform(-0.04, 0.04);
      double v = 0.25 + 0.06 * std::sin(kx * x + ky * y + phase) + noise;
      const double py = y + 0.5;
      const double px = x + 0.5;
      for (const auto& d : discs) {
        const double dy = py - d.cy;
        const double dx = px - d.cx;
        if (dy * dy + dx * dx <= r2) v = c.object_intensity;
      }
      if (defect) {
        const double dy = py - defect->cy;
        const double dx = px - defect->cx;
        if (dy * dy + dx * dx <= d2) v = inverted;
      }
      img.at(y, x, 0) = quantize(v);
    }
  }
  return img;
}

std::string numbered(const std::string& dir, std::size_t index, std::size_t total) {
  std::string digits = std::to_string(index);
  const std::size_t width = std::max<std::size_t>(3, std::to_string(total > 0 ? total - 1 : 0).size());
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return dir + "/" + digits + ".png";
}

}  // namespace

int placeable_capacity(const SynthConfig& c) {
  // Discs on a square grid of pitch dmin always fit.
  const double dmin = min_center_distance(c);
  const double margin = border_margin(c);
  const double span_y = c.height - 2.0 * margin;
  const double span_x = c.width - 2.0 * margin;
  if (span_y < 0.0 || span_x < 0.0) return 0;
  const int rows = static_cast<int>(std::floor(span_y / dmin)) + 1;
  const int cols = static_cast<int>(std::floor(span_x / dmin)) + 1;
  return rows * cols;
}

DatasetBundle generate_synthetic(const SynthConfig& config) {
  config.validate();
  const int capacity = placeable_capacity(config);
  if (config.max_objects > capacity)
    fail(ErrorKind::input, "generation error: object_count_range [" + std::to_string(config.min_objects) + ", " +
                               std::to_string(config.max_objects) + "] exceeds placeable capacity " +
                               std::to_string(capacity));
  const auto odd_counts = anomalous_counts(config);
  if (odd_counts.empty())
    fail(ErrorKind::input, "generation error: no object count outside the normal range is placeable");

  DatasetBundle bundle;
  bundle.category = config.category;
  bundle.generator_config = config;

  std::uint64_t stream = 0;
  auto make = [&](Split split, Label label, const std::string& dir, std::size_t index, std::size_t total) {
    Rng rng(mix_seed(config.seed, stream++));
    int count = 0;
    if (label == Label::logical) {
      count = odd_counts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(odd_counts.size()) - 1))];
    } else {
      count = static_cast<int>(rng.uniform_int(config.min_objects, config.max_objects));
    }
    const auto discs = place_discs(config, count, rng);

    std::optional<Disc> defect;
    if (label == Label::structural) {
      const auto& host = discs[static_cast<std::size_t>(rng.uniform_int(0, count - 1))];
      const double reach = std::max(0.0, config.object_radius - config.defect_radius - 0.5);
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double dist = reach * std::sqrt(rng.uniform());
      defect = Disc{host.cy + dist * std::sin(angle), host.cx + dist * std::cos(angle)};
    }

    ImageSample s;
    s.pixels = render(config, discs, rng, defect ? &*defect : nullptr);
    s.label = label;
    if (label == Label::structural) s.family = AnomalyFamily::picturable;
    if (label == Label::logical) s.family = AnomalyFamily::unpicturable;
    s.split = split;
    s.category = config.category;
    s.id = numbered(dir, index, total);
    bundle.splits[split].push_back(std::move(s));
  };

  auto emit = [&](Split split, Label label, const std::string& dir, int n) {
    for (int i = 0; i < n; ++i) make(split, label, dir, static_cast<std::size_t>(i), static_cast<std::size_t>(n));
  };
  emit(Split::train, Label::normal, "train/good", config.train_count);
  emit(Split::validation, Label::normal, "validation/good", config.validation_count);
  // Test order matches the lexicographic directory order used by the loader.
  emit(Split::test, Label::normal, "test/good", config.test_normal_count);
  emit(Split::test, Label::logical, "test/logical_anomalies", config.test_unpicturable_count);
  emit(Split::test, Label::structural, "test/structural_anomalies", config.test_picturable_count);
  return bundle;
}

// ---------------------------------------------------------------------------
// Directory layout

namespace {

struct LayoutDir {
  Split split;
  const char* rel;
  Label label;
};

constexpr LayoutDir kLayout[] = {
    {Split::train, "train/good", Label::normal},
    {Split::validation, "validation/good", Label::normal},
    {Split::test, "test/good", Label::normal},
    {Split::test, "test/logical_anomalies", Label::logical},
    {Split::test, "test/structural_anomalies", Label::structural},
};

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

}  // namespace

DatasetBundle load_loco_layout(const fs::path& root, const LoadOptions& options) {
  if (!fs::is_directory(root)) fail(ErrorKind::layout, "layout error: category root not found: " + root.string());
  for (const auto& d : kLayout) {
    if (!fs::is_directory(root / d.rel))
      fail(ErrorKind::layout, "layout error: missing directory " + (root / d.rel).string());
  }

  std::optional<KeyValueFile> family_map;
  if (fs::is_regular_file(root / "family_map.txt")) family_map = KeyValueFile::load(root / "family_map.txt");

  DatasetBundle bundle;
  bundle.category = fs::path(root).lexically_normal().filename().string();
  if (bundle.category.empty()) bundle.category = fs::path(root).lexically_normal().parent_path().filename().string();

  std::optional<Image> reference;
  for (const auto& d : kLayout) {
    auto& out = bundle.splits[d.split];
    const std::string subdir = fs::path(d.rel).filename().string();
    for (const auto& file : sorted_pngs(root / d.rel)) {
      ImageSample s;
      s.pixels = read_png(file);
      if (options.resize) s.pixels = resize_bilinear(s.pixels, options.resize->first, options.resize->second);
      if (!reference) {
        reference = s.pixels;
      } else if (!s.pixels.same_shape(*reference)) {
        fail(ErrorKind::decode, "image " + file.string() + " has shape " + std::to_string(s.pixels.height) + "x" +
                                    std::to_string(s.pixels.width) + "x" + std::to_string(s.pixels.channels) +
                                    ", expected " + std::to_string(reference->height) + "x" +
                                    std::to_string(reference->width) + "x" + std::to_string(reference->channels));
      }
      s.label = d.label;
      s.split = d.split;
      s.category = bundle.category;
      s.id = std::string(d.rel) + "/" + file.filename().string();
      if (d.label != Label::normal) {
        s.family = d.label == Label::logical ? AnomalyFamily::unpicturable : AnomalyFamily::picturable;
        if (family_map) {
          const std::string file_key = subdir + "/" + file.filename().string();
          if (auto v = family_map->get(file_key)) {
            s.family = parse_family(*v);
          } else if (auto w = family_map->get(subdir)) {
            s.family = parse_family(*w);
          }
        }
      }
      out.push_back(std::move(s));
    }
  }
  return bundle;
}

void export_loco_layout(const DatasetBundle& bundle, const fs::path& root) {
  for (const auto& d : kLayout) fs::create_directories(root / d.rel);
  for (const auto& [split, samples] : bundle.splits) {
    for (const auto& s : samples) write_png(root / s.id, s.pixels);
  }
}

// ---------------------------------------------------------------------------
// Batching

BatchIterator::BatchIterator(const DatasetBundle& bundle, Split split, int batch_size, std::uint64_t seed)
    : samples_(&bundle.split(split)), batch_size_(batch_size), seed_(seed) {
  if (batch_size <= 0) fail(ErrorKind::input, "batch_size must be positive");
  if (samples_->empty()) fail(ErrorKind::input, std::string("split '") + to_string(split) + "' is empty");
  order_ = epoch_order(samples_->size(), seed_, epoch_);
}

std::vector<std::size_t> BatchIterator::epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch_batches(std::uint64_t epoch) const {
  const auto order = epoch_order(samples_->size(), seed_, epoch);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size_)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size_));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<const ImageSample*> BatchIterator::next() {
  if (cursor_ >= order_.size()) {
    ++epoch_;
    cursor_ = 0;
    order_ = epoch_order(samples_->size(), seed_, epoch_);
  }
  const auto end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  std::vector<const ImageSample*> batch;
  for (; cursor_ < end; ++cursor_) batch.push_back(&(*samples_)[order_[cursor_]]);
  return batch;
}

}  // namespace dualad
