#include "rdd/data.hpp"

#include "rdd/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rdd {

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "val"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (train, val)");
}

void SceneConfig::validate(Index downsampling) const {
  if (image_size < 4) throw std::invalid_argument("scene.image_size must be at least 4");
  if (downsampling < 1 || image_size % downsampling != 0) {
    throw std::invalid_argument("scene.image_size " + std::to_string(image_size) +
                                " is not divisible by the model downsampling factor " + std::to_string(downsampling));
  }
  if (num_classes < 2) throw std::invalid_argument("scene.num_classes must be >= 2");
  if (shapes_min < 0 || shapes_max < shapes_min) throw std::invalid_argument("scene shape count range is invalid");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0)) throw std::invalid_argument("scene.noise_rate must lie in [0, 1)");
  if (boundary_blur < 0) throw std::invalid_argument("scene.boundary_blur must be >= 0");
  if (!(texture_noise >= 0.0)) throw std::invalid_argument("scene.texture_noise must be >= 0");
  if (train_size < 1 || val_size < 1) throw std::invalid_argument("scene split sizes must be positive");
}

namespace {

constexpr std::uint64_t kSplitTag[] = {0x747261696eULL, 0x76616cULL};

std::uint64_t sample_stream(const SceneConfig& config, Split split, Index index) {
  return derive_seed({config.seed, kSplitTag[static_cast<int>(split)], static_cast<std::uint64_t>(index)});
}

// Class means sit on a hue circle; classes are separable on average but
// per-shape jitter and pixel noise make neighbours overlap.
std::array<double, 3> class_color(int label, int num_classes) {
  if (label == 0) return {0.30, 0.30, 0.32};
  const double hue = static_cast<double>(label - 1) / static_cast<double>(num_classes - 1);
  std::array<double, 3> rgb{};
  for (int k = 0; k < 3; ++k) {
    const double phase = 2.0 * std::numbers::pi * (hue - static_cast<double>(k) / 3.0);
    rgb[static_cast<std::size_t>(k)] = 0.55 + 0.3 * std::cos(phase);
  }
  return rgb;
}

bool contains(const SceneShape& s, double x, double y) {
  switch (s.kind) {
    case ShapeKind::Rectangle:
      return x >= s.x0 && x < s.x1 && y >= s.y0 && y < s.y1;
    case ShapeKind::Ellipse: {
      const double cx = 0.5 * (s.x0 + s.x1), cy = 0.5 * (s.y0 + s.y1);
      const double rx = 0.5 * (s.x1 - s.x0), ry = 0.5 * (s.y1 - s.y0);
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::Triangle: {
      const auto& v = s.vertices;
      auto edge = [&](int a, int b) {
        return (v[2 * b] - v[2 * a]) * (y - v[2 * a + 1]) - (v[2 * b + 1] - v[2 * a + 1]) * (x - v[2 * a]);
      };
      const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

}  // namespace

std::vector<SceneShape> draw_layout(const SceneConfig& config, Split split, Index index) {
  config.validate();
  Rng rng(derive_seed({sample_stream(config, split, index), 0x6c61796f7574ULL}));
  const double size = static_cast<double>(config.image_size);
  const auto count = rng.integer(config.shapes_min, config.shapes_max);
  std::vector<SceneShape> shapes;
  for (std::int64_t k = 0; k < count; ++k) {
    SceneShape s;
    s.label = static_cast<int>(rng.integer(1, config.num_classes - 1));
    s.kind = static_cast<ShapeKind>(rng.integer(0, 2));
    const double half_w = size * rng.uniform(0.10, 0.28);
    const double half_h = size * rng.uniform(0.10, 0.28);
    const double cx = rng.uniform(0.0, size), cy = rng.uniform(0.0, size);
    s.x0 = cx - half_w;
    s.x1 = cx + half_w;
    s.y0 = cy - half_h;
    s.y1 = cy + half_h;
    for (int v = 0; v < 3; ++v) {
      s.vertices[static_cast<std::size_t>(2 * v)] = rng.uniform(s.x0, s.x1);
      s.vertices[static_cast<std::size_t>(2 * v + 1)] = rng.uniform(s.y0, s.y1);
    }
    if (s.kind == ShapeKind::Triangle) {
      // Keep triangles from degenerating into slivers: pin one vertex per side.
      s.vertices[0] = s.x0;
      s.vertices[3] = s.y0;
      s.vertices[4] = s.x1;
      s.vertices[5] = s.y1;
    }
    const auto mean = class_color(s.label, config.num_classes);
    for (std::size_t c = 0; c < 3; ++c) s.color[c] = std::clamp(mean[c] + 0.07 * rng.normal(), 0.0, 1.0);
    shapes.push_back(s);
  }
  return shapes;
}

SegSample render(const SceneConfig& config, const std::vector<SceneShape>& shapes, std::uint64_t stream) {
  const Index n = config.image_size;
  Rng rng(derive_seed({stream, 0x74657874ULL}));

  LabelMap clean(Shape{n, n}, 0);
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      for (const auto& s : shapes) {
        if (contains(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) clean(y, x) = s.label;
      }
    }
  }

  // Flat colours plus a low-frequency background pattern.
  Tensor flat(Shape{3, n, n});
  const auto bg = class_color(0, config.num_classes);
  const double fx = rng.uniform(0.05, 0.2), fy = rng.uniform(0.05, 0.2), phase = rng.uniform(0.0, 6.3);
  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      const SceneShape* owner = nullptr;
      for (const auto& s : shapes) {
        if (contains(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) owner = &s;
      }
      const double wave = 0.08 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      for (Index c = 0; c < 3; ++c) {
        flat(c, y, x) = owner ? owner->color[static_cast<std::size_t>(c)] : bg[static_cast<std::size_t>(c)] + wave;
      }
    }
  }

  // Box-blur pixels near a label boundary.
  Tensor image = flat;
  const Index r = config.boundary_blur;
  if (r > 0) {
    for (Index y = 0; y < n; ++y) {
      for (Index x = 0; x < n; ++x) {
        const int here = clean(y, x);
        bool boundary = false;
        for (Index dy = -r; dy <= r && !boundary; ++dy) {
          for (Index dx = -r; dx <= r; ++dx) {
            const Index yy = std::clamp<Index>(y + dy, 0, n - 1), xx = std::clamp<Index>(x + dx, 0, n - 1);
            if (clean(yy, xx) != here) {
              boundary = true;
              break;
            }
          }
        }
        if (!boundary) continue;
        for (Index c = 0; c < 3; ++c) {
          double acc = 0.0;
          for (Index dy = -r; dy <= r; ++dy) {
            for (Index dx = -r; dx <= r; ++dx) {
              acc += flat(c, std::clamp<Index>(y + dy, 0, n - 1), std::clamp<Index>(x + dx, 0, n - 1));
            }
          }
          image(c, y, x) = acc / static_cast<double>((2 * r + 1) * (2 * r + 1));
        }
      }
    }
  }

  for (Index i = 0; i < image.size(); ++i) {
    image[i] = std::clamp(image[i] + config.texture_noise * rng.normal(), 0.0, 1.0);
  }

  SegSample sample;
  sample.image = std::move(image);
  sample.labels = inject_label_noise(clean, config.num_classes, config.noise_rate, derive_seed({stream, 0x6e6f697365ULL}));
  sample.clean_labels = std::move(clean);
  return sample;
}

SegSample generate(const SceneConfig& config, Split split, Index index) {
  if (index < 0) throw std::out_of_range("sample index must be non-negative");
  return render(config, draw_layout(config, split, index), sample_stream(config, split, index));
}

LabelMap inject_label_noise(const LabelMap& labels, int num_classes, double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("label noise rate must lie in [0, 1)");
  if (num_classes < 2) throw std::invalid_argument("label noise needs at least 2 classes");
  LabelMap noisy = labels;
  if (rho == 0.0) return noisy;
  Rng rng(seed);
  for (Index i = 0; i < noisy.size(); ++i) {
    if (rng.uniform() < rho) {
      const auto shift = static_cast<std::int32_t>(rng.integer(1, num_classes - 1));
      noisy[i] = (noisy[i] + shift) % num_classes;
    }
  }
  return noisy;
}

SegSample flip_horizontal(const SegSample& sample) {
  SegSample out = sample;
  const Index h = sample.labels.dim(0), w = sample.labels.dim(1);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      out.labels(y, x) = sample.labels(y, w - 1 - x);
      out.clean_labels(y, x) = sample.clean_labels(y, w - 1 - x);
      for (Index c = 0; c < sample.image.dim(0); ++c) out.image(c, y, x) = sample.image(c, y, w - 1 - x);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Dataset::Dataset(SceneConfig config, Split split, Index count, Index batch_size)
    : config_(std::move(config)), split_(split), batch_size_(batch_size), order_seed_(config_.seed) {
  config_.validate();
  if (count < 1) throw std::invalid_argument("dataset count must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  samples_.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) samples_.push_back(generate(config_, split_, i));
}

std::vector<Index> Dataset::order(Index epoch) const {
  std::vector<Index> idx(static_cast<std::size_t>(size()));
  for (Index i = 0; i < size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  if (split_ == Split::Train) {
    Rng rng(derive_seed({order_seed_, 0x73687566ULL, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = idx.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
      std::swap(idx[i - 1], idx[j]);
    }
  }
  return idx;
}

bool Dataset::flipped(Index epoch, Index index) const {
  if (split_ != Split::Train || !config_.flip) return false;
  const auto h = derive_seed({order_seed_, 0x666c6970ULL, static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(index)});
  return (h & 1u) != 0;
}

SegBatch Dataset::batch(Index epoch, Index b) const {
  if (b < 0 || b >= batches_per_epoch()) throw std::out_of_range("batch index out of range");
  const auto idx = order(epoch);
  const Index begin = b * batch_size_;
  const Index end = std::min(size(), begin + batch_size_);
  std::vector<SegSample> flipped_copies;
  flipped_copies.reserve(static_cast<std::size_t>(end - begin));
  std::vector<const SegSample*> parts;
  std::vector<bool> flips;
  for (Index k = begin; k < end; ++k) {
    const Index i = idx[static_cast<std::size_t>(k)];
    const bool f = flipped(epoch, i);
    flips.push_back(f);
    if (f) {
      flipped_copies.push_back(flip_horizontal(sample(i)));
      parts.push_back(&flipped_copies.back());
    } else {
      parts.push_back(&sample(i));
    }
  }
  SegBatch out = collate(parts);
  out.indices.assign(idx.begin() + begin, idx.begin() + end);
  out.flipped = std::move(flips);
  return out;
}

std::vector<SegBatch> Dataset::epoch(Index epoch) const {
  std::vector<SegBatch> out;
  for (Index b = 0; b < batches_per_epoch(); ++b) out.push_back(batch(epoch, b));
  return out;
}

SegBatch collate(const std::vector<const SegSample*>& samples) {
  if (samples.empty()) throw std::invalid_argument("collate: empty batch");
  const Index B = static_cast<Index>(samples.size());
  const Shape& is = samples.front()->image.shape();
  const Index h = is[1], w = is[2];
  SegBatch out;
  out.images = Tensor(Shape{B, is[0], h, w});
  out.labels = LabelMap(Shape{B, h, w});
  out.clean_labels = LabelMap(Shape{B, h, w});
  const Index img = samples.front()->image.size(), px = h * w;
  for (Index b = 0; b < B; ++b) {
    const SegSample& s = *samples[static_cast<std::size_t>(b)];
    out.images.data().segment(b * img, img) = s.image.data();
    out.labels.data().segment(b * px, px) = s.labels.data();
    out.clean_labels.data().segment(b * px, px) = s.clean_labels.data();
  }
  out.indices.resize(static_cast<std::size_t>(B));
  out.flipped.assign(static_cast<std::size_t>(B), false);
  return out;
}

}  // namespace rdd
