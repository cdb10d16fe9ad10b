#pragma once

// Procedural segmentation scenes: textured background (class 0) with
// overlapping rectangles, ellipses and triangles of classes 1..C-1. Object
// boundaries are blurred in the image only, and a fraction of labels is
// flipped, so that easy, ambiguous and mislabelled pixels all occur.

#include "rdd/tensor.hpp"

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace rdd {

enum class Split { Train, Val };
std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct SceneConfig {
  Index image_size = 64;
  int num_classes = 5;
  int shapes_min = 2;
  int shapes_max = 5;
  double noise_rate = 0.05;
  int boundary_blur = 1;
  /// Std-dev of per-pixel additive image noise.
  double texture_noise = 0.25;
  std::uint64_t seed = 7;
  Index train_size = 512;
  Index val_size = 128;
  /// Random horizontal flips on the train split.
  bool flip = false;

  /// `downsampling` is the model factor the image size must divide.
  void validate(Index downsampling = 1) const;
};

enum class ShapeKind { Rectangle, Ellipse, Triangle };

struct SceneShape {
  ShapeKind kind = ShapeKind::Rectangle;
  int label = 1;
  /// Bounding box in pixel coordinates, inclusive-exclusive.
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  /// Triangle vertices (x, y); unused for other kinds.
  std::array<double, 6> vertices{};
  std::array<double, 3> color{};
};

struct SegSample {
  Tensor image;          // [3, H, W] in [0, 1]
  LabelMap labels;       // [H, W]
  LabelMap clean_labels; // [H, W]
};

struct SegBatch {
  Tensor images;          // [B, 3, H, W]
  LabelMap labels;        // [B, H, W]
  LabelMap clean_labels;  // [B, H, W]
  std::vector<Index> indices;
  std::vector<bool> flipped;

  Index size() const { return static_cast<Index>(indices.size()); }
};

/// Shapes drawn for (seed, split, index).
std::vector<SceneShape> draw_layout(const SceneConfig& config, Split split, Index index);

/// Rasterises `shapes` over a textured background; `stream` seeds the
/// texture and label noise.
SegSample render(const SceneConfig& config, const std::vector<SceneShape>& shapes, std::uint64_t stream);

/// Pure function of (config.seed, split, index).
SegSample generate(const SceneConfig& config, Split split, Index index);

/// Each pixel independently moves to a uniformly chosen different class
/// with probability rho.
LabelMap inject_label_noise(const LabelMap& labels, int num_classes, double rho, std::uint64_t seed);

SegSample flip_horizontal(const SegSample& sample);

/// Fixed-size batches over `count` generated samples. Train order is
/// reshuffled every epoch from the scene seed; val order is the index order.
class Dataset {
 public:
  Dataset(SceneConfig config, Split split, Index count, Index batch_size);

  Index size() const { return static_cast<Index>(samples_.size()); }
  Index batch_size() const { return batch_size_; }
  Index batches_per_epoch() const { return (size() + batch_size_ - 1) / batch_size_; }
  Split split() const { return split_; }
  const SceneConfig& config() const { return config_; }

  const SegSample& sample(Index index) const { return samples_.at(static_cast<std::size_t>(index)); }
  std::vector<Index> order(Index epoch) const;
  /// Batch `b` of `epoch`; the last batch of an epoch may be short.
  SegBatch batch(Index epoch, Index b) const;
  std::vector<SegBatch> epoch(Index epoch) const;
  /// Whether sample `index` is mirrored in `epoch`.
  bool flipped(Index epoch, Index index) const;
  /// Seeds the per-epoch shuffle and flips (defaults to the scene seed).
  void set_order_seed(std::uint64_t seed) { order_seed_ = seed; }

 private:
  SceneConfig config_;
  Split split_;
  Index batch_size_;
  std::uint64_t order_seed_;
  std::vector<SegSample> samples_;
};

SegBatch collate(const std::vector<const SegSample*>& samples);

}  // namespace rdd
