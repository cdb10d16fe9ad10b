#pragma once

// Staged convolutional segmentation networks with a primary classifier on
// the last stage and an optional auxiliary classifier on the one before it.

#include "rdd/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rdd {

struct StageSpec {
  int channels = 8;
  int convs = 1;
  /// Stride of the first 3x3 conv of the stage.
  int stride = 1;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct ModelSpec {
  std::vector<StageSpec> stages;
  int num_classes = 5;
  bool has_aux_head = true;
  int input_channels = 3;

  void validate() const;
  /// Product of stage strides.
  Index downsampling() const;

  /// 4 stages (16, 32, 64, 64) x 2 convs, strides (1, 2, 2, 1), aux head.
  static ModelSpec default_teacher(int num_classes);
  /// 3 stages (8, 16, 16) x 1 conv, strides (1, 2, 2), no aux head.
  static ModelSpec default_student(int num_classes);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct NamedParam {
  std::string name;
  ad::Var var;
};

/// Ordered registry of named trainable tensors plus the spec they realize.
class Params {
 public:
  explicit Params(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }

  void add(std::string name, Tensor init);
  bool contains(std::string_view name) const;
  const ad::Var& at(std::string_view name) const;
  ad::Var& at(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  /// Total number of scalars.
  Index count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Freezes (false) or unfreezes (true) every parameter.
  void set_trainable(bool trainable);
  /// Deep copy with fresh leaves.
  Params clone() const;

  friend bool operator==(const Params& a, const Params& b);

 private:
  ModelSpec spec_;
  std::vector<NamedParam> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct LogitPair {
  ad::Var primary;
  std::optional<ad::Var> auxiliary;
};

/// He-normal conv weights (variance 2 / fan_in), zero biases.
Params build(const ModelSpec& spec, std::uint64_t seed);

/// images: [B, Cin, H, W]. Logits come back at H x W via nearest upsampling.
/// When `stage_features` is non-null it receives the output of every stage.
LogitPair forward(const Params& params, const ad::Var& images, bool want_aux,
                  std::vector<ad::Var>* stage_features = nullptr);

/// Momentum SGD with L2 weight decay:
///   v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Consumes the gradients of every parameter; throws naming the first
  /// parameter without one.
  void step(Params& params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, Tensor, std::less<>> velocity_;
};

/// base_lr * (1 - iter / total_iters)^power.
double poly_lr(Index iter, Index total_iters, double base_lr, double power = 0.9);

// Checkpoint I/O, see docs/checkpoint_format.md.
void save_checkpoint(const Params& params, const std::filesystem::path& path);
Params load_checkpoint(const std::filesystem::path& path);

}  // namespace rdd
