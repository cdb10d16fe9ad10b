#pragma once

// Relative-difficulty distillation losses.
//
// Difficulty maps are plain tensors: they scale the per-pixel task loss but
// never carry gradient. Logit tensors are [B, C, H, W], per-pixel maps and
// labels are [B, H, W].

#include "rdd/autodiff.hpp"
#include "rdd/model.hpp"

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rdd {

enum class DifficultyKind { TFE, TSE };
enum class Stage { TFE, TSE };
/// How the student and teacher "hard pixel" masks are combined.
enum class CombineMode { XOR, AND, OR, STRICT };
/// Divisor of the weighted task loss: pixel count, or the sum of weights.
enum class LossNormalization { Pixels, Weights };

std::string_view to_string(Stage stage);
std::string_view to_string(CombineMode mode);
std::string_view to_string(LossNormalization n);
CombineMode parse_combine_mode(std::string_view name);
LossNormalization parse_normalization(std::string_view name);

struct DifficultyMap {
  Tensor values;
  DifficultyKind kind = DifficultyKind::TFE;
};

struct DistillConfig {
  double p = 0.10;
  double t = 0.70;
  double temperature = 1.0;
  CombineMode mode = CombineMode::XOR;
  Index total_iters = 2000;
  LossNormalization normalization = LossNormalization::Pixels;

  void validate() const;
  /// round(p * total_iters): the last iteration of the TFE stage.
  Index tfe_iters() const;
  /// Iterations are 1-based; the boundary iteration belongs to TFE.
  Stage stage_at(Index iter) const;
};

struct LossBreakdown {
  ad::Var total;
  double total_value = 0.0;
  double task_weighted = 0.0;
  double kd = 0.0;
  std::vector<std::pair<std::string, double>> extras;
  Stage stage = Stage::TFE;
  double mean_rd = 0.0;
  double active_pixel_fraction = 0.0;
  /// The difficulty map had no non-zero pixel.
  bool empty_mask = false;

  double extras_sum() const;
};

/// A named additional loss evaluated alongside the RDD terms.
struct ExtraLoss {
  std::string name;
  std::function<ad::Var()> evaluate;
};

/// Per-pixel max softmax probability: [B, C, H, W] -> [B, H, W].
Tensor confidence_map(const Tensor& logits);

/// Per-pixel KL(softmax(p) || softmax(q)) summed over classes, clamped at 0.
Tensor kl_per_pixel(const Tensor& p_logits, const Tensor& q_logits);

/// exp(-KL(primary || auxiliary)) per pixel; 1 where the heads agree.
DifficultyMap rd_tfe(const Tensor& primary_logits, const Tensor& aux_logits);
DifficultyMap rd_tfe(const LogitPair& teacher);

/// Binary map from s = (student_conf <= t) and h = (teacher_conf <= t):
/// XOR s^h, AND s&h, OR s|h, STRICT s&!h.
DifficultyMap rd_tse(const Tensor& student_conf, const Tensor& teacher_conf, double t, CombineMode mode);

/// Mean per-pixel cross-entropy of softmax(logits) against labels.
ad::Var cross_entropy(const ad::Var& logits, const LabelMap& labels);

/// sum(rd * CE) / (B*H*W), or / sum(rd) under LossNormalization::Weights.
ad::Var weighted_task_loss(const ad::Var& logits, const LabelMap& labels, const DifficultyMap& rd,
                           LossNormalization normalization = LossNormalization::Pixels);

/// Mean over pixels of KL[softmax(Zs/T) || softmax(Zt/T)], student first.
ad::Var pixelwise_kd_loss(const ad::Var& student_logits, const Tensor& teacher_logits, double temperature);

/// Stage-switched RDD objective for 1-based iteration `iter`.
LossBreakdown rdd_total_loss(Index iter, const DistillConfig& config, const LogitPair& student,
                             const LogitPair& teacher, const LabelMap& labels,
                             std::span<const ExtraLoss> extras = {});

/// Attention-transfer loss: for each stage pair j, attention = sum over
/// channels of squared activations, flattened per sample and L2-normalised;
/// loss = sum_j (betas[j] / 2) * sum_b ||q_s - q_t||_2. Teacher maps are
/// resampled (nearest) to the student's spatial size.
ad::Var at_hook(std::span<const ad::Var> student_features, std::span<const Tensor> teacher_features,
                std::span<const double> betas);
ad::Var at_hook(std::span<const ad::Var> student_features, std::span<const Tensor> teacher_features, double beta);

}  // namespace rdd
