#include "rdd/rdd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rdd {

std::string_view to_string(Stage stage) { return stage == Stage::TFE ? "TFE" : "TSE"; }

std::string_view to_string(CombineMode mode) {
  switch (mode) {
    case CombineMode::XOR: return "XOR";
    case CombineMode::AND: return "AND";
    case CombineMode::OR: return "OR";
    case CombineMode::STRICT: return "STRICT";
  }
  return "?";
}

std::string_view to_string(LossNormalization n) { return n == LossNormalization::Pixels ? "pixels" : "weights"; }

CombineMode parse_combine_mode(std::string_view name) {
  for (CombineMode m : {CombineMode::XOR, CombineMode::AND, CombineMode::OR, CombineMode::STRICT}) {
    if (name == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown combination mode '" + std::string(name) + "' (XOR, AND, OR, STRICT)");
}

LossNormalization parse_normalization(std::string_view name) {
  if (name == "pixels") return LossNormalization::Pixels;
  if (name == "weights") return LossNormalization::Weights;
  throw std::invalid_argument("unknown loss normalization '" + std::string(name) + "' (pixels, weights)");
}

void DistillConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("distill.p must lie in [0, 1]");
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("distill.t must lie in (0, 1)");
  if (!(temperature > 0.0)) throw std::invalid_argument("distill.T must be positive");
  if (total_iters < 1) throw std::invalid_argument("total_iters must be positive");
}

Index DistillConfig::tfe_iters() const {
  return static_cast<Index>(std::llround(p * static_cast<double>(total_iters)));
}

Stage DistillConfig::stage_at(Index iter) const {
  if (iter < 1 || iter > total_iters) {
    throw std::out_of_range("iteration " + std::to_string(iter) + " outside [1, " + std::to_string(total_iters) + "]");
  }
  return iter <= tfe_iters() ? Stage::TFE : Stage::TSE;
}

double LossBreakdown::extras_sum() const {
  double s = 0.0;
  for (const auto& [name, value] : extras) s += value;
  return s;
}

// ---------------------------------------------------------------------------

namespace {

void require_logits(const Tensor& logits, const char* op) {
  if (logits.ndim() != 4) throw ShapeError(std::string(op) + ": expected [B, C, H, W] logits, got " + to_string(logits.shape()));
  if (logits.dim(1) < 2) throw ShapeError(std::string(op) + ": need at least 2 classes");
}

Shape pixel_shape(const Shape& logits) { return {logits[0], logits[2], logits[3]}; }

// Plain (untaped) log-softmax over axis 1 of [B, C, H, W].
Tensor log_softmax_classes(const Tensor& logits) {
  ad::NoGradGuard guard;
  return ad::log_softmax(ad::constant(logits), 1).value();
}

void validate_labels(const LabelMap& labels, const Shape& logits) {
  const Shape expected = pixel_shape(logits);
  if (labels.shape() != expected) {
    throw ShapeError("labels shape " + to_string(labels.shape()) + " does not match logits " + to_string(logits));
  }
  const Index classes = logits[1], h = logits[2], w = logits[3];
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw std::out_of_range("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) +
                              ") at pixel (b=" + std::to_string(i / (h * w)) + ", h=" +
                              std::to_string((i / w) % h) + ", w=" + std::to_string(i % w) + ")");
    }
  }
}

// Per-pixel cross-entropy map [B, H, W].
ad::Var pixel_cross_entropy(const ad::Var& logits, const LabelMap& labels) {
  if (logits.value().ndim() != 4) throw ShapeError("cross entropy: expected [B, C, H, W] logits, got " + to_string(logits.shape()));
  validate_labels(labels, logits.shape());
  return -ad::gather_class_channel(ad::log_softmax(logits, 1), labels);
}

}  // namespace

Tensor confidence_map(const Tensor& logits) {
  require_logits(logits, "confidence_map");
  const Index B = logits.dim(0), C = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  Tensor conf(pixel_shape(logits.shape()));
  for (Index b = 0; b < B; ++b) {
    const double* z = logits.raw() + b * C * P;
    for (Index i = 0; i < P; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index c = 0; c < C; ++c) mx = std::max(mx, z[c * P + i]);
      double denom = 0.0;
      for (Index c = 0; c < C; ++c) denom += std::exp(z[c * P + i] - mx);
      conf[b * P + i] = 1.0 / denom;
    }
  }
  return conf;
}

Tensor kl_per_pixel(const Tensor& p_logits, const Tensor& q_logits) {
  require_logits(p_logits, "kl_per_pixel");
  if (p_logits.shape() != q_logits.shape()) {
    throw ShapeError("kl_per_pixel: shape mismatch " + to_string(p_logits.shape()) + " vs " + to_string(q_logits.shape()));
  }
  const Tensor lp = log_softmax_classes(p_logits);
  const Tensor lq = log_softmax_classes(q_logits);
  const Index B = p_logits.dim(0), C = p_logits.dim(1), P = p_logits.dim(2) * p_logits.dim(3);
  Tensor kl(pixel_shape(p_logits.shape()));
  for (Index b = 0; b < B; ++b) {
    for (Index i = 0; i < P; ++i) {
      double acc = 0.0;
      for (Index c = 0; c < C; ++c) {
        const Index at = (b * C + c) * P + i;
        acc += std::exp(lp[at]) * (lp[at] - lq[at]);
      }
      kl[b * P + i] = std::max(acc, 0.0);
    }
  }
  return kl;
}

DifficultyMap rd_tfe(const Tensor& primary_logits, const Tensor& aux_logits) {
  DifficultyMap map{kl_per_pixel(primary_logits, aux_logits), DifficultyKind::TFE};
  map.values.data() = (-map.values.data()).exp();
  return map;
}

DifficultyMap rd_tfe(const LogitPair& teacher) {
  if (!teacher.auxiliary) {
    throw std::invalid_argument(
        "TFE difficulty needs the teacher's auxiliary classifier; use a dual-head teacher (has_aux_head = true)");
  }
  return rd_tfe(teacher.primary.value(), teacher.auxiliary->value());
}

DifficultyMap rd_tse(const Tensor& student_conf, const Tensor& teacher_conf, double t, CombineMode mode) {
  if (student_conf.shape() != teacher_conf.shape()) {
    throw ShapeError("rd_tse: confidence shapes differ, " + to_string(student_conf.shape()) + " vs " +
                     to_string(teacher_conf.shape()));
  }
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("rd_tse: threshold must lie in (0, 1)");
  DifficultyMap map{Tensor(student_conf.shape()), DifficultyKind::TSE};
  for (Index i = 0; i < student_conf.size(); ++i) {
    const double cs = student_conf[i], ct = teacher_conf[i];
    if (!(cs >= 0.0 && cs <= 1.0 && ct >= 0.0 && ct <= 1.0)) {
      throw std::domain_error("rd_tse: confidence outside [0, 1] at flat pixel " + std::to_string(i));
    }
    const bool s = cs <= t;
    const bool h = ct <= t;
    bool on = false;
    switch (mode) {
      case CombineMode::XOR: on = s != h; break;
      case CombineMode::AND: on = s && h; break;
      case CombineMode::OR: on = s || h; break;
      case CombineMode::STRICT: on = s && !h; break;
    }
    map.values[i] = on ? 1.0 : 0.0;
  }
  return map;
}

ad::Var cross_entropy(const ad::Var& logits, const LabelMap& labels) {
  return ad::mean(pixel_cross_entropy(logits, labels));
}

ad::Var weighted_task_loss(const ad::Var& logits, const LabelMap& labels, const DifficultyMap& rd,
                           LossNormalization normalization) {
  const ad::Var ce = pixel_cross_entropy(logits, labels);
  if (rd.values.shape() != ce.shape()) {
    throw ShapeError("weighted_task_loss: difficulty map shape " + to_string(rd.values.shape()) +
                     " does not match pixels " + to_string(ce.shape()));
  }
  const ad::Var weighted = ad::sum(ad::mul(ce, ad::constant(rd.values)));
  double denom = static_cast<double>(ce.size());
  if (normalization == LossNormalization::Weights) {
    denom = rd.values.data().sum();
    if (denom <= 0.0) return ad::scale(weighted, 0.0);
  }
  return ad::scale(weighted, 1.0 / denom);
}

ad::Var pixelwise_kd_loss(const ad::Var& student_logits, const Tensor& teacher_logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("pixelwise_kd_loss: temperature must be positive");
  require_logits(student_logits.value(), "pixelwise_kd_loss");
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("pixelwise_kd_loss: student " + to_string(student_logits.shape()) + " vs teacher " +
                     to_string(teacher_logits.shape()));
  }
  const double inv_t = 1.0 / temperature;
  Tensor scaled_teacher = teacher_logits;
  scaled_teacher.data() *= inv_t;
  const ad::Var log_q = ad::constant(log_softmax_classes(scaled_teacher));
  const ad::Var log_p = ad::log_softmax(ad::scale(student_logits, inv_t), 1);
  const ad::Var kl = ad::sum(ad::mul(ad::exp(log_p), ad::sub(log_p, log_q)), 1);
  return ad::mean(kl);
}

LossBreakdown rdd_total_loss(Index iter, const DistillConfig& config, const LogitPair& student,
                             const LogitPair& teacher, const LabelMap& labels, std::span<const ExtraLoss> extras) {
  config.validate();
  LossBreakdown out;
  out.stage = config.stage_at(iter);
  const Tensor& teacher_primary = teacher.primary.value();

  const DifficultyMap rd =
      out.stage == Stage::TFE
          ? rd_tfe(teacher)
          : rd_tse(confidence_map(student.primary.value()), confidence_map(teacher_primary), config.t, config.mode);

  const ad::Var task = weighted_task_loss(student.primary, labels, rd, config.normalization);
  const ad::Var kd = pixelwise_kd_loss(student.primary, teacher_primary, config.temperature);
  ad::Var total = ad::add(task, kd);
  for (const auto& extra : extras) {
    const ad::Var v = extra.evaluate();
    if (v.size() != 1) throw ShapeError("extra loss '" + extra.name + "' is not a scalar");
    out.extras.emplace_back(extra.name, v.item());
    total = ad::add(total, v);
  }

  out.total = total;
  out.total_value = total.item();
  out.task_weighted = task.item();
  out.kd = kd.item();
  const Index n = rd.values.size();
  out.mean_rd = rd.values.data().sum() / static_cast<double>(n);
  out.active_pixel_fraction = static_cast<double>((rd.values.data() > 0.0).count()) / static_cast<double>(n);
  out.empty_mask = out.active_pixel_fraction == 0.0;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// [B, C, H, W] -> channel sum of squares, flattened and L2-normalised: [B, H*W].
ad::Var attention_vectors(const ad::Var& features, Index out_h, Index out_w) {
  const Shape& s = features.shape();
  ad::Var att = ad::sum(ad::mul(features, features), 1, true);
  att = ad::resize_nearest(att, out_h, out_w);
  return ad::normalize_rows(ad::reshape(att, {s[0], out_h * out_w}));
}

}  // namespace

ad::Var at_hook(std::span<const ad::Var> student_features, std::span<const Tensor> teacher_features,
                std::span<const double> betas) {
  if (student_features.size() != teacher_features.size()) {
    throw std::invalid_argument("at_hook: " + std::to_string(student_features.size()) + " student stages paired with " +
                                std::to_string(teacher_features.size()) + " teacher stages");
  }
  if (betas.size() != student_features.size()) {
    throw std::invalid_argument("at_hook: need one beta per stage pair");
  }
  if (student_features.empty()) throw std::invalid_argument("at_hook: no stage pairs");
  ad::Var total;
  for (std::size_t j = 0; j < student_features.size(); ++j) {
    const ad::Var& fs = student_features[j];
    const Tensor& ft = teacher_features[j];
    if (fs.value().ndim() != 4 || ft.ndim() != 4 || fs.shape()[0] != ft.dim(0)) {
      throw ShapeError("at_hook: pair " + std::to_string(j) + " has incompatible shapes " + to_string(fs.shape()) +
                       " and " + to_string(ft.shape()));
    }
    const Index h = fs.shape()[2], w = fs.shape()[3];
    const ad::Var qs = attention_vectors(fs, h, w);
    ad::Var qt;
    {
      ad::NoGradGuard guard;
      qt = attention_vectors(ad::constant(ft), h, w);
    }
    const ad::Var term = ad::scale(ad::sum(ad::row_norms(ad::sub(qs, qt))), betas[j] / 2.0);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

ad::Var at_hook(std::span<const ad::Var> student_features, std::span<const Tensor> teacher_features, double beta) {
  const std::vector<double> betas(student_features.size(), beta);
  return at_hook(student_features, teacher_features, betas);
}

}  // namespace rdd
