#include "rdd/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rdd {

ConfusionMatrix::ConfusionMatrix(int num_classes) {
  if (num_classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  counts_ = Counts::Zero(num_classes, num_classes);
}

ConfusionMatrix ConfusionMatrix::from_counts(Counts counts) {
  if (counts.rows() != counts.cols() || counts.rows() < 1) throw std::invalid_argument("confusion counts must be square");
  if ((counts.array() < 0).any()) throw std::invalid_argument("confusion counts must be non-negative");
  ConfusionMatrix cm(static_cast<int>(counts.rows()));
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::accumulate(const LabelMap& predictions, const LabelMap& labels) {
  if (predictions.shape() != labels.shape()) {
    throw ShapeError("confusion matrix: predictions " + to_string(predictions.shape()) + " vs labels " +
                     to_string(labels.shape()));
  }
  const int C = num_classes();
  // Validate before counting so a bad batch leaves the matrix untouched.
  for (Index i = 0; i < labels.size(); ++i) {
    const std::int32_t y = labels[i], p = predictions[i];
    if (y == kIgnoreLabel) continue;
    if (y < 0 || y >= C || p < 0 || p >= C) {
      throw std::out_of_range("confusion matrix: class out of range at flat pixel " + std::to_string(i) +
                              " (label " + std::to_string(y) + ", prediction " + std::to_string(p) + ")");
    }
  }
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels[i] != kIgnoreLabel) ++counts_(labels[i], predictions[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes() != num_classes()) throw std::invalid_argument("confusion matrix class counts differ");
  counts_ += other.counts_;
}

Eigen::VectorXd class_iou(const ConfusionMatrix& cm) {
  const auto& n = cm.counts();
  const int C = cm.num_classes();
  Eigen::VectorXd iou(C);
  for (int c = 0; c < C; ++c) {
    const auto inter = n(c, c);
    const auto uni = n.row(c).sum() + n.col(c).sum() - inter;
    iou[c] = uni == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return iou;
}

double miou(const ConfusionMatrix& cm) {
  const Eigen::VectorXd iou = class_iou(cm);
  double acc = 0.0;
  int present = 0;
  for (Eigen::Index c = 0; c < iou.size(); ++c) {
    if (std::isnan(iou[c])) continue;
    acc += iou[c];
    ++present;
  }
  if (present == 0) throw std::domain_error("mIoU undefined: no class occurs in truth or prediction");
  return acc / present;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::domain_error("pixel accuracy undefined on an empty confusion matrix");
  return static_cast<double>(cm.counts().trace()) / static_cast<double>(total);
}

LabelMap argmax_classes(const Tensor& logits) {
  if (logits.ndim() != 4) throw ShapeError("argmax_classes: expected [B, C, H, W], got " + to_string(logits.shape()));
  const Index B = logits.dim(0), C = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  LabelMap out(Shape{B, logits.dim(2), logits.dim(3)});
  for (Index b = 0; b < B; ++b) {
    const double* z = logits.raw() + b * C * P;
    for (Index i = 0; i < P; ++i) {
      Index best = 0;
      for (Index c = 1; c < C; ++c) {
        if (z[c * P + i] > z[best * P + i]) best = c;
      }
      out[b * P + i] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

DifficultyStats difficulty_stats(const DifficultyMap& rd) {
  DifficultyStats s;
  const auto& v = rd.values.data();
  if (v.size() == 0) return s;
  s.mean = v.sum() / static_cast<double>(v.size());
  s.active_fraction = static_cast<double>((v > 0.0).count()) / static_cast<double>(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const auto bin = std::clamp<Index>(static_cast<Index>(std::floor(v[i] * 16.0)), 0, 15);
    ++s.histogram[static_cast<std::size_t>(bin)];
  }
  return s;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

std::string metrics_csv_header(int num_classes) {
  std::string h = "iter,stage,miou,pixel_acc";
  for (int c = 0; c < num_classes; ++c) h += fmt::format(",iou_{}", c);
  h += ",mean_rd,active_fraction,loss_total,loss_task_weighted,loss_kd,loss_extras";
  return h;
}

std::string metrics_csv_line(const MetricsRow& r) {
  std::string line = fmt::format("{},{},{},{}", r.iter, r.stage, format_number(r.miou), format_number(r.pixel_acc));
  for (double v : r.class_iou) line += "," + format_number(v);
  for (double v : {r.mean_rd, r.active_fraction, r.loss_total, r.loss_task_weighted, r.loss_kd, r.loss_extras}) {
    line += "," + format_number(v);
  }
  return line;
}

}  // namespace rdd
