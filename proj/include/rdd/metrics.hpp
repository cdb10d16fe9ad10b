#pragma once

#include "rdd/rdd.hpp"
#include "rdd/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace rdd {

/// counts(truth, prediction) over evaluated pixels.
class ConfusionMatrix {
 public:
  using Counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

  /// Reserved label value for pixels excluded from evaluation. The synthetic
  /// data never produces it.
  static constexpr std::int32_t kIgnoreLabel = -1;

  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return static_cast<int>(counts_.rows()); }
  const Counts& counts() const { return counts_; }
  std::int64_t total() const { return counts_.sum(); }

  /// predictions and labels share a shape; any rank, including empty batches.
  void accumulate(const LabelMap& predictions, const LabelMap& labels);
  void merge(const ConfusionMatrix& other);

  static ConfusionMatrix from_counts(Counts counts);

 private:
  Counts counts_;
};

/// IoU per class; NaN for classes absent from both truth and prediction.
Eigen::VectorXd class_iou(const ConfusionMatrix& cm);
/// Mean IoU over classes that occur in truth or prediction.
double miou(const ConfusionMatrix& cm);
double pixel_accuracy(const ConfusionMatrix& cm);

/// Per-pixel argmax over the class axis: [B, C, H, W] -> [B, H, W].
LabelMap argmax_classes(const Tensor& logits);

struct DifficultyStats {
  double mean = 0.0;
  double active_fraction = 0.0;
  /// 16 equal bins over [0, 1]; the last bin is closed.
  std::array<std::int64_t, 16> histogram{};
};

DifficultyStats difficulty_stats(const DifficultyMap& rd);

/// One row of the metrics CSV.
struct MetricsRow {
  Index iter = 0;
  std::string stage = "none";
  double miou = 0.0;
  double pixel_acc = 0.0;
  std::vector<double> class_iou;
  double mean_rd = 0.0;
  double active_fraction = 0.0;
  double loss_total = 0.0;
  double loss_task_weighted = 0.0;
  double loss_kd = 0.0;
  double loss_extras = 0.0;
};

std::string metrics_csv_header(int num_classes);
std::string metrics_csv_line(const MetricsRow& row);
/// Round-trip decimal formatting used by every CSV the project writes.
std::string format_number(double v);

}  // namespace rdd
