#pragma once

// Experiment driver: teacher pretraining, student distillation, single-axis
// ablations, evaluation and difficulty-map export. Every run writes a
// directory holding its checkpoint, metrics.csv, train_log.csv and a
// manifest.json that records the resolved configuration.

#include "rdd/config.hpp"
#include "rdd/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rdd {

enum class Method { BaselineCE, KdOnly, Rdd, RddPlusAt };
std::string_view to_string(Method method);
Method parse_method(std::string_view name);

/// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(Index iter, const std::string& what) : std::runtime_error(what), iter_(iter) {}
  Index iteration() const { return iter_; }

 private:
  Index iter_;
};

struct RunRecord {
  std::filesystem::path dir;
  std::filesystem::path checkpoint;
  std::vector<MetricsRow> rows;
  double initial_miou = 0.0;
  double final_miou = 0.0;
  /// Iterations whose TSE mask had no active pixel.
  Index zero_mask_batches = 0;
  /// Last TFE iteration, round(p * total_iters); 0 outside distillation.
  Index stage_transition_iter = 0;
  double wall_seconds = 0.0;
};

struct EvalResult {
  ConfusionMatrix confusion;
  double miou = 0.0;
  double pixel_acc = 0.0;
};

/// Scores `params` on the first `count` samples of `split` (all if negative).
EvalResult evaluate(const Params& params, const SceneConfig& scene, Split split, Index count = -1,
                    Index batch_size = 16);

/// Trains the teacher on CE(primary) + aux_weight * CE(aux) for teacher_iters.
RunRecord pretrain_teacher(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Trains a student from `seed` against the frozen `teacher`.
RunRecord distill(const ExperimentConfig& config, const Params& teacher, Method method, std::uint64_t seed,
                  const std::filesystem::path& out_dir, const std::filesystem::path& teacher_checkpoint = {});

enum class GridAxis { P, T, Mode };
std::string_view to_string(GridAxis axis);

struct GridSpec {
  GridAxis axis = GridAxis::P;
  std::vector<std::string> values;
};

/// "p", "t" or "mode" for the default values, or "p=0,0.05,0.1",
/// "t=0.5,0.7", "mode=XOR,AND". More than one axis throws.
GridSpec parse_grid(std::string_view text);
/// p: 0, 0.1, 0.2, 0.3; t: 0.60 to 0.80 by 0.05; mode: XOR, AND, OR, STRICT.
std::vector<std::string> default_grid_values(GridAxis axis);
/// Copy of `config` with the grid axis set to `value`.
ExperimentConfig apply_grid_value(const ExperimentConfig& config, GridAxis axis, const std::string& value);

struct AblationPoint {
  std::string value;
  std::vector<double> final_miou;  // one per seed, in config.seeds order
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct AblationResult {
  GridAxis axis = GridAxis::P;
  std::vector<AblationPoint> points;
  std::filesystem::path comparison_csv;
  std::filesystem::path orderings_csv;
};

/// Runs the RDD method for every grid value and seed.
AblationResult ablate(const ExperimentConfig& config, const Params& teacher, const GridSpec& grid,
                      const std::filesystem::path& out_dir);

double median(std::vector<double> values);

struct ExportReport {
  std::vector<std::filesystem::path> files;
  /// Over all exported pixels.
  double tse_active_fraction = 0.0;
  double tfe_min = 0.0;
  double tfe_max = 0.0;
};

/// Writes per sample: input PNG, label PGM, TFE and TSE (XOR at config t)
/// maps as PGM and CSV, and student/teacher confidence PGMs. File names are
/// {split}_{index}_{kind}.{ext}.
ExportReport export_maps(const ExperimentConfig& config, const Params& teacher, const Params& student,
                         std::span<const Index> samples, Split split, const std::filesystem::path& out_dir);

/// Writes sample images and labels of a split for inspection.
std::vector<std::filesystem::path> dump_dataset(const SceneConfig& scene, Split split, std::span<const Index> samples,
                                                const std::filesystem::path& out_dir);

}  // namespace rdd
