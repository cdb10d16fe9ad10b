#pragma once

#include "rdd/data.hpp"
#include "rdd/model.hpp"
#include "rdd/rdd.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rdd {

struct OptimizerConfig {
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct ExperimentConfig {
  SceneConfig scene;
  ModelSpec teacher = ModelSpec::default_teacher(5);
  ModelSpec student = ModelSpec::default_student(5);
  DistillConfig distill;
  OptimizerConfig optimizer;
  Index total_iters = 2000;
  Index teacher_iters = 2000;
  Index batch_size = 8;
  Index eval_every = 200;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::uint64_t teacher_seed = 0;
  /// Weight of the auxiliary-head cross-entropy during teacher pretraining.
  double aux_weight = 0.4;
  /// Attention-transfer base weight; each stage uses at_beta / (H * W * B).
  double at_beta = 1000.0;
  std::string output_dir = "runs";

  /// Also copies total_iters into distill.total_iters.
  void validate();
};

/// Overlays `j` on the defaults. Unknown keys and type mismatches throw with
/// the offending key path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const ModelSpec& spec);

}  // namespace rdd
