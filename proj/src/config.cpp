#include "rdd/config.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace rdd {

using nlohmann::json;

void ExperimentConfig::validate() {
  if (total_iters < 1) throw std::invalid_argument("total_iters must be positive");
  if (teacher_iters < 0) throw std::invalid_argument("teacher_iters must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be positive");
  if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
  if (aux_weight < 0.0) throw std::invalid_argument("aux_weight must be >= 0");
  if (at_beta < 0.0) throw std::invalid_argument("at_beta must be >= 0");
  if (!(optimizer.base_lr >= 0.0 && optimizer.momentum >= 0.0 && optimizer.weight_decay >= 0.0)) {
    throw std::invalid_argument("optimizer settings must be non-negative");
  }
  teacher.validate();
  student.validate();
  if (teacher.num_classes != scene.num_classes || student.num_classes != scene.num_classes) {
    throw std::invalid_argument("teacher/student num_classes must equal scene.num_classes");
  }
  scene.validate(std::max(teacher.downsampling(), student.downsampling()));
  distill.total_iters = total_iters;
  distill.validate();
}

namespace {

// Reads keys of one JSON object, rejecting any that were not consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + display() + "' must be an object");
    for (const auto& [key, value] : j_.items()) pending_.push_back(key);
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!take(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config: wrong type for '" + child(key) + "'");
    }
  }

  const json* object(const char* key) { return take(key) ? &j_.at(key) : nullptr; }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    if (!pending_.empty()) throw std::invalid_argument("config: unknown key '" + child(pending_.front().c_str()) + "'");
  }

 private:
  bool take(const char* key) {
    const auto it = std::find(pending_.begin(), pending_.end(), key);
    if (it == pending_.end()) return false;
    pending_.erase(it);
    return true;
  }
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::vector<std::string> pending_;
};

void read_spec(const json& j, const std::string& path, ModelSpec& spec, bool& classes_given) {
  Reader r(j, path);
  if (const json* stages = r.object("stages")) {
    if (!stages->is_array()) throw std::invalid_argument("config: '" + path + ".stages' must be an array");
    spec.stages.clear();
    for (std::size_t i = 0; i < stages->size(); ++i) {
      StageSpec st;
      Reader sr((*stages)[i], path + ".stages[" + std::to_string(i) + "]");
      sr.read("channels", st.channels);
      sr.read("convs", st.convs);
      sr.read("stride", st.stride);
      sr.finish();
      spec.stages.push_back(st);
    }
  }
  if (j.contains("num_classes")) classes_given = true;
  r.read("num_classes", spec.num_classes);
  r.read("has_aux_head", spec.has_aux_head);
  r.read("input_channels", spec.input_channels);
  r.finish();
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  Reader r(j, "");
  if (const json* s = r.object("scene")) {
    Reader sr(*s, "scene");
    sr.read("image_size", cfg.scene.image_size);
    sr.read("num_classes", cfg.scene.num_classes);
    sr.read("shapes_min", cfg.scene.shapes_min);
    sr.read("shapes_max", cfg.scene.shapes_max);
    sr.read("noise_rate", cfg.scene.noise_rate);
    sr.read("boundary_blur", cfg.scene.boundary_blur);
    sr.read("texture_noise", cfg.scene.texture_noise);
    sr.read("seed", cfg.scene.seed);
    sr.read("train_size", cfg.scene.train_size);
    sr.read("val_size", cfg.scene.val_size);
    sr.read("flip", cfg.scene.flip);
    sr.finish();
  }
  cfg.teacher.num_classes = cfg.scene.num_classes;
  cfg.student.num_classes = cfg.scene.num_classes;
  bool teacher_classes = false, student_classes = false;
  if (const json* t = r.object("teacher")) read_spec(*t, "teacher", cfg.teacher, teacher_classes);
  if (const json* s = r.object("student")) read_spec(*s, "student", cfg.student, student_classes);
  if (const json* d = r.object("distill")) {
    Reader dr(*d, "distill");
    dr.read("p", cfg.distill.p);
    dr.read("t", cfg.distill.t);
    dr.read("T", cfg.distill.temperature);
    std::string mode(to_string(cfg.distill.mode));
    dr.read("mode", mode);
    cfg.distill.mode = parse_combine_mode(mode);
    std::string norm(to_string(cfg.distill.normalization));
    dr.read("normalization", norm);
    cfg.distill.normalization = parse_normalization(norm);
    dr.finish();
  }
  if (const json* o = r.object("optimizer")) {
    Reader orr(*o, "optimizer");
    orr.read("base_lr", cfg.optimizer.base_lr);
    orr.read("momentum", cfg.optimizer.momentum);
    orr.read("weight_decay", cfg.optimizer.weight_decay);
    orr.finish();
  }
  r.read("total_iters", cfg.total_iters);
  r.read("teacher_iters", cfg.teacher_iters);
  r.read("batch_size", cfg.batch_size);
  r.read("eval_every", cfg.eval_every);
  r.read("seeds", cfg.seeds);
  r.read("teacher_seed", cfg.teacher_seed);
  r.read("aux_weight", cfg.aux_weight);
  r.read("at_beta", cfg.at_beta);
  r.read("output_dir", cfg.output_dir);
  r.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ModelSpec& spec) {
  json stages = json::array();
  for (const auto& s : spec.stages) stages.push_back({{"channels", s.channels}, {"convs", s.convs}, {"stride", s.stride}});
  return {{"stages", stages},
          {"num_classes", spec.num_classes},
          {"has_aux_head", spec.has_aux_head},
          {"input_channels", spec.input_channels}};
}

json to_json(const ExperimentConfig& c) {
  return {
      {"scene",
       {{"image_size", c.scene.image_size},
        {"num_classes", c.scene.num_classes},
        {"shapes_min", c.scene.shapes_min},
        {"shapes_max", c.scene.shapes_max},
        {"noise_rate", c.scene.noise_rate},
        {"boundary_blur", c.scene.boundary_blur},
        {"texture_noise", c.scene.texture_noise},
        {"seed", c.scene.seed},
        {"train_size", c.scene.train_size},
        {"val_size", c.scene.val_size},
        {"flip", c.scene.flip}}},
      {"teacher", to_json(c.teacher)},
      {"student", to_json(c.student)},
      {"distill",
       {{"p", c.distill.p},
        {"t", c.distill.t},
        {"T", c.distill.temperature},
        {"mode", std::string(to_string(c.distill.mode))},
        {"normalization", std::string(to_string(c.distill.normalization))}}},
      {"optimizer",
       {{"base_lr", c.optimizer.base_lr}, {"momentum", c.optimizer.momentum}, {"weight_decay", c.optimizer.weight_decay}}},
      {"total_iters", c.total_iters},
      {"teacher_iters", c.teacher_iters},
      {"batch_size", c.batch_size},
      {"eval_every", c.eval_every},
      {"seeds", c.seeds},
      {"teacher_seed", c.teacher_seed},
      {"aux_weight", c.aux_weight},
      {"at_beta", c.at_beta},
      {"output_dir", c.output_dir},
  };
}

}  // namespace rdd
