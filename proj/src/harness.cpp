#include "rdd/harness.hpp"

#include "rdd/image_io.hpp"
#include "rdd/random.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <unordered_map>

namespace rdd {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Method method) {
  switch (method) {
    case Method::BaselineCE: return "baseline_ce";
    case Method::KdOnly: return "kd_only";
    case Method::Rdd: return "rdd";
    case Method::RddPlusAt: return "rdd_plus_at";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::BaselineCE, Method::KdOnly, Method::Rdd, Method::RddPlusAt}) {
    if (name == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected baseline_ce, kd_only, rdd or rdd_plus_at)");
}

std::string_view to_string(GridAxis axis) {
  switch (axis) {
    case GridAxis::P: return "p";
    case GridAxis::T: return "t";
    case GridAxis::Mode: return "mode";
  }
  return "?";
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

EvalResult evaluate_on(const Params& params, const Dataset& data) {
  ad::NoGradGuard no_grad;
  EvalResult r{ConfusionMatrix(params.spec().num_classes)};
  for (const SegBatch& batch : data.epoch(0)) {
    const LogitPair out = forward(params, ad::constant(batch.images), false);
    r.confusion.accumulate(argmax_classes(out.primary.value()), batch.labels);
  }
  r.miou = miou(r.confusion);
  r.pixel_acc = pixel_accuracy(r.confusion);
  return r;
}

// Sample `b` of a [B, ...] tensor.
Tensor slice(const Tensor& batch, Index b) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const Index n = numel(s);
  return Tensor(s, Tensor::Storage(batch.data().segment(b * n, n)));
}

Tensor stack(const std::vector<const Tensor*>& parts) {
  Shape s = parts.front()->shape();
  const Index n = parts.front()->size();
  s.insert(s.begin(), static_cast<Index>(parts.size()));
  Tensor::Storage data(n * static_cast<Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) data.segment(static_cast<Index>(i) * n, n) = parts[i]->data();
  return Tensor(s, std::move(data));
}

// Frozen-teacher logits per (sample, flipped); the teacher never changes
// during a student run, so each view is evaluated once.
class TeacherCache {
 public:
  explicit TeacherCache(const Params& teacher) : teacher_(teacher) {}

  LogitPair lookup(const SegBatch& batch) {
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < batch.indices.size(); ++i) {
      if (!cache_.count(key(batch, i))) missing.push_back(i);
    }
    if (!missing.empty()) fill(batch, missing);
    std::vector<const Tensor*> primary, aux;
    for (std::size_t i = 0; i < batch.indices.size(); ++i) {
      const auto& e = cache_.at(key(batch, i));
      primary.push_back(&e.first);
      if (e.second) aux.push_back(&*e.second);
    }
    LogitPair out{ad::constant(stack(primary)), std::nullopt};
    if (aux.size() == primary.size()) out.auxiliary = ad::constant(stack(aux));
    return out;
  }

 private:
  static std::uint64_t key(const SegBatch& batch, std::size_t i) {
    return static_cast<std::uint64_t>(batch.indices[i]) * 2 + (batch.flipped[i] ? 1 : 0);
  }

  void fill(const SegBatch& batch, const std::vector<std::size_t>& missing) {
    std::vector<Tensor> images;
    for (std::size_t i : missing) images.push_back(slice(batch.images, static_cast<Index>(i)));
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : images) ptrs.push_back(&t);
    ad::NoGradGuard no_grad;
    const LogitPair out = forward(teacher_, ad::constant(stack(ptrs)), teacher_.spec().has_aux_head);
    for (std::size_t j = 0; j < missing.size(); ++j) {
      std::optional<Tensor> aux;
      if (out.auxiliary) aux = slice(out.auxiliary->value(), static_cast<Index>(j));
      cache_.emplace(key(batch, missing[j]), std::make_pair(slice(out.primary.value(), static_cast<Index>(j)), aux));
    }
  }

  const Params& teacher_;
  std::unordered_map<std::uint64_t, std::pair<Tensor, std::optional<Tensor>>> cache_;
};

struct StepResult {
  LossBreakdown loss;
  std::string stage;
};

using StepFn = std::function<StepResult(Index iter, const SegBatch& batch)>;

struct LoopSpec {
  std::string kind;
  Index iters = 0;
  Index eval_every = 1;
  std::uint64_t order_seed = 0;
  std::string checkpoint_name;
  json manifest;
};

std::string train_log_header() {
  return "iter,stage,lr,loss_total,loss_task_weighted,loss_kd,loss_extras,mean_rd,active_fraction,empty_mask\n";
}

// Shared SGD loop: poly LR, periodic validation, CSV logs and manifest.
RunRecord train_loop(const ExperimentConfig& config, Params& params, const LoopSpec& spec, const StepFn& step,
                     const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  Dataset train(config.scene, Split::Train, config.scene.train_size, config.batch_size);
  train.set_order_seed(spec.order_seed);
  const Dataset val(config.scene, Split::Val, config.scene.val_size, 16);
  Sgd sgd(config.optimizer.momentum, config.optimizer.weight_decay);

  RunRecord rec;
  rec.dir = out_dir;
  std::string metrics = metrics_csv_header(config.scene.num_classes) + "\n";
  std::string log = train_log_header();

  auto eval_row = [&](Index iter, std::string stage) {
    const EvalResult r = evaluate_on(params, val);
    MetricsRow row;
    row.iter = iter;
    row.stage = std::move(stage);
    row.miou = r.miou;
    row.pixel_acc = r.pixel_acc;
    const Eigen::VectorXd iou = class_iou(r.confusion);
    row.class_iou.assign(iou.data(), iou.data() + iou.size());
    return row;
  };

  {
    MetricsRow row = eval_row(0, "init");
    const double nan = std::nan("");
    row.mean_rd = row.active_fraction = nan;
    row.loss_total = row.loss_task_weighted = row.loss_kd = row.loss_extras = nan;
    rec.initial_miou = row.miou;
    metrics += metrics_csv_line(row) + "\n";
    rec.rows.push_back(row);
  }

  double acc_total = 0, acc_task = 0, acc_kd = 0, acc_extras = 0, acc_rd = 0, acc_active = 0;
  Index acc_n = 0;
  const Index per_epoch = train.batches_per_epoch();
  for (Index iter = 1; iter <= spec.iters; ++iter) {
    const SegBatch batch = train.batch((iter - 1) / per_epoch, (iter - 1) % per_epoch);
    const double lr = poly_lr(iter - 1, spec.iters, config.optimizer.base_lr);
    ad::reset_tape();
    const StepResult res = step(iter, batch);
    const LossBreakdown& l = res.loss;
    if (!std::isfinite(l.total_value)) {
      ad::reset_tape();
      throw DivergenceError(iter, fmt::format("{}: non-finite loss at iteration {}", spec.kind, iter));
    }
    ad::backward(l.total);
    sgd.step(params, lr);
    if (l.empty_mask) ++rec.zero_mask_batches;

    log += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", iter, res.stage, format_number(lr),
                       format_number(l.total_value), format_number(l.task_weighted), format_number(l.kd),
                       format_number(l.extras_sum()), format_number(l.mean_rd),
                       format_number(l.active_pixel_fraction), l.empty_mask ? 1 : 0);
    acc_total += l.total_value;
    acc_task += l.task_weighted;
    acc_kd += l.kd;
    acc_extras += l.extras_sum();
    acc_rd += l.mean_rd;
    acc_active += l.active_pixel_fraction;
    ++acc_n;

    if (iter % spec.eval_every == 0 || iter == spec.iters) {
      MetricsRow row = eval_row(iter, res.stage);
      const double n = static_cast<double>(acc_n);
      row.loss_total = acc_total / n;
      row.loss_task_weighted = acc_task / n;
      row.loss_kd = acc_kd / n;
      row.loss_extras = acc_extras / n;
      row.mean_rd = acc_rd / n;
      row.active_fraction = acc_active / n;
      acc_total = acc_task = acc_kd = acc_extras = acc_rd = acc_active = 0;
      acc_n = 0;
      metrics += metrics_csv_line(row) + "\n";
      rec.rows.push_back(row);
      fmt::print(stderr, "[{}] iter {}/{} stage {} loss {:.4f} val mIoU {:.4f}\n", spec.kind, iter, spec.iters,
                 row.stage, row.loss_total, row.miou);
    }
  }
  rec.final_miou = rec.rows.back().miou;

  rec.checkpoint = out_dir / spec.checkpoint_name;
  save_checkpoint(params, rec.checkpoint);
  write_text(out_dir / "metrics.csv", metrics);
  write_text(out_dir / "train_log.csv", log);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest = spec.manifest;
  manifest["kind"] = spec.kind;
  manifest["config"] = to_json(config);
  manifest["checkpoint"] = spec.checkpoint_name;
  manifest["metrics_csv"] = "metrics.csv";
  manifest["train_log_csv"] = "train_log.csv";
  manifest["iterations"] = spec.iters;
  manifest["initial_miou"] = rec.initial_miou;
  manifest["final_miou"] = rec.final_miou;
  manifest["zero_mask_batches"] = rec.zero_mask_batches;
  manifest["wall_seconds"] = rec.wall_seconds;
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return rec;
}

LossBreakdown plain_breakdown(const ad::Var& total, double task, double kd) {
  LossBreakdown l;
  l.total = total;
  l.total_value = total.item();
  l.task_weighted = task;
  l.kd = kd;
  l.mean_rd = 1.0;
  l.active_pixel_fraction = 1.0;
  return l;
}

// Student stage j pairs with teacher stage j, except that the last student
// stage pairs with the last teacher stage.
std::vector<std::size_t> at_pairing(std::size_t student_stages, std::size_t teacher_stages) {
  if (student_stages > teacher_stages) {
    throw std::invalid_argument("rdd_plus_at needs a teacher with at least as many stages as the student");
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j + 1 < student_stages; ++j) out.push_back(j);
  out.push_back(teacher_stages - 1);
  return out;
}

}  // namespace

EvalResult evaluate(const Params& params, const SceneConfig& scene, Split split, Index count, Index batch_size) {
  const Index available = split == Split::Train ? scene.train_size : scene.val_size;
  if (count < 0) count = available;
  if (count > available) throw std::out_of_range("evaluate: more samples requested than the split holds");
  return evaluate_on(params, Dataset(scene, split, count, batch_size));
}

RunRecord pretrain_teacher(const ExperimentConfig& config, const fs::path& out_dir) {
  ExperimentConfig cfg = config;
  cfg.validate();
  Params teacher = build(cfg.teacher, cfg.teacher_seed);
  const bool aux = cfg.teacher.has_aux_head && cfg.aux_weight > 0.0;
  LoopSpec spec;
  spec.kind = "pretrain_teacher";
  spec.iters = cfg.teacher_iters;
  spec.eval_every = cfg.eval_every;
  spec.order_seed = derive_seed({cfg.scene.seed, cfg.teacher_seed, 0x7465616368ULL});
  spec.checkpoint_name = "teacher.ckpt";
  spec.manifest = {{"seed", cfg.teacher_seed}};
  auto step = [&](Index, const SegBatch& batch) {
    const LogitPair out = forward(teacher, ad::constant(batch.images), aux);
    const ad::Var ce = cross_entropy(out.primary, batch.labels);
    if (!aux) return StepResult{plain_breakdown(ce, ce.item(), 0.0), "none"};
    const ad::Var aux_ce = ad::scale(cross_entropy(*out.auxiliary, batch.labels), cfg.aux_weight);
    LossBreakdown l = plain_breakdown(ad::add(ce, aux_ce), ce.item(), 0.0);
    l.extras.emplace_back("aux_ce", aux_ce.item());
    return StepResult{l, "none"};
  };
  return train_loop(cfg, teacher, spec, step, out_dir);
}

RunRecord distill(const ExperimentConfig& config, const Params& teacher, Method method, std::uint64_t seed,
                  const fs::path& out_dir, const fs::path& teacher_checkpoint) {
  ExperimentConfig cfg = config;
  cfg.validate();
  if (!(teacher.spec() == cfg.teacher)) throw std::invalid_argument("distill: teacher does not match config.teacher");
  const bool needs_aux = (method == Method::Rdd || method == Method::RddPlusAt) && cfg.distill.tfe_iters() > 0;
  if (needs_aux && !teacher.spec().has_aux_head) {
    throw std::invalid_argument("distill: the TFE stage needs a teacher with an auxiliary head (set distill.p = 0 "
                                "or use a dual-head teacher)");
  }
  Params student = build(cfg.student, seed);
  TeacherCache cache(teacher);

  std::vector<std::size_t> pairing;
  std::vector<double> betas;
  if (method == Method::RddPlusAt) {
    pairing = at_pairing(cfg.student.stages.size(), cfg.teacher.stages.size());
    Index h = cfg.scene.image_size;
    for (const StageSpec& s : cfg.student.stages) {
      h /= s.stride;
      betas.push_back(cfg.at_beta / static_cast<double>(h * h * cfg.batch_size));
    }
  }

  LoopSpec spec;
  spec.kind = "distill";
  spec.iters = cfg.total_iters;
  spec.eval_every = cfg.eval_every;
  spec.order_seed = derive_seed({cfg.scene.seed, seed, 0x73747564ULL});
  spec.checkpoint_name = "student.ckpt";
  spec.manifest = {{"method", std::string(to_string(method))},
                   {"seed", seed},
                   {"teacher_checkpoint", teacher_checkpoint.string()},
                   {"stage_transition_iter", cfg.distill.tfe_iters()}};

  auto step = [&](Index iter, const SegBatch& batch) -> StepResult {
    const ad::Var images = ad::constant(batch.images);
    if (method == Method::BaselineCE || method == Method::KdOnly) {
      const LogitPair s = forward(student, images, false);
      const ad::Var ce = cross_entropy(s.primary, batch.labels);
      if (method == Method::BaselineCE) return {plain_breakdown(ce, ce.item(), 0.0), "none"};
      const LogitPair t = cache.lookup(batch);
      const ad::Var kd = pixelwise_kd_loss(s.primary, t.primary.value(), cfg.distill.temperature);
      return {plain_breakdown(ad::add(ce, kd), ce.item(), kd.item()), "none"};
    }
    if (method == Method::Rdd) {
      const LogitPair s = forward(student, images, false);
      const LogitPair t = cache.lookup(batch);
      LossBreakdown l = rdd_total_loss(iter, cfg.distill, s, t, batch.labels);
      return {l, std::string(to_string(l.stage))};
    }
    std::vector<ad::Var> sf, tf_vars;
    const LogitPair s = forward(student, images, false, &sf);
    LogitPair t;
    {
      ad::NoGradGuard no_grad;
      t = forward(teacher, images, true, &tf_vars);
    }
    std::vector<Tensor> tf;
    for (std::size_t p : pairing) tf.push_back(tf_vars[p].value());
    const std::vector<ExtraLoss> extras{{"at", [&] { return at_hook(sf, tf, betas); }}};
    LossBreakdown l = rdd_total_loss(iter, cfg.distill, s, t, batch.labels, extras);
    return {l, std::string(to_string(l.stage))};
  };
  RunRecord rec = train_loop(cfg, student, spec, step, out_dir);
  rec.stage_transition_iter = cfg.distill.tfe_iters();
  return rec;
}

GridSpec parse_grid(std::string_view text) {
  const auto eq = text.find('=');
  const std::string_view name = text.substr(0, eq);
  GridSpec g;
  if (name == "p") g.axis = GridAxis::P;
  else if (name == "t") g.axis = GridAxis::T;
  else if (name == "mode") g.axis = GridAxis::Mode;
  else if (name.find_first_of(",;+") != std::string_view::npos) throw std::invalid_argument("grid may vary a single axis only");
  else throw std::invalid_argument("unknown grid axis '" + std::string(name) + "' (expected p, t or mode)");
  if (eq == std::string_view::npos) {
    g.values = default_grid_values(g.axis);
    return g;
  }
  std::string_view rest = text.substr(eq + 1);
  if (rest.find('=') != std::string_view::npos || rest.find(';') != std::string_view::npos) {
    throw std::invalid_argument("grid may vary a single axis only");
  }
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view v = rest.substr(0, comma);
    if (v.empty()) throw std::invalid_argument("empty grid value");
    g.values.emplace_back(v);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  if (g.values.empty()) throw std::invalid_argument("grid has no values");
  return g;
}

std::vector<std::string> default_grid_values(GridAxis axis) {
  switch (axis) {
    case GridAxis::P: return {"0", "0.1", "0.2", "0.3"};
    case GridAxis::T: return {"0.60", "0.65", "0.70", "0.75", "0.80"};
    case GridAxis::Mode: return {"XOR", "AND", "OR", "STRICT"};
  }
  return {};
}

ExperimentConfig apply_grid_value(const ExperimentConfig& config, GridAxis axis, const std::string& value) {
  ExperimentConfig cfg = config;
  try {
    switch (axis) {
      case GridAxis::P: cfg.distill.p = std::stod(value); break;
      case GridAxis::T: cfg.distill.t = std::stod(value); break;
      case GridAxis::Mode: cfg.distill.mode = parse_combine_mode(value); break;
    }
  } catch (const std::logic_error&) {
    throw std::invalid_argument("bad value '" + value + "' for grid axis " + std::string(to_string(axis)));
  }
  cfg.validate();
  return cfg;
}

AblationResult ablate(const ExperimentConfig& config, const Params& teacher, const GridSpec& grid,
                      const fs::path& out_dir) {
  std::vector<ExperimentConfig> configs;
  for (const std::string& v : grid.values) configs.push_back(apply_grid_value(config, grid.axis, v));
  fs::create_directories(out_dir);

  AblationResult res;
  res.axis = grid.axis;
  const std::string axis(to_string(grid.axis));
  for (std::size_t i = 0; i < configs.size(); ++i) {
    AblationPoint pt;
    pt.value = grid.values[i];
    for (std::uint64_t seed : config.seeds) {
      const fs::path dir = out_dir / fmt::format("{}={}", axis, pt.value) / fmt::format("seed_{}", seed);
      pt.final_miou.push_back(distill(configs[i], teacher, Method::Rdd, seed, dir).final_miou);
    }
    pt.median = median(pt.final_miou);
    pt.min = *std::min_element(pt.final_miou.begin(), pt.final_miou.end());
    pt.max = *std::max_element(pt.final_miou.begin(), pt.final_miou.end());
    res.points.push_back(std::move(pt));
  }

  std::string cmp = "axis,value,n_seeds,median_miou,min_miou,max_miou";
  for (std::uint64_t s : config.seeds) cmp += fmt::format(",seed_{}", s);
  cmp += "\n";
  for (const auto& pt : res.points) {
    cmp += fmt::format("{},{},{},{},{},{}", axis, pt.value, pt.final_miou.size(), format_number(pt.median),
                       format_number(pt.min), format_number(pt.max));
    for (double v : pt.final_miou) cmp += "," + format_number(v);
    cmp += "\n";
  }
  std::string ord = "value_a,value_b,median_diff,seeds_a_better,seeds_b_better,ties\n";
  for (std::size_t a = 0; a < res.points.size(); ++a) {
    for (std::size_t b = a + 1; b < res.points.size(); ++b) {
      const auto& pa = res.points[a];
      const auto& pb = res.points[b];
      int wa = 0, wb = 0, ties = 0;
      for (std::size_t s = 0; s < pa.final_miou.size(); ++s) {
        if (pa.final_miou[s] > pb.final_miou[s]) ++wa;
        else if (pa.final_miou[s] < pb.final_miou[s]) ++wb;
        else ++ties;
      }
      ord += fmt::format("{},{},{},{},{},{}\n", pa.value, pb.value, format_number(pa.median - pb.median), wa, wb,
                         ties);
    }
  }
  res.comparison_csv = out_dir / "comparison.csv";
  res.orderings_csv = out_dir / "orderings.csv";
  write_text(res.comparison_csv, cmp);
  write_text(res.orderings_csv, ord);
  json manifest = {{"kind", "ablate"},
                   {"axis", axis},
                   {"values", grid.values},
                   {"method", "rdd"},
                   {"config", to_json(config)}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

namespace {

Index split_size(const SceneConfig& scene, Split split) {
  return split == Split::Train ? scene.train_size : scene.val_size;
}

void check_index(const SceneConfig& scene, Split split, Index index) {
  if (index < 0 || index >= split_size(scene, split)) {
    throw std::out_of_range(fmt::format("sample index {} outside the {} split (size {})", index, to_string(split),
                                        split_size(scene, split)));
  }
}

// [1, H, W] -> [H, W].
Tensor squeeze(const Tensor& t) { return slice(t, 0); }

}  // namespace

ExportReport export_maps(const ExperimentConfig& config, const Params& teacher, const Params& student,
                         std::span<const Index> samples, Split split, const fs::path& out_dir) {
  if (!teacher.spec().has_aux_head) throw std::invalid_argument("export_maps: the teacher has no auxiliary head");
  for (Index idx : samples) check_index(config.scene, split, idx);
  fs::create_directories(out_dir);
  ExportReport rep;
  rep.tfe_min = 1.0;
  rep.tfe_max = 0.0;
  Index active = 0, total = 0;
  ad::NoGradGuard no_grad;
  for (Index idx : samples) {
    const SegSample s = generate(config.scene, split, idx);
    const Shape& is = s.image.shape();
    const ad::Var x = ad::constant(s.image.reshaped({1, is[0], is[1], is[2]}));
    const LogitPair t = forward(teacher, x, true);
    const LogitPair st = forward(student, x, false);
    const Tensor tfe = squeeze(rd_tfe(t).values);
    const Tensor s_conf = confidence_map(st.primary.value());
    const Tensor t_conf = confidence_map(t.primary.value());
    const Tensor tse = squeeze(rd_tse(s_conf, t_conf, config.distill.t, CombineMode::XOR).values);

    const std::string stem = fmt::format("{}_{}_", to_string(split), idx);
    auto path = [&](const char* kind, const char* ext) {
      rep.files.push_back(out_dir / (stem + kind + ext));
      return rep.files.back();
    };
    write_rgb_png(path("input", ".png"), s.image);
    write_label_pgm(path("label", ".pgm"), s.labels, config.scene.num_classes);
    write_unit_map_pgm(path("TFE", ".pgm"), tfe);
    write_map_csv(path("TFE", ".csv"), tfe);
    write_unit_map_pgm(path("TSE", ".pgm"), tse);
    write_map_csv(path("TSE", ".csv"), tse);
    write_unit_map_pgm(path("student_conf", ".pgm"), squeeze(s_conf));
    write_unit_map_pgm(path("teacher_conf", ".pgm"), squeeze(t_conf));

    rep.tfe_min = std::min(rep.tfe_min, tfe.data().minCoeff());
    rep.tfe_max = std::max(rep.tfe_max, tfe.data().maxCoeff());
    active += (tse.data() > 0.5).count();
    total += tse.size();
  }
  rep.tse_active_fraction = total > 0 ? static_cast<double>(active) / static_cast<double>(total) : 0.0;
  return rep;
}

std::vector<fs::path> dump_dataset(const SceneConfig& scene, Split split, std::span<const Index> samples,
                                   const fs::path& out_dir) {
  for (Index idx : samples) check_index(scene, split, idx);
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (Index idx : samples) {
    const SegSample s = generate(scene, split, idx);
    const std::string stem = fmt::format("{}_{}_", to_string(split), idx);
    files.push_back(out_dir / (stem + "input.png"));
    write_rgb_png(files.back(), s.image);
    files.push_back(out_dir / (stem + "label.pgm"));
    write_label_pgm(files.back(), s.labels, scene.num_classes);
    files.push_back(out_dir / (stem + "clean_label.pgm"));
    write_label_pgm(files.back(), s.clean_labels, scene.num_classes);
  }
  return files;
}

}  // namespace rdd
