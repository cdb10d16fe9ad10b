// rddlab: command-line front end for the distillation experiments.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 training diverged.

#include "rdd/harness.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

// "a.b.c=value": value is parsed as JSON, falling back to a plain string.
void apply_override(json& j, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected key=value, got '" + item + "'");
  json value;
  try {
    value = json::parse(item.substr(eq + 1));
  } catch (const json::parse_error&) {
    value = item.substr(eq + 1);
  }
  json* node = &j;
  std::string path = item.substr(0, eq);
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

rdd::ExperimentConfig resolve(const Common& c) {
  json j = json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw std::runtime_error("cannot open config " + c.config);
    j = json::parse(in, nullptr, true, true);
  }
  for (const auto& o : c.overrides) apply_override(j, o);
  return rdd::parse_config(j);
}

std::vector<rdd::Index> parse_samples(const std::string& text) {
  std::vector<rdd::Index> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) throw CLI::ValidationError("--samples", "bad index '" + item + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON experiment config (defaults when omitted)")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Override a config key, e.g. --set distill.p=0.2");
}

void print_run(const rdd::RunRecord& r) {
  fmt::print("run {}: mIoU {:.4f} -> {:.4f}, {} empty-mask batches, {:.1f}s\n", r.dir.string(), r.initial_miou,
             r.final_miou, r.zero_mask_batches, r.wall_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relative-difficulty distillation experiments on synthetic segmentation scenes"};
  app.require_subcommand(1);

  Common pre_c;
  std::string pre_out = "runs/teacher";
  std::optional<std::uint64_t> pre_seed;
  auto* pre = app.add_subcommand("pretrain-teacher", "Train the teacher network");
  add_common(pre, pre_c);
  pre->add_option("--out", pre_out, "Output directory");
  pre->add_option("--seed", pre_seed, "Teacher seed (overrides teacher_seed)");

  Common dis_c;
  std::string dis_out = "runs/distill", dis_teacher, dis_method = "rdd";
  std::optional<std::uint64_t> dis_seed;
  auto* dis = app.add_subcommand("distill", "Train students against a frozen teacher");
  add_common(dis, dis_c);
  dis->add_option("--teacher", dis_teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  dis->add_option("--method", dis_method, "baseline_ce, kd_only, rdd or rdd_plus_at");
  dis->add_option("--seed", dis_seed, "Single student seed (default: every seed in the config)");
  dis->add_option("--out", dis_out, "Output directory");

  Common abl_c;
  std::string abl_out = "runs/ablate", abl_teacher, abl_grid;
  auto* abl = app.add_subcommand("ablate", "Sweep one RDD hyper-parameter over every seed");
  add_common(abl, abl_c);
  abl->add_option("--teacher", abl_teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  abl->add_option("--grid", abl_grid, "p, t or mode (default values), or axis=v1,v2,...")->required();
  abl->add_option("--out", abl_out, "Output directory");

  Common ev_c;
  std::string ev_ckpt, ev_split = "val";
  rdd::Index ev_count = -1;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint");
  add_common(ev, ev_c);
  ev->add_option("--checkpoint", ev_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split, "train or val");
  ev->add_option("--count", ev_count, "Number of samples (default: whole split)");

  Common ex_c;
  std::string ex_teacher, ex_student, ex_samples = "0,1,2,3", ex_split = "val", ex_out = "runs/maps";
  auto* ex = app.add_subcommand("export-maps", "Write difficulty and confidence maps for chosen samples");
  add_common(ex, ex_c);
  ex->add_option("--teacher", ex_teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--student", ex_student, "Student checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--samples", ex_samples, "Comma-separated sample indices");
  ex->add_option("--split", ex_split, "train or val");
  ex->add_option("--out", ex_out, "Output directory");

  Common dd_c;
  std::string dd_samples = "0,1,2,3", dd_split = "train", dd_out = "runs/data";
  auto* dd = app.add_subcommand("dump-data", "Write generated images and labels");
  add_common(dd, dd_c);
  dd->add_option("--samples", dd_samples, "Comma-separated sample indices");
  dd->add_option("--split", dd_split, "train or val");
  dd->add_option("--out", dd_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      rdd::ExperimentConfig cfg = resolve(pre_c);
      if (pre_seed) cfg.teacher_seed = *pre_seed;
      print_run(rdd::pretrain_teacher(cfg, pre_out));
    } else if (dis->parsed()) {
      const rdd::ExperimentConfig cfg = resolve(dis_c);
      const rdd::Method method = rdd::parse_method(dis_method);
      const rdd::Params teacher = rdd::load_checkpoint(dis_teacher);
      const std::vector<std::uint64_t> seeds = dis_seed ? std::vector<std::uint64_t>{*dis_seed} : cfg.seeds;
      for (std::uint64_t s : seeds) {
        const fs::path dir = seeds.size() == 1 && dis_seed ? fs::path(dis_out) : fs::path(dis_out) / fmt::format("seed_{}", s);
        print_run(rdd::distill(cfg, teacher, method, s, dir, dis_teacher));
      }
    } else if (abl->parsed()) {
      const rdd::ExperimentConfig cfg = resolve(abl_c);
      const rdd::GridSpec grid = rdd::parse_grid(abl_grid);
      const rdd::Params teacher = rdd::load_checkpoint(abl_teacher);
      const rdd::AblationResult res = rdd::ablate(cfg, teacher, grid, abl_out);
      for (const auto& p : res.points) {
        fmt::print("{}={}: median {:.4f} [{:.4f}, {:.4f}]\n", rdd::to_string(res.axis), p.value, p.median, p.min,
                   p.max);
      }
      fmt::print("wrote {}\n", res.comparison_csv.string());
    } else if (ev->parsed()) {
      const rdd::ExperimentConfig cfg = resolve(ev_c);
      const rdd::Params model = rdd::load_checkpoint(ev_ckpt);
      const rdd::EvalResult r = rdd::evaluate(model, cfg.scene, rdd::parse_split(ev_split), ev_count);
      fmt::print("mIoU {}\npixel_acc {}\n", rdd::format_number(r.miou), rdd::format_number(r.pixel_acc));
    } else if (ex->parsed()) {
      const rdd::ExperimentConfig cfg = resolve(ex_c);
      const auto samples = parse_samples(ex_samples);
      const rdd::ExportReport rep = rdd::export_maps(cfg, rdd::load_checkpoint(ex_teacher),
                                                     rdd::load_checkpoint(ex_student), samples,
                                                     rdd::parse_split(ex_split), ex_out);
      fmt::print("wrote {} files to {}; TSE active fraction {:.4f}, TFE range [{:.4f}, {:.4f}]\n", rep.files.size(),
                 ex_out, rep.tse_active_fraction, rep.tfe_min, rep.tfe_max);
    } else if (dd->parsed()) {
      const rdd::ExperimentConfig cfg = resolve(dd_c);
      const auto files = rdd::dump_dataset(cfg.scene, rdd::parse_split(dd_split), parse_samples(dd_samples), dd_out);
      fmt::print("wrote {} files to {}\n", files.size(), dd_out);
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const rdd::DivergenceError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
