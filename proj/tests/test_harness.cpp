#include "rdd/harness.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rdd;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.scene.image_size = 16;
  c.scene.train_size = 8;
  c.scene.val_size = 4;
  c.scene.shapes_min = 1;
  c.scene.shapes_max = 2;
  c.teacher.stages = {{6, 1, 1}, {8, 1, 2}, {8, 1, 1}};
  c.student.stages = {{4, 1, 1}, {6, 1, 2}};
  c.total_iters = 6;
  c.teacher_iters = 6;
  c.batch_size = 4;
  c.eval_every = 3;
  c.seeds = {1, 2};
  c.validate();
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rdd_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Stage column of every training row in train_log.csv.
std::vector<std::string> logged_stages(const fs::path& dir) {
  std::istringstream in(slurp(dir / "train_log.csv"));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    out.push_back(line.substr(a + 1, b - a - 1));
  }
  return out;
}

class HarnessRuns : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new ExperimentConfig(tiny_config());
    config_->teacher_iters = 60;
    config_->eval_every = 20;
    const RunRecord rec = pretrain_teacher(*config_, scratch("teacher"));
    teacher_ = new Params(load_checkpoint(rec.checkpoint));
    teacher_record_ = new RunRecord(rec);
  }
  static void TearDownTestSuite() {
    delete teacher_record_;
    delete teacher_;
    delete config_;
  }
  static ExperimentConfig* config_;
  static Params* teacher_;
  static RunRecord* teacher_record_;
};

ExperimentConfig* HarnessRuns::config_ = nullptr;
Params* HarnessRuns::teacher_ = nullptr;
RunRecord* HarnessRuns::teacher_record_ = nullptr;

}  // namespace

TEST(Config, UnknownKeysNameTheirPath) {
  try {
    parse_config(nlohmann::json::parse(R"({"distill": {"q": 1}})"));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("distill.q"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config(nlohmann::json::parse(R"({"total_iters": "many"})")), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
  const ExperimentConfig c = tiny_config();
  const nlohmann::json j = to_json(c);
  EXPECT_EQ(to_json(parse_config(j)), j);
  const ExperimentConfig d = parse_config(nlohmann::json::parse(R"({"distill": {"p": 0.3, "mode": "AND"}})"));
  EXPECT_EQ(d.distill.p, 0.3);
  EXPECT_EQ(d.distill.mode, CombineMode::AND);
}

TEST(Config, ShippedDefaultsMatchBuiltIns) {
  ExperimentConfig built_in;
  built_in.validate();
  EXPECT_EQ(to_json(load_config(fs::path(RDD_SOURCE_DIR) / "configs" / "default.json")), to_json(built_in));
}

TEST(Config, ClassCountMustAgree) {
  ExperimentConfig c = tiny_config();
  c.student.num_classes = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Grid, ParsesAxesAndValues) {
  const GridSpec bare = parse_grid("p");
  EXPECT_EQ(bare.axis, GridAxis::P);
  EXPECT_EQ(bare.values, default_grid_values(GridAxis::P));
  const GridSpec explicit_t = parse_grid("t=0.5,0.7");
  EXPECT_EQ(explicit_t.axis, GridAxis::T);
  EXPECT_EQ(explicit_t.values, (std::vector<std::string>{"0.5", "0.7"}));
  EXPECT_EQ(parse_grid("mode").values.size(), 4u);
  EXPECT_THROW(parse_grid("p=0.1;t=0.6"), std::invalid_argument);
  EXPECT_THROW(parse_grid("lr=0.1"), std::invalid_argument);
  EXPECT_THROW(apply_grid_value(tiny_config(), GridAxis::Mode, "NAND"), std::invalid_argument);
  EXPECT_EQ(apply_grid_value(tiny_config(), GridAxis::T, "0.65").distill.t, 0.65);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), std::invalid_argument);
}

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::BaselineCE, Method::KdOnly, Method::Rdd, Method::RddPlusAt}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_method("rdd+"), std::invalid_argument);
}

TEST_F(HarnessRuns, ZeroIterationTeacherEqualsInitialisation) {
  ExperimentConfig c = *config_;
  c.teacher_iters = 0;
  const RunRecord rec = pretrain_teacher(c, scratch("teacher0"));
  EXPECT_EQ(load_checkpoint(rec.checkpoint), build(c.teacher, c.teacher_seed));
}

TEST_F(HarnessRuns, DistillationIsDeterministic) {
  const RunRecord a = distill(*config_, *teacher_, Method::Rdd, 1, scratch("det_a"));
  const RunRecord b = distill(*config_, *teacher_, Method::Rdd, 1, scratch("det_b"));
  EXPECT_EQ(slurp(a.dir / "metrics.csv"), slurp(b.dir / "metrics.csv"));
  EXPECT_EQ(slurp(a.checkpoint), slurp(b.checkpoint));
  const RunRecord c = distill(*config_, *teacher_, Method::Rdd, 2, scratch("det_c"));
  EXPECT_NE(slurp(a.checkpoint), slurp(c.checkpoint));
}

TEST_F(HarnessRuns, ScheduleEndpointsFillOneStage) {
  ExperimentConfig c = *config_;
  c.distill.p = 1.0;
  const RunRecord all_tfe = distill(c, *teacher_, Method::Rdd, 1, scratch("p1"));
  EXPECT_EQ(all_tfe.stage_transition_iter, c.total_iters);
  for (const auto& s : logged_stages(all_tfe.dir)) EXPECT_EQ(s, "TFE");
  c.distill.p = 0.0;
  const RunRecord all_tse = distill(c, *teacher_, Method::Rdd, 1, scratch("p0"));
  for (const auto& s : logged_stages(all_tse.dir)) EXPECT_EQ(s, "TSE");
  EXPECT_EQ(all_tse.stage_transition_iter, 0);
}

TEST_F(HarnessRuns, MethodsShareTheInitialEvaluation) {
  const RunRecord kd = distill(*config_, *teacher_, Method::KdOnly, 1, scratch("kd"));
  const RunRecord rd = distill(*config_, *teacher_, Method::Rdd, 1, scratch("rd"));
  const RunRecord ce = distill(*config_, *teacher_, Method::BaselineCE, 1, scratch("ce"));
  ASSERT_FALSE(kd.rows.empty());
  EXPECT_EQ(kd.rows.front().stage, "init");
  EXPECT_EQ(kd.initial_miou, rd.initial_miou);
  EXPECT_EQ(kd.initial_miou, ce.initial_miou);
  EXPECT_EQ(kd.rows.back().iter, config_->total_iters);
  EXPECT_NE(slurp(kd.checkpoint), slurp(rd.checkpoint));
}

TEST_F(HarnessRuns, AttentionTransferRuns) {
  const RunRecord at = distill(*config_, *teacher_, Method::RddPlusAt, 1, scratch("at"));
  EXPECT_TRUE(fs::exists(at.checkpoint));
  EXPECT_TRUE(std::isfinite(at.final_miou));
}

TEST_F(HarnessRuns, MissingAuxHeadRejectedOnlyWhenNeeded) {
  ExperimentConfig c = *config_;
  c.teacher.has_aux_head = false;
  const Params bare = build(c.teacher, 0);
  EXPECT_THROW(distill(c, bare, Method::Rdd, 1, scratch("noaux")), std::invalid_argument);
  c.distill.p = 0.0;
  EXPECT_NO_THROW(distill(c, bare, Method::Rdd, 1, scratch("noaux_p0")));
  EXPECT_THROW(distill(*config_, build(c.student, 0), Method::KdOnly, 1, scratch("wrong")), std::invalid_argument);
}

TEST_F(HarnessRuns, TeacherAgainstItselfHasEmptyTseMap) {
  const std::vector<Index> samples{0, 2};
  const ExportReport self = export_maps(*config_, *teacher_, *teacher_, samples, Split::Val, scratch("self"));
  EXPECT_EQ(self.tse_active_fraction, 0.0);
  EXPECT_GT(self.tfe_min, 0.0);
  EXPECT_LE(self.tfe_max, 1.0);
  EXPECT_TRUE(fs::exists(fs::temp_directory_path() / "rdd_harness_self" / "val_2_TSE.pgm"));
  const Params student = build(config_->student, 3);
  const ExportReport mixed = export_maps(*config_, *teacher_, student, samples, Split::Val, scratch("mixed"));
  EXPECT_GE(mixed.tfe_min, 0.0);
  EXPECT_LE(mixed.tfe_max, 1.0);
  EXPECT_THROW(export_maps(*config_, *teacher_, student, std::vector<Index>{99}, Split::Val, scratch("bad")),
               std::out_of_range);
}

TEST_F(HarnessRuns, SinglePointAblationMatchesDistill) {
  ExperimentConfig c = *config_;
  c.seeds = {1};
  const AblationResult r = ablate(c, *teacher_, parse_grid("p=0.1"), scratch("ablate"));
  ASSERT_EQ(r.points.size(), 1u);
  const RunRecord direct = distill(c, *teacher_, Method::Rdd, 1, scratch("ablate_direct"));
  EXPECT_EQ(r.points[0].final_miou, std::vector<double>{direct.final_miou});
  EXPECT_EQ(r.points[0].median, direct.final_miou);
  EXPECT_TRUE(fs::exists(r.comparison_csv));
  EXPECT_TRUE(fs::exists(r.orderings_csv));
}

TEST_F(HarnessRuns, EvaluateMatchesRecordedFinalScore) {
  const RunRecord rec = distill(*config_, *teacher_, Method::BaselineCE, 1, scratch("eval"));
  const EvalResult e = evaluate(load_checkpoint(rec.checkpoint), config_->scene, Split::Val);
  EXPECT_EQ(e.miou, rec.final_miou);
  EXPECT_EQ(e.confusion.total(), config_->scene.val_size * 16 * 16);
}

TEST_F(HarnessRuns, TeacherImprovesOnItsInitialEvaluation) {
  EXPECT_GT(teacher_record_->final_miou, teacher_record_->initial_miou);
  EXPECT_TRUE(fs::exists(teacher_record_->dir / "manifest.json"));
}

TEST_F(HarnessRuns, TrainingShrinksTseDisagreement) {
  ExperimentConfig c = *config_;
  c.total_iters = 60;
  c.validate();
  const RunRecord trained = distill(c, *teacher_, Method::BaselineCE, 1, scratch("tse_trained"));
  const std::vector<Index> samples{0, 1, 2, 3};
  const ExportReport before =
      export_maps(c, *teacher_, build(c.student, 1), samples, Split::Val, scratch("tse_before"));
  const ExportReport after =
      export_maps(c, *teacher_, load_checkpoint(trained.checkpoint), samples, Split::Val, scratch("tse_after"));
  EXPECT_GT(before.tse_active_fraction, after.tse_active_fraction);
}

TEST_F(HarnessRuns, ModeGridCoversEveryModeOncePerSeed) {
  ExperimentConfig c = *config_;
  c.seeds = {4};
  const AblationResult r = ablate(c, *teacher_, parse_grid("mode"), scratch("modes"));
  std::vector<std::string> values;
  for (const auto& pt : r.points) {
    values.push_back(pt.value);
    EXPECT_EQ(pt.final_miou.size(), 1u);
  }
  EXPECT_EQ(values, (std::vector<std::string>{"XOR", "AND", "OR", "STRICT"}));
}

TEST_F(HarnessRuns, LoggedLossesAreAdditive) {
  const RunRecord at = distill(*config_, *teacher_, Method::RddPlusAt, 2, scratch("additive"));
  std::istringstream in(slurp(at.dir / "train_log.csv"));
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    ASSERT_GE(f.size(), 7u);
    const double total = std::stod(f[3]), task = std::stod(f[4]), kd = std::stod(f[5]), extras = std::stod(f[6]);
    EXPECT_NEAR(total, task + kd + extras, 1e-12 * std::max(1.0, std::abs(total))) << line;
    ++rows;
  }
  EXPECT_EQ(rows, config_->total_iters);
}
