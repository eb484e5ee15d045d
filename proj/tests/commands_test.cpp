// Copyright 2026 The StickyLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stickylab/commands.hpp"

#include <cstdlib>
#include <sstream>

#include <unistd.h>

#include "gtest/gtest.h"

namespace stickylab::commands {
namespace {

namespace fs = std::filesystem;

class CommandsTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("stickylab_cmd_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  TrainOptions tiny_train(const std::string& sub, std::string curriculum = "mixed") const {
    TrainOptions o;
    o.curriculum = std::move(curriculum);
    o.steps = 4;
    o.batch = 3;
    o.seed = 11;
    o.checkpoint_every = 2;
    o.log_every = 0;
    o.out = dir_ / sub;
    return o;
  }

  fs::path dir_;
  std::ostringstream log_;
};

TEST_F(CommandsTest, UnknownCurriculumIsUsageError) {
  auto o = tiny_train("bad", "shuffled");
  EXPECT_THROW(cmd_train(o, log_), UsageError);
  EXPECT_FALSE(fs::exists(o.out / store::kManifestFile));
}

TEST_F(CommandsTest, UnknownScaleIsUsageError) {
  auto o = tiny_train("bad");
  o.scale = "huge";
  EXPECT_THROW(cmd_train(o, log_), UsageError);
}

TEST_F(CommandsTest, TrainIsReproducible) {
  cmd_train(tiny_train("a"), log_);
  cmd_train(tiny_train("b"), log_);
  for (const char* f : {store::kManifestFile, store::kPayloadFile, "loss.csv"}) {
    EXPECT_EQ(store::read_text(dir_ / "a" / f), store::read_text(dir_ / "b" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(dir_ / "a" / "step_000002" / store::kPayloadFile));
  const auto ck = store::load_checkpoint(dir_ / "a");
  EXPECT_EQ(ck.manifest.step, 4u);
  EXPECT_EQ(ck.manifest.train.curriculum, CurriculumKind::Mixed);
  EXPECT_EQ(ck.manifest.model, desk_model_config());
}

TEST_F(CommandsTest, PlanScalesSchedule) {
  TrainOptions o;
  o.seed = 1;
  const auto desk = plan_training(o);
  EXPECT_EQ(desk.train.total_steps, 20000u);
  EXPECT_EQ(desk.train.points_interval, 400u);
  o.scale = "paper";
  const auto paper = plan_training(o);
  EXPECT_EQ(paper.train.total_steps, 100000u);
  EXPECT_EQ(paper.train.points_interval, 2000u);
  EXPECT_EQ(paper.model.embed_dim, 256u);
}

TEST_F(CommandsTest, SeedFallsBackToEnvironment) {
  ::setenv(kSeedEnv, "123", 1);
  EXPECT_EQ(resolve_seed(std::nullopt), 123u);
  EXPECT_EQ(resolve_seed(7), 7u);
  ::setenv(kSeedEnv, "abc", 1);
  EXPECT_THROW(resolve_seed(std::nullopt), UsageError);
  ::unsetenv(kSeedEnv);
  EXPECT_EQ(resolve_seed(std::nullopt), 0u);
}

TEST_F(CommandsTest, GridParsing) {
  EXPECT_EQ(parse_grid("0,1,2,20"), (std::vector<std::size_t>{0, 1, 2, 20}));
  EXPECT_THROW(parse_grid("0,x"), UsageError);
  EXPECT_THROW(parse_grid(""), UsageError);
}

TEST_F(CommandsTest, EvalBothDirectionsCoversReferenceGrid) {
  cmd_train(tiny_train("m"), log_);
  EvalCommandOptions e;
  e.ckpt = dir_ / "m";
  e.trials = 2;
  e.batch = 2;
  e.seed = 5;
  e.out = dir_ / "eval";
  const auto s = cmd_eval(e, log_);
  EXPECT_EQ(s.rows, 338u);
  EXPECT_EQ(s.failures, 0u);
  ASSERT_EQ(s.per_direction.size(), 2u);
  EXPECT_EQ(store::read_results(s.per_direction[0]).rows.size(), 169u);
  EXPECT_EQ(store::read_results(s.per_direction[1]).rows.size(), 169u);
  const auto table = store::read_results(s.combined);
  for (const auto& r : table.rows) {
    EXPECT_EQ(r.curriculum, "mixed");
    EXPECT_EQ(r.seed, 5u);
    EXPECT_EQ(r.result.trials, 2u);
    EXPECT_TRUE(std::isfinite(r.result.mean_mse));
  }
  const auto m = nlohmann::json::parse(store::read_text(dir_ / "eval" / "eval.manifest.json"));
  EXPECT_FALSE(m["insufficient_trials"].get<bool>());
  EXPECT_TRUE(m["failed_cells"].empty());
}

TEST_F(CommandsTest, SingleTrialFlagsManifest) {
  cmd_train(tiny_train("m"), log_);
  EvalCommandOptions e;
  e.ckpt = dir_ / "m";
  e.direction = "q2l";
  e.grid = "0,5";
  e.trials = 1;
  e.batch = 2;
  e.seed = 5;
  const auto s = cmd_eval(e, log_);
  EXPECT_TRUE(s.insufficient_trials);
  EXPECT_EQ(s.rows, 4u);
  const auto m = nlohmann::json::parse(store::read_text(dir_ / "m" / "eval.manifest.json"));
  EXPECT_TRUE(m["insufficient_trials"].get<bool>());
  for (const auto& r : store::read_results(dir_ / "m" / "q2l.csv").rows) {
    EXPECT_EQ(r.result.sem, 0.0);
    EXPECT_TRUE(r.result.insufficient_trials);
  }
  EXPECT_NE(log_.str().find("insufficient trials"), std::string::npos);
}

TEST_F(CommandsTest, EvalArgumentErrors) {
  cmd_train(tiny_train("m"), log_);
  EvalCommandOptions e;
  e.ckpt = dir_ / "m";
  e.grid = "0,10,21";
  EXPECT_THROW(cmd_eval(e, log_), UsageError);
  e.grid = "0,10,5";
  EXPECT_THROW(cmd_eval(e, log_), UsageError);
  e.grid.reset();
  e.direction = "sideways";
  EXPECT_THROW(cmd_eval(e, log_), UsageError);
  e.direction = "both";
  e.trials = 0;
  EXPECT_THROW(cmd_eval(e, log_), UsageError);
  e.trials = 2;
  e.ckpt = dir_ / "missing";
  EXPECT_THROW(cmd_eval(e, log_), DataError);
}

TEST_F(CommandsTest, ReportRecoverySlice) {
  cmd_train(tiny_train("m"), log_);
  EvalCommandOptions e;
  e.ckpt = dir_ / "m";
  e.direction = "l2q";
  e.trials = 2;
  e.batch = 2;
  e.seed = 1;
  const auto s = cmd_eval(e, log_);

  ReportOptions r;
  r.results = {s.per_direction[0]};
  r.figure = "recovery";
  r.fix_pre = 20;
  r.out = dir_ / "fig";
  const auto files = cmd_report(r, log_);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].filename(), "l2q_recovery_pre20.csv");
  const auto text = store::read_text(files[0]);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 14);  // header plus 13 points
  EXPECT_TRUE(fs::exists(dir_ / "fig" / "report.manifest.json"));

  r.figure.reset();
  r.fix_pre.reset();
  const auto all = cmd_report(r, log_);
  EXPECT_EQ(all.size(), 1u + 13u + 13u);
}

TEST_F(CommandsTest, ReportDirectionComparison) {
  cmd_train(tiny_train("m"), log_);
  EvalCommandOptions e;
  e.ckpt = dir_ / "m";
  e.grid = "0,1,2";
  e.trials = 2;
  e.batch = 2;
  e.seed = 1;
  const auto s = cmd_eval(e, log_);
  ReportOptions r;
  r.results_a = s.per_direction[0];
  r.results_b = s.per_direction[1];
  r.figure = "direction";
  r.out = dir_ / "fig";
  const auto files = cmd_report(r, log_);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].filename(), "mixed_direction_l2q_vs_q2l.csv");

  ReportOptions bad;
  bad.results = {s.per_direction[0]};
  bad.figure = "direction";
  EXPECT_THROW(cmd_report(bad, log_), UsageError);
  bad.figure = "histogram";
  EXPECT_THROW(cmd_report(bad, log_), UsageError);
}

TEST_F(CommandsTest, ReportGapIsDataError) {
  cmd_train(tiny_train("m"), log_);
  EvalCommandOptions e;
  e.ckpt = dir_ / "m";
  e.direction = "l2q";
  e.grid = "0,1,2";
  e.trials = 2;
  e.batch = 2;
  const auto s = cmd_eval(e, log_);
  ReportOptions r;
  r.results = {s.per_direction[0]};
  r.figure = "recovery";
  r.fix_pre = 20;
  r.out = dir_ / "fig";
  EXPECT_THROW(cmd_report(r, log_), store::GapError);
}

TEST_F(CommandsTest, SelftestPasses) {
  EXPECT_TRUE(cmd_selftest(log_, 0)) << log_.str();
  EXPECT_EQ(log_.str().find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace stickylab::commands
