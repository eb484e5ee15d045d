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

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "stickylab/commands.hpp"

namespace {

namespace cmd = stickylab::commands;

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumerical = 4 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stickylab: train small transformers on linear/quadratic regression and measure "
               "how misleading in-context examples degrade post-switch predictions"};
  app.require_subcommand(1);

  cmd::TrainOptions train;
  std::optional<std::size_t> train_steps, train_batch;
  std::optional<std::uint64_t> train_seed;
  std::optional<double> train_lr;
  std::string train_out;
  auto* t = app.add_subcommand("train", "train one model under a curriculum");
  t->add_option("--curriculum", train.curriculum, "sequential | mixed | random")
      ->check(CLI::IsMember({"sequential", "mixed", "random"}));
  t->add_option("--steps", train_steps, "training steps (default: 20000 desk, 100000 paper)");
  t->add_option("--seed", train_seed, "master seed (fallback: $STICKYLAB_SEED, then 0)");
  t->add_option("--scale", train.scale, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  t->add_option("--batch", train_batch, "training batch size (default 64)");
  t->add_option("--lr", train_lr, "learning rate (default 1e-4)");
  t->add_option("--checkpoint-every", train.checkpoint_every, "intermediate checkpoint cadence, 0 disables");
  t->add_option("--log-every", train.log_every, "progress line cadence, 0 disables");
  t->add_option("--out", train_out, "checkpoint directory")->required();

  cmd::EvalCommandOptions eval;
  std::optional<std::string> eval_grid;
  std::optional<std::uint64_t> eval_seed;
  std::string eval_ckpt, eval_out;
  auto* e = app.add_subcommand("eval", "context-switch sweep over an (n_pre, n_post) grid");
  e->add_option("--ckpt", eval_ckpt, "checkpoint directory")->required();
  e->add_option("--direction", eval.direction, "l2q | q2l | both")->check(CLI::IsMember({"l2q", "q2l", "both"}));
  e->add_option("--grid", eval_grid, "comma-separated counts (default 0,1,2,3,4,6,8,10,12,14,16,18,20)");
  e->add_option("--trials", eval.trials, "batch-level trials per cell");
  e->add_option("--batch", eval.batch, "prompts per trial");
  e->add_option("--seed", eval_seed, "evaluation seed (fallback: $STICKYLAB_SEED, then 0)");
  e->add_option("--jobs", eval.jobs, "concurrent cells")->check(CLI::PositiveNumber);
  e->add_flag("--share-tasks", eval.share_tasks, "one task pair per trial instead of one per prompt");
  e->add_option("--out", eval_out, "output directory (default: checkpoint directory)");

  cmd::ReportOptions report;
  std::vector<std::string> report_results;
  std::optional<std::string> results_a, results_b;
  std::string report_out;
  auto* r = app.add_subcommand("report", "emit figure data and trend statistics");
  r->add_option("--results", report_results, "results CSV (repeatable)");
  r->add_option("--results-a", results_a, "first table for --figure direction");
  r->add_option("--results-b", results_b, "second table for --figure direction");
  r->add_option("--figure", report.figure, "surface | recovery | stickiness | direction")
      ->check(CLI::IsMember({"surface", "recovery", "stickiness", "direction"}));
  r->add_option("--fix-pre", report.fix_pre, "n_pre for recovery series");
  r->add_option("--fix-post", report.fix_post, "n_post for stickiness series");
  r->add_option("--out", report_out, "output directory (default: directory of the first input)");

  std::optional<std::uint64_t> selftest_seed;
  auto* s = app.add_subcommand("selftest", "gradient check, variance oracles and SEM arithmetic");
  s->add_option("--seed", selftest_seed, "seed for the random checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    if (t->parsed()) {
      train.steps = train_steps;
      train.seed = train_seed;
      train.batch = train_batch;
      train.learning_rate = train_lr;
      train.out = train_out;
      cmd::cmd_train(train, std::cout);
    } else if (e->parsed()) {
      eval.ckpt = eval_ckpt;
      eval.grid = eval_grid;
      eval.seed = eval_seed;
      eval.out = eval_out;
      cmd::cmd_eval(eval, std::cout);
    } else if (r->parsed()) {
      for (const auto& p : report_results) report.results.emplace_back(p);
      if (results_a) report.results_a = *results_a;
      if (results_b) report.results_b = *results_b;
      report.out = report_out;
      cmd::cmd_report(report, std::cout);
    } else if (s->parsed()) {
      return cmd::cmd_selftest(std::cout, cmd::resolve_seed(selftest_seed)) ? kOk : kNumerical;
    }
  } catch (const stickylab::UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << "\n";
    return kUsage;
  } catch (const stickylab::DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& ex) {
    std::cerr << "io error: " << ex.what() << "\n";
    return kData;
  } catch (const stickylab::NumericalError& ex) {
    std::cerr << "numerical failure: " << ex.what() << "\n";
    return kNumerical;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kFailure;
  }
  return kOk;
}
