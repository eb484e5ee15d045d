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

#pragma once

// train / eval / report / selftest workflows behind the command-line tool.
// Each command takes a plain options struct so tests can drive it directly.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stickylab/errors.hpp"
#include "stickylab/evaluator.hpp"
#include "stickylab/gradcheck.hpp"
#include "stickylab/oracle.hpp"
#include "stickylab/report.hpp"
#include "stickylab/stats.hpp"
#include "stickylab/store.hpp"
#include "stickylab/trainer.hpp"

namespace stickylab::commands {

namespace fs = std::filesystem;

inline constexpr const char* kSeedEnv = "STICKYLAB_SEED";

/// Explicit flag, else $STICKYLAB_SEED, else 0.
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kSeedEnv); env != nullptr && *env != '\0') {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || errno == ERANGE || env[0] == '-') {
      throw UsageError(std::string(kSeedEnv) + " is not an unsigned integer: '" + env + "'");
    }
    return v;
  }
  return 0;
}

inline std::vector<std::size_t> parse_grid(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError("bad grid entry '" + item + "' in --grid " + text);
    }
    out.push_back(std::stoul(item));
  }
  if (out.empty()) throw UsageError("--grid is empty");
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string curriculum = "random";
  std::string scale = "desk";
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> batch;
  std::optional<double> learning_rate;
  std::size_t checkpoint_every = 10000;
  fs::path out;
  std::size_t log_every = 1000;  // 0 silences progress lines
};

struct TrainPlan {
  ModelConfig model;
  TrainConfig train;
};

inline TrainPlan plan_training(const TrainOptions& o) {
  const auto kind = parse_curriculum(o.curriculum);
  const std::uint64_t seed = resolve_seed(o.seed);
  if (o.steps && *o.steps == 0) throw UsageError("--steps must be positive");
  TrainPlan p;
  if (o.scale == "desk") {
    p.model = desk_model_config();
    p.train = desk_train_config(kind, seed, o.steps.value_or(20000));
  } else if (o.scale == "paper") {
    p.model = paper_model_config();
    p.train = paper_train_config(kind, seed);
    if (o.steps) p.train.total_steps = *o.steps;
  } else {
    throw UsageError("unknown scale '" + o.scale + "' (expected desk or paper)");
  }
  if (o.batch) p.train.batch_size = *o.batch;
  if (o.learning_rate) p.train.learning_rate = *o.learning_rate;
  p.train.checkpoint_every = o.checkpoint_every;
  p.model.validate();
  p.train.validate();
  return p;
}

struct TrainSummary {
  fs::path checkpoint;
  double final_window_loss = 0.0;
};

inline TrainSummary cmd_train(const TrainOptions& o, std::ostream& log) {
  if (o.out.empty()) throw UsageError("--out is required");
  const TrainPlan plan = plan_training(o);
  log << "training " << to_string(plan.train.curriculum) << " e" << plan.model.embed_dim << " l"
      << plan.model.n_layers << " h" << plan.model.n_heads << " for " << plan.train.total_steps
      << " steps (seed " << plan.train.seed << ", " << parameter_count(plan.model) << " parameters)\n";

  TrainHooks hooks;
  hooks.on_snapshot = [&](std::size_t step, const ParameterSet<float>& params) {
    std::ostringstream name;
    name << "step_" << std::setw(6) << std::setfill('0') << step;
    store::save_checkpoint({{plan.model, plan.train, step}, params}, o.out / name.str());
  };
  double window = 0.0;
  std::size_t in_window = 0;
  if (o.log_every > 0) {
    hooks.on_step = [&](const StepRecord& r) {
      window += r.loss;
      ++in_window;
      if (r.step % o.log_every == 0 || r.step == plan.train.total_steps) {
        log << "step " << r.step << " points " << r.points << " mean loss " << window / static_cast<double>(in_window)
            << "\n";
        log.flush();
        window = 0.0;
        in_window = 0;
      }
    };
  }

  const TrainResult result = train(plan.model, plan.train, hooks);
  store::save_checkpoint({{plan.model, plan.train, plan.train.total_steps}, result.params}, o.out);
  store::write_text(o.out / "loss.csv", store::loss_trace_to_csv(result.trace));
  TrainSummary s{o.out, tail_mean_loss(result.trace, 0.1)};
  log << "final-window mean loss (last 10% of steps): " << s.final_window_loss << "\n";
  log << "checkpoint written to " << o.out.string() << "\n";
  return s;
}

// ---------------------------------------------------------------------------
// eval

struct EvalCommandOptions {
  fs::path ckpt;
  std::string direction = "both";
  std::optional<std::string> grid;
  std::size_t trials = 1000;
  std::size_t batch = 64;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool share_tasks = false;
  fs::path out;  // defaults to the checkpoint directory
};

struct EvalSummary {
  fs::path combined;
  std::vector<fs::path> per_direction;
  std::size_t rows = 0;
  std::size_t failures = 0;
  bool insufficient_trials = false;
};

inline std::vector<SwitchDirection> parse_directions(const std::string& s) {
  if (s == "both") return {SwitchDirection::LinearToQuadratic, SwitchDirection::QuadraticToLinear};
  return {parse_direction(s)};
}

inline EvalSummary cmd_eval(const EvalCommandOptions& o, std::ostream& log) {
  if (o.ckpt.empty()) throw UsageError("--ckpt is required");
  if (o.trials == 0) throw UsageError("--trials must be positive");
  if (o.batch == 0) throw UsageError("--batch must be positive");
  const auto directions = parse_directions(o.direction);
  EvalGrid grid = EvalGrid::reference();
  if (o.grid) grid.counts = parse_grid(*o.grid);
  grid.validate();
  const std::size_t largest = grid.counts.back();
  if (2 * largest > kMaxContext) {
    throw UsageError("grid value " + std::to_string(largest) + " would allow " + std::to_string(2 * largest) +
                     " context examples; the cap is 40");
  }
  const std::uint64_t seed = resolve_seed(o.seed);
  const auto ckpt = store::load_checkpoint(o.ckpt);
  const std::string id = store::model_id(ckpt.manifest);
  const std::string curriculum(to_string(ckpt.manifest.train.curriculum));

  EvalOptions eo;
  eo.batch = o.batch;
  eo.share_tasks_across_batch = o.share_tasks;
  log << "evaluating " << id << ": " << grid.cells().size() << " cells x " << directions.size()
      << " direction(s), R=" << o.trials << ", B=" << o.batch << ", seed " << seed << "\n";
  const auto outcome = sweep(ckpt.params, directions, grid, o.trials, seed, eo, o.jobs);

  const fs::path out = o.out.empty() ? o.ckpt : o.out;
  EvalSummary s;
  store::ResultsTable combined;
  for (auto d : directions) {
    store::ResultsTable t;
    for (const auto& r : outcome.results) {
      if (r.direction == d) t.rows.push_back({id, curriculum, r, seed});
    }
    const fs::path p = out / (std::string(to_string(d)) + ".csv");
    store::write_results(t, p);
    s.per_direction.push_back(p);
    combined.rows.insert(combined.rows.end(), t.rows.begin(), t.rows.end());
  }
  s.combined = out / "results.csv";
  store::write_results(combined, s.combined);
  s.rows = combined.rows.size();
  s.failures = outcome.failures.size();
  s.insufficient_trials = o.trials < 2;

  nlohmann::ordered_json m;
  m["command"] = "eval";
  m["checkpoint"] = o.ckpt.string();
  m["model_id"] = id;
  m["curriculum"] = curriculum;
  m["directions"] = o.direction;
  m["grid"] = grid.counts;
  m["max_total"] = grid.max_total;
  m["trials"] = o.trials;
  m["batch"] = o.batch;
  m["seed"] = seed;
  m["jobs"] = o.jobs;
  m["share_tasks_across_batch"] = o.share_tasks;
  m["insufficient_trials"] = s.insufficient_trials;
  auto failures = nlohmann::ordered_json::array();
  for (const auto& f : outcome.failures) {
    failures.push_back({{"direction", std::string(to_string(f.direction))},
                        {"n_pre", f.cell.n_pre},
                        {"n_post", f.cell.n_post},
                        {"error", f.message}});
    log << "cell " << to_string(f.direction) << " (" << f.cell.n_pre << ", " << f.cell.n_post
        << ") failed: " << f.message << "\n";
  }
  m["failed_cells"] = std::move(failures);
  store::write_text(out / "eval.manifest.json", m.dump(2) + "\n");

  if (s.insufficient_trials) {
    log << "warning: insufficient trials (R=" << o.trials << "): sd and sem reported as 0\n";
  }
  log << "wrote " << s.rows << " rows to " << s.combined.string() << "\n";
  if (s.failures > 0) {
    throw NumericalError(std::to_string(s.failures) + " cell(s) failed; see eval.manifest.json");
  }
  return s;
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
  std::vector<fs::path> results;
  std::optional<fs::path> results_a;
  std::optional<fs::path> results_b;
  std::optional<std::string> figure;  // all applicable figures when unset
  std::optional<std::size_t> fix_pre;
  std::optional<std::size_t> fix_post;
  fs::path out;  // defaults to the directory of the first input
};

inline std::vector<fs::path> cmd_report(const ReportOptions& o, std::ostream& log) {
  const auto kind = o.figure ? std::optional(store::parse_figure(*o.figure)) : std::nullopt;
  if (o.results_a.has_value() != o.results_b.has_value()) {
    throw UsageError("--results-a and --results-b must be given together");
  }
  if (kind == store::FigureKind::Direction && !o.results_a) {
    throw UsageError("--figure direction needs --results-a and --results-b");
  }
  if (o.results.empty() && !o.results_a) throw UsageError("no results files given");
  const fs::path first = o.results.empty() ? *o.results_a : o.results.front();
  const fs::path out = o.out.empty() ? (first.has_parent_path() ? first.parent_path() : fs::path(".")) : o.out;

  std::vector<fs::path> written;
  auto stem_for = [](const fs::path& p) { return p.stem().string(); };
  auto write = [&](const store::FigureData& fd, const std::string& stem) {
    const std::string s = fd.name.rfind(stem + "_", 0) == 0 ? std::string() : stem;
    const fs::path path = s.empty() ? out / (fd.name + ".csv") : out / (s + "_" + fd.name + ".csv");
    fs::create_directories(out);
    store::write_text(path, fd.to_csv());
    written.push_back(path);
  };

  std::map<std::string, store::ResultsTable> by_curriculum;
  for (const auto& path : o.results) {
    const auto table = store::read_results(path);
    if (!kind || *kind != store::FigureKind::Direction) {
      std::vector<store::FigureKind> kinds;
      if (kind) {
        kinds = {*kind};
      } else {
        kinds = {store::FigureKind::Surface, store::FigureKind::Recovery, store::FigureKind::Stickiness};
      }
      for (auto k : kinds) {
        for (const auto& fd : store::emit_figure_data(table, {k, o.fix_pre, o.fix_post})) {
          write(fd, stem_for(path));
        }
      }
    }
    log << path.string() << ":\n";
    report::print_trends(table, log);
    if (!table.rows.empty()) {
      auto& merged = by_curriculum[table.rows.front().curriculum];
      for (const auto& r : table.rows) {
        if (!merged.find(r.result.direction, r.result.cell())) merged.rows.push_back(r);
      }
    }
  }

  if (o.results_a && (!kind || *kind == store::FigureKind::Direction)) {
    const auto a = store::read_results(*o.results_a);
    const auto b = store::read_results(*o.results_b);
    const auto fd = store::emit_direction_data(a, b, {store::FigureKind::Direction, o.fix_pre, o.fix_post});
    write(fd, a.rows.empty() ? std::string("direction") : a.rows.front().curriculum);
  }

  report::print_curriculum_observations(by_curriculum, log);

  nlohmann::ordered_json m;
  m["command"] = "report";
  auto inputs = nlohmann::ordered_json::array();
  for (const auto& p : o.results) inputs.push_back(p.string());
  m["results"] = std::move(inputs);
  m["results_a"] = o.results_a ? o.results_a->string() : "";
  m["results_b"] = o.results_b ? o.results_b->string() : "";
  m["figure"] = o.figure.value_or("all");
  m["fix_pre"] = o.fix_pre ? nlohmann::ordered_json(*o.fix_pre) : nlohmann::ordered_json();
  m["fix_post"] = o.fix_post ? nlohmann::ordered_json(*o.fix_post) : nlohmann::ordered_json();
  auto files = nlohmann::ordered_json::array();
  for (const auto& p : written) files.push_back(p.filename().string());
  m["figure_files"] = std::move(files);
  fs::create_directories(out);
  store::write_text(out / "report.manifest.json", m.dump(2) + "\n");
  for (const auto& p : written) log << "wrote " << p.string() << "\n";
  return written;
}

// ---------------------------------------------------------------------------
// selftest

inline bool cmd_selftest(std::ostream& log, std::uint64_t seed = 0) {
  bool ok = true;
  auto line = [&](const std::string& name, bool pass, const std::string& detail) {
    log << (pass ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
    ok = ok && pass;
  };

  {
    const StreamKey root = StreamKey(seed).child("selftest").child("gradcheck");
    double worst = 0.0;
    std::string where;
    for (std::uint64_t draw = 0; draw < 3; ++draw) {
      Rng rng(root.child(draw));
      const auto problem = make_gradcheck_problem({8, 1, 1, 8, 4}, 8, 3, rng);
      const auto r = gradient_check(problem.params, problem.batch, 1e-5);
      if (r.max_relative_error >= worst) {
        worst = r.max_relative_error;
        where = r.worst_tensor;
      }
    }
    std::ostringstream d;
    d << "max relative error " << worst << " (" << where << "), limit 1e-6";
    line("gradient check", worst < 1e-6, d.str());
  }

  for (auto c : {FunctionClass::Linear, FunctionClass::Quadratic}) {
    Rng rng(StreamKey(seed).child("selftest").child(to_string(c)));
    const double var = oracle::monte_carlo_output_variance(c, 1000000, rng);
    std::ostringstream d;
    d << "Var(y) = " << var << " over 1e6 draws, expected 2.0 +/- 0.05";
    line(std::string("output variance ") + std::string(to_string(c)), std::abs(var - 2.0) <= 0.05, d.str());
  }

  {
    std::vector<double> v(1000);
    Rng rng(StreamKey(seed).child("selftest").child("sem"));
    for (auto& x : v) x = rng.normal();
    const auto s = summarize(v);
    const bool arith = std::abs(s.sem * std::sqrt(1000.0) - s.sd) <= 1e-12 * s.sd;
    std::vector<double> unit(1000);
    for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = i % 2 == 0 ? 1.0 : -1.0;
    const auto u = summarize(unit);
    // SD of +/-1 alternating with R-1 denominator is sqrt(R/(R-1)); rescale to SD=1
    const double sem_for_unit_sd = u.sem / u.sd;
    const bool pinned = std::abs(sem_for_unit_sd - 0.0316228) < 5e-7;
    std::ostringstream d;
    d << "sem*sqrt(R) vs sd residual " << std::abs(s.sem * std::sqrt(1000.0) - s.sd) << ", SEM(SD=1,R=1000) = "
      << sem_for_unit_sd;
    line("SEM arithmetic", arith && pinned, d.str());
  }
  return ok;
}

}  // namespace stickylab::commands
