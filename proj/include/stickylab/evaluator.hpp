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

// Context-switch evaluation: for each direction and (n_pre, n_post) cell,
// R batch-level trials, each the mean squared error of B post-switch query
// predictions.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "stickylab/errors.hpp"
#include "stickylab/rng.hpp"
#include "stickylab/stats.hpp"
#include "stickylab/taskgen.hpp"
#include "stickylab/transformer.hpp"

namespace stickylab {

enum class SwitchDirection { LinearToQuadratic, QuadraticToLinear };

inline constexpr FunctionClass pre_class(SwitchDirection d) {
  return d == SwitchDirection::LinearToQuadratic ? FunctionClass::Linear : FunctionClass::Quadratic;
}
inline constexpr FunctionClass post_class(SwitchDirection d) {
  return d == SwitchDirection::LinearToQuadratic ? FunctionClass::Quadratic : FunctionClass::Linear;
}
/// The direction whose queries come from `query_class`.
inline constexpr SwitchDirection direction_into(FunctionClass query_class) {
  return query_class == FunctionClass::Quadratic ? SwitchDirection::LinearToQuadratic
                                                 : SwitchDirection::QuadraticToLinear;
}

inline std::string_view to_string(SwitchDirection d) {
  return d == SwitchDirection::LinearToQuadratic ? "l2q" : "q2l";
}

inline SwitchDirection parse_direction(std::string_view s) {
  if (s == "l2q") return SwitchDirection::LinearToQuadratic;
  if (s == "q2l") return SwitchDirection::QuadraticToLinear;
  throw UsageError("unknown direction '" + std::string(s) + "' (expected l2q or q2l)");
}

struct Cell {
  std::size_t n_pre = 0;
  std::size_t n_post = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct EvalGrid {
  std::vector<std::size_t> counts;
  std::size_t max_total = kMaxContext;

  static EvalGrid reference() { return {{0, 1, 2, 3, 4, 6, 8, 10, 12, 14, 16, 18, 20}, kMaxContext}; }

  void validate() const {
    if (counts.empty()) throw UsageError("evaluation grid is empty");
    if (max_total > kMaxContext) throw UsageError("grid max_total exceeds the 40-example cap");
    for (std::size_t i = 1; i < counts.size(); ++i) {
      if (counts[i] <= counts[i - 1]) throw UsageError("grid counts must be strictly increasing");
    }
  }

  /// Row-major (n_pre outer) cells admitted by the cap.
  [[nodiscard]] std::vector<Cell> cells() const {
    validate();
    std::vector<Cell> out;
    for (auto a : counts) {
      for (auto b : counts) {
        if (a + b <= max_total) out.push_back({a, b});
      }
    }
    return out;
  }
};

struct ConfigResult {
  SwitchDirection direction = SwitchDirection::LinearToQuadratic;
  std::size_t n_pre = 0;
  std::size_t n_post = 0;
  std::size_t trials = 0;
  std::size_t batch = 0;
  double mean_mse = 0.0;
  double sd = 0.0;
  double sem = 0.0;
  bool insufficient_trials = false;
  std::vector<double> trial_mse;  // filled only when retention is requested

  [[nodiscard]] Cell cell() const { return {n_pre, n_post}; }
};

struct EvalOptions {
  std::size_t batch = 64;
  /// Use one (pre, post) task pair for the whole batch of a trial instead of
  /// a fresh pair per batch element.
  bool share_tasks_across_batch = false;
  bool keep_trials = false;
};

inline StreamKey cell_key(std::uint64_t seed, SwitchDirection d, Cell c) {
  return StreamKey(seed).child("eval").child(to_string(d)).child(c.n_pre).child(c.n_post);
}

/// One batch-level trial. Task weights and inputs come from separate
/// substreams of `trial_key`, so n_pre = 0 consumes exactly the same input
/// draws as a plain single-task prompt of n_post examples.
inline double run_trial(const ParameterSet<float>& params, SwitchDirection direction,
                        std::size_t n_pre, std::size_t n_post, std::size_t batch,
                        StreamKey trial_key, Workspace<float>& ws,
                        bool share_tasks_across_batch = false) {
  if (n_pre + n_post > kMaxContext) {
    throw UsageError("cell (" + std::to_string(n_pre) + ", " + std::to_string(n_post) +
                     ") exceeds the 40-example cap");
  }
  if (batch == 0) throw UsageError("evaluation batch must be positive");
  Rng weights(trial_key.child("weights"));
  Rng inputs(trial_key.child("inputs"));
  TaskFunction pre = sample_task(pre_class(direction), weights);
  TaskFunction post = sample_task(post_class(direction), weights);
  double sum = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (b > 0 && !share_tasks_across_batch) {
      pre = sample_task(pre_class(direction), weights);
      post = sample_task(post_class(direction), weights);
    }
    auto context = build_switch_context(pre, post, n_pre, n_post, inputs);
    const Vec2 query = sample_inputs(1, inputs).front();
    const double target = evaluate_task(post, query);
    const double pred = predict_query(params, build_prompt(std::move(context), query), ws);
    if (!std::isfinite(pred)) {
      throw NumericalError("non-finite prediction in trial for " + std::string(to_string(direction)) +
                           " cell (" + std::to_string(n_pre) + ", " + std::to_string(n_post) +
                           "), batch element " + std::to_string(b));
    }
    sum += (pred - target) * (pred - target);
  }
  return sum / static_cast<double>(batch);
}

/// R trials of one cell; trial r draws from key.child(r).
inline ConfigResult run_config(const ParameterSet<float>& params, SwitchDirection direction,
                               std::size_t n_pre, std::size_t n_post, std::size_t trials,
                               StreamKey key, const EvalOptions& options, Workspace<float>& ws) {
  if (trials == 0) throw UsageError("run_config needs at least one trial");
  std::vector<double> mse(trials);
  for (std::size_t r = 0; r < trials; ++r) {
    mse[r] = run_trial(params, direction, n_pre, n_post, options.batch, key.child(r), ws,
                       options.share_tasks_across_batch);
  }
  const Summary s = summarize(mse);
  ConfigResult out;
  out.direction = direction;
  out.n_pre = n_pre;
  out.n_post = n_post;
  out.trials = trials;
  out.batch = options.batch;
  out.mean_mse = s.mean;
  out.sd = s.sd;
  out.sem = s.sem;
  out.insufficient_trials = s.insufficient;
  if (options.keep_trials) out.trial_mse = std::move(mse);
  return out;
}

inline ConfigResult run_config(const ParameterSet<float>& params, SwitchDirection direction,
                               std::size_t n_pre, std::size_t n_post, std::size_t trials,
                               std::uint64_t seed, const EvalOptions& options = {}) {
  Workspace<float> ws;
  return run_config(params, direction, n_pre, n_post, trials,
                    cell_key(seed, direction, {n_pre, n_post}), options, ws);
}

/// Plain in-context regression on `n_examples` examples of one class: the
/// n_pre = 0 cell of the direction that ends in `query_class`.
inline ConfigResult single_task_eval(const ParameterSet<float>& params, FunctionClass query_class,
                                     std::size_t n_examples, std::size_t trials,
                                     std::uint64_t seed, const EvalOptions& options = {}) {
  return run_config(params, direction_into(query_class), 0, n_examples, trials, seed, options);
}

struct CellFailure {
  SwitchDirection direction;
  Cell cell;
  std::string message;
};

struct SweepOutcome {
  std::vector<ConfigResult> results;  // (direction, cell) order of the request
  std::vector<CellFailure> failures;
};

/// Evaluates every (direction, cell) pair. Cells run on up to `jobs` threads;
/// each cell's randomness is keyed by (seed, direction, n_pre, n_post), so the
/// outcome does not depend on scheduling. A failing cell is reported and the
/// rest still run.
inline SweepOutcome sweep_cells(const ParameterSet<float>& params,
                                const std::vector<SwitchDirection>& directions,
                                const std::vector<Cell>& cells, std::size_t trials,
                                std::uint64_t seed, const EvalOptions& options = {},
                                std::size_t jobs = 1) {
  if (trials == 0) throw UsageError("sweep needs at least one trial");
  std::vector<std::pair<SwitchDirection, Cell>> work;
  for (auto d : directions) {
    for (const auto& c : cells) {
      if (c.n_pre + c.n_post > kMaxContext) {
        throw UsageError("cell (" + std::to_string(c.n_pre) + ", " + std::to_string(c.n_post) +
                         ") exceeds the 40-example cap");
      }
      work.emplace_back(d, c);
    }
  }
  std::vector<std::optional<ConfigResult>> slots(work.size());
  std::vector<std::optional<std::string>> errors(work.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    Workspace<float> ws;
    for (std::size_t i = next++; i < work.size(); i = next++) {
      const auto& [d, c] = work[i];
      try {
        slots[i] = run_config(params, d, c.n_pre, c.n_post, trials, cell_key(seed, d, c), options, ws);
      } catch (const NumericalError& e) {
        errors[i] = e.what();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, work.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  SweepOutcome out;
  for (std::size_t i = 0; i < work.size(); ++i) {
    if (slots[i]) {
      out.results.push_back(std::move(*slots[i]));
    } else {
      out.failures.push_back({work[i].first, work[i].second, errors[i].value_or("unknown failure")});
    }
  }
  return out;
}

inline SweepOutcome sweep(const ParameterSet<float>& params,
                          const std::vector<SwitchDirection>& directions, const EvalGrid& grid,
                          std::size_t trials, std::uint64_t seed, const EvalOptions& options = {},
                          std::size_t jobs = 1) {
  return sweep_cells(params, directions, grid.cells(), trials, seed, options, jobs);
}

}  // namespace stickylab
