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

// Synthetic regression tasks over R^2 and the prompts built from them.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "stickylab/errors.hpp"
#include "stickylab/rng.hpp"

namespace stickylab {

using Vec2 = std::array<double, 2>;

/// Most in-context examples a prompt may carry; with the query this makes
/// 41 points, the longest sequence seen in training.
inline constexpr std::size_t kMaxContext = 40;
inline constexpr std::size_t kMaxPoints = kMaxContext + 1;

enum class FunctionClass { Linear, Quadratic };

inline std::string_view to_string(FunctionClass c) {
  return c == FunctionClass::Linear ? "linear" : "quadratic";
}

struct TaskFunction {
  FunctionClass function_class = FunctionClass::Linear;
  Vec2 w{0.0, 0.0};
};

struct Example {
  Vec2 x{};
  double y = 0.0;
};

struct PromptSequence {
  std::vector<Example> context;
  Vec2 query_x{};

  /// x and y alternate, query x last.
  [[nodiscard]] std::size_t token_count() const { return 2 * context.size() + 1; }
};

inline std::vector<Vec2> sample_inputs(std::size_t n, Rng& rng) {
  std::vector<Vec2> points(n);
  for (auto& p : points) {
    p[0] = rng.normal();
    p[1] = rng.normal();
  }
  return points;
}

inline TaskFunction sample_task(FunctionClass function_class, Rng& rng) {
  TaskFunction task{function_class, {}};
  task.w[0] = rng.normal();
  task.w[1] = rng.normal();
  return task;
}

/// Linear: x.w. Quadratic: (x*x).w / sqrt(3), which gives y the same
/// variance (2) as the linear class under standard-normal x and w.
inline double evaluate_task(const TaskFunction& task, const Vec2& x) {
  if (task.function_class == FunctionClass::Linear) {
    return x[0] * task.w[0] + x[1] * task.w[1];
  }
  static const double inv_sqrt3 = 1.0 / std::sqrt(3.0);
  return (x[0] * x[0] * task.w[0] + x[1] * x[1] * task.w[1]) * inv_sqrt3;
}

inline std::vector<Example> label_inputs(const TaskFunction& task, const std::vector<Vec2>& xs) {
  std::vector<Example> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back({x, evaluate_task(task, x)});
  return out;
}

/// n_pre examples labelled by pre_task followed by n_post labelled by
/// post_task, all on fresh Gaussian inputs drawn in order from `rng`.
inline std::vector<Example> build_switch_context(const TaskFunction& pre_task,
                                                 const TaskFunction& post_task, std::size_t n_pre,
                                                 std::size_t n_post, Rng& rng) {
  if (n_pre + n_post > kMaxContext) {
    throw UsageError("switch context of " + std::to_string(n_pre) + "+" + std::to_string(n_post) +
                     " examples exceeds the " + std::to_string(kMaxContext) + "-example cap");
  }
  const auto xs = sample_inputs(n_pre + n_post, rng);
  std::vector<Example> context;
  context.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& task = i < n_pre ? pre_task : post_task;
    context.push_back({xs[i], evaluate_task(task, xs[i])});
  }
  return context;
}

inline PromptSequence build_prompt(std::vector<Example> context, const Vec2& query_x) {
  if (context.size() > kMaxContext) {
    throw UsageError("prompt context of " + std::to_string(context.size()) +
                     " examples exceeds the " + std::to_string(kMaxContext) + "-example cap");
  }
  return PromptSequence{std::move(context), query_x};
}

}  // namespace stickylab
