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

// Curricula, the points schedule, Adam and the training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "stickylab/errors.hpp"
#include "stickylab/rng.hpp"
#include "stickylab/taskgen.hpp"
#include "stickylab/transformer.hpp"

namespace stickylab {

enum class CurriculumKind { Sequential, Mixed, Random };

inline std::string_view to_string(CurriculumKind k) {
  switch (k) {
    case CurriculumKind::Sequential: return "sequential";
    case CurriculumKind::Mixed: return "mixed";
    case CurriculumKind::Random: return "random";
  }
  return "?";
}

inline CurriculumKind parse_curriculum(std::string_view name) {
  if (name == "sequential") return CurriculumKind::Sequential;
  if (name == "mixed") return CurriculumKind::Mixed;
  if (name == "random") return CurriculumKind::Random;
  throw UsageError("unknown curriculum '" + std::string(name) +
                   "' (expected sequential, mixed or random)");
}

struct TrainConfig {
  std::size_t total_steps = 20000;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  CurriculumKind curriculum = CurriculumKind::Random;
  std::size_t points_start = 11;
  std::size_t points_max = kMaxPoints;
  std::size_t points_increment = 2;
  std::size_t points_interval = 400;
  std::uint64_t seed = 0;
  /// Intermediate snapshot cadence in steps; 0 disables.
  std::size_t checkpoint_every = 10000;

  void validate() const {
    if (total_steps == 0) throw UsageError("total_steps must be positive");
    if (batch_size == 0) throw UsageError("batch_size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw UsageError("learning_rate must be positive and finite");
    }
    if (points_start == 0 || points_start > points_max || points_max > kMaxPoints) {
      throw UsageError("points schedule must satisfy 1 <= start <= max <= 41");
    }
    if (points_interval == 0) throw UsageError("points_interval must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// 100k steps, 11 -> 41 points adding 2 every 2000 steps.
inline TrainConfig paper_train_config(CurriculumKind kind, std::uint64_t seed) {
  TrainConfig c;
  c.total_steps = 100000;
  c.points_interval = 2000;
  c.curriculum = kind;
  c.seed = seed;
  return c;
}

/// Desk scale keeps the reference schedule's shape: the 41-point cap is
/// reached after 30% of training, so the interval is total_steps / 50.
inline TrainConfig desk_train_config(CurriculumKind kind, std::uint64_t seed,
                                     std::size_t total_steps = 20000) {
  TrainConfig c;
  c.total_steps = total_steps;
  c.points_interval = std::max<std::size_t>(1, total_steps / 50);
  c.curriculum = kind;
  c.seed = seed;
  return c;
}

/// Function class for 1-based step t of T. Sequential never touches `rng`;
/// Mixed draws only in the second half; Random draws every step.
inline FunctionClass curriculum_class(CurriculumKind kind, std::size_t t, std::size_t total,
                                      Rng& rng) {
  if (t < 1 || t > total) {
    throw UsageError("curriculum step " + std::to_string(t) + " outside [1, " +
                     std::to_string(total) + "]");
  }
  // t < T/2 without rounding T/2 for odd T
  const bool first_half = 2 * t < total;
  switch (kind) {
    case CurriculumKind::Sequential:
      return first_half ? FunctionClass::Linear : FunctionClass::Quadratic;
    case CurriculumKind::Mixed:
      if (first_half) return FunctionClass::Linear;
      return rng.coin() ? FunctionClass::Quadratic : FunctionClass::Linear;
    case CurriculumKind::Random:
      return rng.coin() ? FunctionClass::Quadratic : FunctionClass::Linear;
  }
  return FunctionClass::Linear;
}

inline std::size_t points_at_step(std::size_t t, const TrainConfig& config) {
  const std::size_t grown = config.points_start + config.points_increment * (t / config.points_interval);
  return std::min(grown, config.points_max);
}

struct TrainingBatch {
  FunctionClass function_class = FunctionClass::Linear;
  std::vector<TaskFunction> tasks;
  std::vector<std::vector<Example>> sequences;

  template <typename Scalar>
  [[nodiscard]] std::vector<LabeledSequence<Scalar>> labeled() const {
    std::vector<LabeledSequence<Scalar>> out;
    out.reserve(sequences.size());
    for (const auto& seq : sequences) {
      LabeledSequence<Scalar> s{encode_examples<Scalar>(seq), {}};
      s.targets.reserve(seq.size());
      for (const auto& ex : seq) s.targets.push_back(static_cast<Scalar>(ex.y));
      out.push_back(std::move(s));
    }
    return out;
  }
};

/// batch_size sequences of k_points pairs; one fresh task per sequence, all
/// from `function_class`.
inline TrainingBatch make_training_batch(FunctionClass function_class, std::size_t k_points,
                                         std::size_t batch_size, Rng& rng) {
  if (k_points < 1 || k_points > kMaxPoints) {
    throw UsageError("k_points " + std::to_string(k_points) + " outside [1, 41]");
  }
  TrainingBatch batch;
  batch.function_class = function_class;
  batch.tasks.reserve(batch_size);
  batch.sequences.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    batch.tasks.push_back(sample_task(function_class, rng));
    batch.sequences.push_back(label_inputs(batch.tasks.back(), sample_inputs(k_points, rng)));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct OptimizerState {
  Buffer<Scalar> first_moment;
  Buffer<Scalar> second_moment;
  std::size_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n) : first_moment(n, Scalar(0)), second_moment(n, Scalar(0)) {}
};

/// One bias-corrected Adam update. Throws NumericalError, leaving params and
/// state untouched, when any gradient is non-finite.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads,
               OptimizerState<Scalar>& state, double learning_rate,
               const AdamOptions& opt = {}) {
  const std::size_t n = params.values.size();
  if (grads.values.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw UsageError("adam_step: parameter, gradient and moment shapes differ");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(grads.values[i]))) {
      throw NumericalError("adam_step: non-finite gradient at parameter index " + std::to_string(i));
    }
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  const auto b1 = static_cast<Scalar>(opt.beta1);
  const auto b2 = static_cast<Scalar>(opt.beta2);
  const auto one_m_b1 = static_cast<Scalar>(1.0 - opt.beta1);
  const auto one_m_b2 = static_cast<Scalar>(1.0 - opt.beta2);
  const auto inv_c1 = static_cast<Scalar>(1.0 / c1);
  const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
  const auto lr = static_cast<Scalar>(learning_rate);
  const auto eps = static_cast<Scalar>(opt.epsilon);
  Scalar* p = params.values.data();
  Scalar* m = state.first_moment.data();
  Scalar* v = state.second_moment.data();
  const Scalar* g = grads.values.data();
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + one_m_b1 * g[i];
    v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
    const Scalar m_hat = m[i] * inv_c1;
    const Scalar v_hat = v[i] * inv_c2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct StepRecord {
  std::size_t step = 0;  // 1-based
  FunctionClass function_class = FunctionClass::Linear;
  std::size_t points = 0;
  double loss = 0.0;
};

struct TrainHooks {
  /// Called with (step, params) every checkpoint_every steps before the end.
  std::function<void(std::size_t, const ParameterSet<float>&)> on_snapshot;
  /// Called after every step.
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  ParameterSet<float> params;
  std::vector<StepRecord> trace;
};

inline StreamKey training_key(std::uint64_t seed) { return StreamKey(seed).child("train"); }

/// Runs total_steps Adam steps. Step t (1-based) trains on the class chosen by
/// the curriculum with points_at_step(t - 1) pairs per sequence. A nonzero
/// `stop_after` runs only that prefix of the schedule.
inline TrainResult train(const ModelConfig& model_config, const TrainConfig& config,
                         const TrainHooks& hooks = {}, std::size_t stop_after = 0) {
  model_config.validate();
  config.validate();
  if (2 * config.points_max > model_config.max_tokens) {
    throw UsageError("max_tokens " + std::to_string(model_config.max_tokens) +
                     " cannot hold " + std::to_string(config.points_max) + " training pairs");
  }
  const StreamKey root = training_key(config.seed);
  Rng init_rng(root.child("init"));
  Rng curriculum_rng(root.child("curriculum"));
  const StreamKey batch_root = root.child("batch");

  TrainResult result{init_params<float>(model_config, init_rng), {}};
  result.trace.reserve(config.total_steps);
  ParameterSet<float> grads(model_config);
  OptimizerState<float> state(result.params.size());
  Workspace<float> ws;

  const std::size_t last = stop_after == 0 ? config.total_steps : std::min(stop_after, config.total_steps);
  for (std::size_t t = 1; t <= last; ++t) {
    const FunctionClass cls = curriculum_class(config.curriculum, t, config.total_steps, curriculum_rng);
    const std::size_t k = points_at_step(t - 1, config);
    Rng batch_rng(batch_root.child(t));
    const auto batch = make_training_batch(cls, k, config.batch_size, batch_rng).labeled<float>();
    const double loss = loss_and_gradients<float>(result.params, batch, grads, ws);
    if (!std::isfinite(loss)) {
      throw NumericalError("training diverged: non-finite loss at step " + std::to_string(t));
    }
    try {
      adam_step(result.params, grads, state, config.learning_rate);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at step " + std::to_string(t) + ": " + e.what());
    }
    result.trace.push_back({t, cls, k, loss});
    if (hooks.on_step) hooks.on_step(result.trace.back());
    if (hooks.on_snapshot && config.checkpoint_every > 0 && t % config.checkpoint_every == 0 &&
        t < config.total_steps) {
      hooks.on_snapshot(t, result.params);
    }
  }
  return result;
}

/// Mean training loss over the last `fraction` of the trace.
inline double tail_mean_loss(const std::vector<StepRecord>& trace, double fraction = 0.1) {
  if (trace.empty()) return 0.0;
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(trace.size())));
  double s = 0.0;
  for (std::size_t i = trace.size() - n; i < trace.size(); ++i) s += trace[i].loss;
  return s / static_cast<double>(n);
}

}  // namespace stickylab
