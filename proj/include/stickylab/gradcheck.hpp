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

// Central finite-difference check of loss_and_gradients, 64-bit.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stickylab/rng.hpp"
#include "stickylab/taskgen.hpp"
#include "stickylab/trainer.hpp"
#include "stickylab/transformer.hpp"

namespace stickylab {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps exactly-zero gradients
/// (e.g. attention key biases, which the softmax cancels) from turning
/// finite-difference rounding noise into huge relative errors.
inline constexpr double kGradCheckFloor = 1e-3;

inline GradCheckReport gradient_check(const ParameterSet<double>& params,
                                      std::span<const LabeledSequence<double>> batch,
                                      double step = 1e-5) {
  const auto analytic = loss_and_gradients<double>(params, batch);
  Workspace<double> ws;
  ParameterSet<double> probe = params;
  GradCheckReport report;
  for (const auto& t : params.layout.tensors()) {
    for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
      const double saved = probe.values[i];
      probe.values[i] = saved + step;
      const double up = batch_loss(probe, batch, ws);
      probe.values[i] = saved - step;
      const double down = batch_loss(probe, batch, ws);
      probe.values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.gradients.values[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = t.name;
      }
      ++report.checked;
    }
  }
  return report;
}

/// Random tiny problem for gradient checks: parameters perturbed well away
/// from initialization so every tensor carries signal, and a mixed-class
/// batch of sequences with `tokens` tokens each.
struct GradCheckProblem {
  ParameterSet<double> params;
  std::vector<LabeledSequence<double>> batch;
};

inline GradCheckProblem make_gradcheck_problem(const ModelConfig& config, std::size_t tokens,
                                               std::size_t batch_size, Rng& rng) {
  GradCheckProblem p{init_params<double>(config, rng), {}};
  for (auto& v : p.params.values) v += 0.3 * rng.normal();
  for (std::size_t b = 0; b < batch_size; ++b) {
    const auto cls = b % 2 == 0 ? FunctionClass::Linear : FunctionClass::Quadratic;
    auto tb = make_training_batch(cls, tokens / 2, 1, rng).labeled<double>();
    p.batch.push_back(std::move(tb.front()));
  }
  return p;
}

}  // namespace stickylab
