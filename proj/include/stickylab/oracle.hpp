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

// Closed-form and Monte-Carlo references. Test support only; always 64-bit.

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

#include "stickylab/errors.hpp"
#include "stickylab/rng.hpp"
#include "stickylab/taskgen.hpp"

namespace stickylab::oracle {

enum class FeatureMap { Linear, Quadratic };

inline FeatureMap features_for(FunctionClass c) {
  return c == FunctionClass::Linear ? FeatureMap::Linear : FeatureMap::Quadratic;
}

/// x for Linear, x*x/sqrt(3) for Quadratic, so fitted weights are on the
/// same footing as the task's w.
inline Eigen::Vector2d featurize(const Vec2& x, FeatureMap map) {
  if (map == FeatureMap::Linear) return {x[0], x[1]};
  const double s = 1.0 / std::sqrt(3.0);
  return {x[0] * x[0] * s, x[1] * x[1] * s};
}

/// Minimum-norm least-squares weights on the chosen features.
inline Vec2 least_squares_fit(std::span<const Example> examples, FeatureMap map) {
  if (examples.empty()) throw UsageError("least_squares_fit needs at least one example");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(examples.size()), 2);
  Eigen::VectorXd y(static_cast<Eigen::Index>(examples.size()));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) = featurize(examples[i].x, map).transpose();
    y(static_cast<Eigen::Index>(i)) = examples[i].y;
  }
  const Eigen::Vector2d w = a.completeOrthogonalDecomposition().solve(y);
  return {w(0), w(1)};
}

inline double predict(const Vec2& w, const Vec2& x, FeatureMap map) {
  const auto f = featurize(x, map);
  return f(0) * w[0] + f(1) * w[1];
}

/// Sample variance (denominator N-1) of y over N independent (x, w) draws;
/// 0 when N == 1.
inline double monte_carlo_output_variance(FunctionClass c, std::size_t n, Rng& rng) {
  if (n == 0) throw UsageError("monte_carlo_output_variance needs N >= 1");
  if (n == 1) return 0.0;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const TaskFunction task = sample_task(c, rng);
    const Vec2 x{rng.normal(), rng.normal()};
    const double y = evaluate_task(task, x);
    const double delta = y - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (y - mean);
  }
  return m2 / static_cast<double>(n - 1);
}

/// Mean held-out squared error of least squares fitted to n_examples noiseless
/// examples of a fresh task, over `trials` tasks.
inline double least_squares_heldout_mse(FunctionClass c, std::size_t n_examples,
                                        std::size_t trials, Rng& rng) {
  if (trials == 0) throw UsageError("least_squares_heldout_mse needs trials >= 1");
  const FeatureMap map = features_for(c);
  double sum = 0.0;
  for (std::size_t r = 0; r < trials; ++r) {
    const TaskFunction task = sample_task(c, rng);
    const auto examples = label_inputs(task, sample_inputs(n_examples, rng));
    const Vec2 query = sample_inputs(1, rng).front();
    const double pred = examples.empty() ? 0.0 : predict(least_squares_fit(examples, map), query, map);
    const double err = pred - evaluate_task(task, query);
    sum += err * err;
  }
  return sum / static_cast<double>(trials);
}

}  // namespace stickylab::oracle
