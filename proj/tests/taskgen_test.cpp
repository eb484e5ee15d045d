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

#include "stickylab/taskgen.hpp"

#include <cmath>

#include "gtest/gtest.h"

namespace stickylab {
namespace {

TEST(SampleInputs, EmptyRequestReturnsEmpty) {
  Rng rng(1);
  EXPECT_TRUE(sample_inputs(0, rng).empty());
}

TEST(SampleInputs, StandardNormalMoments) {
  Rng rng(StreamKey(11).child("inputs"));
  const std::size_t n = 1000000;
  const auto pts = sample_inputs(n, rng);
  ASSERT_EQ(pts.size(), n);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (const auto& p : pts) mean += p[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& p : pts) var += (p[c] - mean) * (p[c] - mean);
    var /= static_cast<double>(n - 1);
    EXPECT_NEAR(mean, 0.0, 0.01) << "coordinate " << c;
    EXPECT_NEAR(var, 1.0, 0.01) << "coordinate " << c;
  }
}

TEST(SampleInputs, SameSeedSamePoints) {
  Rng a(StreamKey(3).child("inputs"));
  Rng b(StreamKey(3).child("inputs"));
  const auto pa = sample_inputs(257, a);
  const auto pb = sample_inputs(257, b);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i][0], pb[i][0]);
    EXPECT_EQ(pa[i][1], pb[i][1]);
  }
}

TEST(SampleTask, KeepsRequestedClass) {
  Rng rng(4);
  EXPECT_EQ(sample_task(FunctionClass::Linear, rng).function_class, FunctionClass::Linear);
  EXPECT_EQ(sample_task(FunctionClass::Quadratic, rng).function_class, FunctionClass::Quadratic);
}

TEST(SampleTask, WeightCovarianceIsIdentity) {
  Rng rng(StreamKey(5).child("weights"));
  const std::size_t n = 1000000;
  double m0 = 0, m1 = 0, s00 = 0, s11 = 0, s01 = 0;
  std::vector<Vec2> ws(n);
  for (auto& w : ws) {
    w = sample_task(FunctionClass::Quadratic, rng).w;
    m0 += w[0];
    m1 += w[1];
  }
  m0 /= n;
  m1 /= n;
  for (const auto& w : ws) {
    s00 += (w[0] - m0) * (w[0] - m0);
    s11 += (w[1] - m1) * (w[1] - m1);
    s01 += (w[0] - m0) * (w[1] - m1);
  }
  EXPECT_NEAR(s00 / (n - 1), 1.0, 0.01);
  EXPECT_NEAR(s11 / (n - 1), 1.0, 0.01);
  EXPECT_NEAR(s01 / (n - 1), 0.0, 0.01);
}

TEST(SampleTask, SameSeedSameWeights) {
  Rng a(99), b(99);
  const auto ta = sample_task(FunctionClass::Linear, a);
  const auto tb = sample_task(FunctionClass::Linear, b);
  EXPECT_EQ(ta.w, tb.w);
}

TEST(EvaluateTask, ClosedForms) {
  EXPECT_DOUBLE_EQ(evaluate_task({FunctionClass::Linear, {1.0, 0.0}}, {2.0, 3.0}), 2.0);
  EXPECT_NEAR(evaluate_task({FunctionClass::Quadratic, {1.0, 1.0}}, {1.0, 1.0}), 1.154700, 1e-6);
  EXPECT_DOUBLE_EQ(evaluate_task({FunctionClass::Quadratic, {1.0, 1.0}}, {1.0, 1.0}), 2.0 / std::sqrt(3.0));
  EXPECT_EQ(evaluate_task({FunctionClass::Quadratic, {0.0, 0.0}}, {-4.5, 7.25}), 0.0);
}

TEST(EvaluateTask, OutputVarianceIsTwoForBothClasses) {
  // Var(x.w) = 1 + 1; Var((x*x).w / sqrt 3) = (E[x^4] + E[x^4]) / 3 = (3 + 3) / 3.
  for (auto c : {FunctionClass::Linear, FunctionClass::Quadratic}) {
    Rng rng(StreamKey(21).child(to_string(c)));
    const std::size_t n = 1000000;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto task = sample_task(c, rng);
      const auto x = sample_inputs(1, rng).front();
      const double y = evaluate_task(task, x);
      const double d = y - mean;
      mean += d / static_cast<double>(i + 1);
      m2 += d * (y - mean);
    }
    EXPECT_NEAR(m2 / (n - 1), 2.0, 0.05) << to_string(c);
  }
}

TEST(EvaluateTask, LinearInWeights) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    for (auto cls : {FunctionClass::Linear, FunctionClass::Quadratic}) {
      auto task = sample_task(cls, rng);
      const auto x = sample_inputs(1, rng).front();
      const double c = 3.0 * rng.normal();
      auto scaled = task;
      scaled.w = {c * task.w[0], c * task.w[1]};
      EXPECT_NEAR(evaluate_task(scaled, x), c * evaluate_task(task, x),
                  1e-12 * (1.0 + std::abs(c * evaluate_task(task, x))));
    }
  }
}

TEST(BuildSwitchContext, EmptyWhenBothCountsZero) {
  Rng rng(1);
  const TaskFunction a{FunctionClass::Linear, {1, 2}};
  const TaskFunction b{FunctionClass::Quadratic, {3, 4}};
  EXPECT_TRUE(build_switch_context(a, b, 0, 0, rng).empty());
}

TEST(BuildSwitchContext, LabelsFollowTheSwitch) {
  Rng rng(2);
  const TaskFunction a = sample_task(FunctionClass::Linear, rng);
  const TaskFunction b = sample_task(FunctionClass::Quadratic, rng);
  const auto ctx = build_switch_context(a, b, 2, 3, rng);
  ASSERT_EQ(ctx.size(), 5u);
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    const auto& task = i < 2 ? a : b;
    EXPECT_EQ(ctx[i].y, evaluate_task(task, ctx[i].x)) << i;
  }
}

TEST(BuildSwitchContext, AcceptsGridMaximumRejectsOverflow) {
  Rng rng(3);
  const TaskFunction a = sample_task(FunctionClass::Quadratic, rng);
  const TaskFunction b = sample_task(FunctionClass::Linear, rng);
  EXPECT_EQ(build_switch_context(a, b, 20, 20, rng).size(), 40u);
  EXPECT_THROW(build_switch_context(a, b, 21, 20, rng), UsageError);
  EXPECT_THROW(build_switch_context(a, b, 0, 41, rng), UsageError);
}

TEST(BuildSwitchContext, EveryExampleReconstructsExactly) {
  Rng rng(StreamKey(4).child("ctx"));
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = sample_task(trial % 2 ? FunctionClass::Linear : FunctionClass::Quadratic, rng);
    const auto b = sample_task(trial % 2 ? FunctionClass::Quadratic : FunctionClass::Linear, rng);
    const std::size_t n_pre = trial % 21;
    const std::size_t n_post = (trial * 7) % (41 - n_pre);
    const auto ctx = build_switch_context(a, b, n_pre, n_post, rng);
    ASSERT_EQ(ctx.size(), n_pre + n_post);
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      EXPECT_EQ(ctx[i].y - evaluate_task(i < n_pre ? a : b, ctx[i].x), 0.0);
    }
  }
}

TEST(BuildPrompt, TokenLengths) {
  Rng rng(5);
  EXPECT_EQ(build_prompt({}, {0.5, -0.5}).token_count(), 1u);
  const auto task = sample_task(FunctionClass::Linear, rng);
  const auto ctx = label_inputs(task, sample_inputs(40, rng));
  EXPECT_EQ(build_prompt(ctx, {0, 0}).token_count(), 81u);
  auto too_long = ctx;
  too_long.push_back(ctx.front());
  EXPECT_THROW(build_prompt(too_long, {0, 0}), UsageError);
}

TEST(BuildPrompt, KeepsExamplesInOrder) {
  Rng rng(6);
  const auto task = sample_task(FunctionClass::Quadratic, rng);
  const auto ctx = label_inputs(task, sample_inputs(7, rng));
  const Vec2 q{0.25, -1.5};
  const auto prompt = build_prompt(ctx, q);
  ASSERT_EQ(prompt.context.size(), ctx.size());
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    EXPECT_EQ(prompt.context[i].x, ctx[i].x);
    EXPECT_EQ(prompt.context[i].y, ctx[i].y);
  }
  EXPECT_EQ(prompt.query_x, q);
}

TEST(StreamKey, ChildrenAreDistinctAndStable) {
  const StreamKey root(42);
  EXPECT_NE(root.child("inputs").value(), root.child("weights").value());
  EXPECT_NE(root.child(1).value(), root.child(2).value());
  EXPECT_EQ(root.child("eval").child(3).value(), StreamKey(42).child("eval").child(3).value());
  EXPECT_NE(StreamKey(42).child(0).value(), StreamKey(43).child(0).value());
}

}  // namespace
}  // namespace stickylab
