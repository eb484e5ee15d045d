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

#include "stickylab/stats.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "stickylab/rng.hpp"

namespace stickylab {
namespace {

TEST(Summarize, SemFromUnitSd) {
  // SEM = SD / sqrt(R); for SD = 1 and R = 1000 that is 0.0316228.
  EXPECT_NEAR(1.0 / std::sqrt(1000.0), 0.031623, 5e-7);
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i % 2 ? 1.0 : -1.0;
  const auto s = summarize(v);
  EXPECT_NEAR(s.sem / s.sd, 0.0316228, 5e-8);
  EXPECT_NEAR(std::abs(s.sem * std::sqrt(1000.0) - s.sd) / s.sd, 0.0, 1e-12);
}

TEST(Summarize, SingleTrialIsFlagged) {
  const std::vector<double> v{0.7};
  const auto s = summarize(v);
  EXPECT_TRUE(s.insufficient);
  EXPECT_EQ(s.mean, 0.7);
  EXPECT_EQ(s.sd, 0.0);
  EXPECT_EQ(s.sem, 0.0);
}

TEST(Summarize, IdenticalValues) {
  const std::vector<double> v(50, 1.25);
  const auto s = summarize(v);
  EXPECT_EQ(s.mean, 1.25);
  EXPECT_EQ(s.sd, 0.0);
  EXPECT_EQ(s.sem, 0.0);
  EXPECT_FALSE(s.insufficient);
}

TEST(Summarize, RejectsEmpty) { EXPECT_THROW(summarize(std::vector<double>{}), UsageError); }

TEST(Spearman, MonotoneAndTies) {
  const std::vector<double> x{0, 1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{1, 4, 9, 16, 25}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{5, 3, 2, 1, -8}), -1.0);
  const auto r = average_ranks(std::vector<double>{3, 1, 3, 2});
  EXPECT_EQ(r, (std::vector<double>{3.5, 1, 3.5, 2}));
  // Hand-computed: ranks (1,2,3,4) vs (1,2.5,2.5,4) -> 0.9486832980505138.
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 2, 3}),
              0.9486832980505138, 1e-15);
}

}  // namespace
}  // namespace stickylab
