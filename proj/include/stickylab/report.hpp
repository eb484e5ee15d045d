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

// Trend statistics and cross-curriculum observations over results tables.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stickylab/stats.hpp"
#include "stickylab/store.hpp"

namespace stickylab::report {

struct Trend {
  double spearman = 0.0;
  std::size_t points = 0;
};

/// Spearman of mean MSE against n_pre with n_post fixed. Empty when fewer than
/// two cells of the slice are present.
inline std::optional<Trend> stickiness_trend(const store::ResultsTable& table, SwitchDirection d,
                                             std::size_t fix_post) {
  std::vector<double> x, y;
  for (auto n_pre : store::grid_counts(table, d)) {
    if (const auto* r = table.find(d, {n_pre, fix_post})) {
      x.push_back(static_cast<double>(n_pre));
      y.push_back(r->result.mean_mse);
    }
  }
  if (x.size() < 2) return std::nullopt;
  return Trend{spearman(x, y), x.size()};
}

/// Spearman of mean MSE against n_post with n_pre fixed.
inline std::optional<Trend> recovery_trend(const store::ResultsTable& table, SwitchDirection d,
                                           std::size_t fix_pre) {
  std::vector<double> x, y;
  for (auto n_post : store::grid_counts(table, d)) {
    if (const auto* r = table.find(d, {fix_pre, n_post})) {
      x.push_back(static_cast<double>(n_post));
      y.push_back(r->result.mean_mse);
    }
  }
  if (x.size() < 2) return std::nullopt;
  return Trend{spearman(x, y), x.size()};
}

inline std::size_t largest_count(const store::ResultsTable& table, SwitchDirection d) {
  const auto c = store::grid_counts(table, d);
  return c.empty() ? 0 : c.back();
}

inline void print_trends(const store::ResultsTable& table, std::ostream& os) {
  for (auto d : store::directions_in(table)) {
    const std::string dn(to_string(d));
    if (auto t = stickiness_trend(table, d, 0)) {
      os << "  " << dn << " stickiness: spearman(mean_mse, n_pre | n_post=0) = " << t->spearman << " over "
         << t->points << " cells\n";
    }
    const auto top = largest_count(table, d);
    if (auto t = recovery_trend(table, d, top)) {
      os << "  " << dn << " recovery:   spearman(mean_mse, n_post | n_pre=" << top << ") = " << t->spearman
         << " over " << t->points << " cells\n";
    }
  }
}

/// Mean MSE along the recovery curve at the largest n_pre; lower means the
/// model shakes off misleading context faster.
inline std::optional<double> recovery_area(const store::ResultsTable& table, SwitchDirection d) {
  const auto top = largest_count(table, d);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : table.rows) {
    if (r.result.direction == d && r.result.n_pre == top) {
      sum += r.result.mean_mse;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::optional<double> mean_over_cells(const store::ResultsTable& table, SwitchDirection d) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : table.rows) {
    if (r.result.direction == d) {
      sum += r.result.mean_mse;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Prints how the curricula compare on the orderings reported for full-scale
/// models. These are observations only: desk-scale models are not expected to
/// reproduce them.
inline void print_curriculum_observations(const std::map<std::string, store::ResultsTable>& by_curriculum,
                                          std::ostream& os) {
  if (by_curriculum.size() < 2) return;
  const auto l2q = SwitchDirection::LinearToQuadratic;
  const auto q2l = SwitchDirection::QuadraticToLinear;
  os << "cross-curriculum observations (logged, not asserted):\n";

  std::vector<std::pair<double, std::string>> areas;
  for (const auto& [name, table] : by_curriculum) {
    if (auto a = recovery_area(table, l2q)) areas.emplace_back(*a, name);
  }
  if (areas.size() >= 2) {
    std::sort(areas.begin(), areas.end());
    os << "  l2q recovery-curve mean MSE at largest n_pre (best first):";
    for (const auto& [a, n] : areas) os << " " << n << "=" << a;
    os << "\n";
    const bool matches = areas.size() == 3 && areas[0].second == "sequential" && areas[1].second == "mixed" &&
                         areas[2].second == "random";
    os << "  full-scale ordering sequential < mixed < random: " << (matches ? "reproduced" : "not reproduced")
       << "\n";
  }

  if (auto it = by_curriculum.find("sequential"); it != by_curriculum.end()) {
    const auto& t = it->second;
    for (std::size_t n_post : {1, 2}) {
      const auto* base = t.find(l2q, {0, n_post});
      const auto* few = t.find(l2q, {2, n_post});
      if (base && few) {
        os << "  sequential l2q low-evidence crossover at n_post=" << n_post << ": mse(n_pre=2)="
           << few->result.mean_mse << " vs mse(n_pre=0)=" << base->result.mean_mse << " -> "
           << (few->result.mean_mse < base->result.mean_mse ? "present" : "absent") << "\n";
      }
    }
    const auto a = mean_over_cells(t, l2q);
    const auto b = mean_over_cells(t, q2l);
    if (a && b) {
      os << "  sequential forgetting: mean MSE l2q=" << *a << " q2l=" << *b << " -> "
         << (*b > *a ? "q2l worse (forgetting visible)" : "q2l not worse") << "\n";
    }
  }
}

}  // namespace stickylab::report
