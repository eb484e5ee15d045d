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

#include <cstdint>
#include <random>
#include <string_view>

namespace stickylab {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Position in the tree of random substreams hanging off one master seed.
///
/// Keys are derived, never drawn, so the stream a consumer receives depends
/// only on its path ("eval" / direction / n_pre / n_post / trial, say) and not
/// on how many other consumers ran before it.
class StreamKey {
 public:
  constexpr explicit StreamKey(std::uint64_t seed) : state_(detail::splitmix64(seed)) {}

  [[nodiscard]] constexpr StreamKey child(std::string_view tag) const {
    return StreamKey(state_, detail::fnv1a(tag));
  }
  [[nodiscard]] constexpr StreamKey child(std::uint64_t index) const {
    return StreamKey(state_, detail::splitmix64(index ^ 0x5851f42d4c957f2dULL));
  }
  [[nodiscard]] constexpr std::uint64_t value() const { return state_; }

 private:
  constexpr StreamKey(std::uint64_t parent, std::uint64_t salt)
      : state_(detail::splitmix64(parent ^ detail::splitmix64(salt))) {}

  std::uint64_t state_;
};

/// Seeded random source. Every sampling routine takes one by reference; two
/// Rngs built from the same key produce identical draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  explicit Rng(StreamKey key) : engine_(key.value()) {}

  double normal() { return normal_(engine_); }
  bool coin() { return coin_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::bernoulli_distribution coin_{0.5};
};

}  // namespace stickylab
