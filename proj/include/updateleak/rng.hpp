// Copyright 2026 The updateleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "updateleak/error.hpp"

namespace updateleak {

// Every randomized operation in the library draws from an mt19937_64 through
// the helpers below. The helpers replace std::uniform_int_distribution /
// std::shuffle, whose output is implementation-defined; with these, the same
// seed yields the same bytes on every platform.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// SplitMix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives the seed for a tagged sub-purpose (update sampling, candidate
/// sampling, ...) of an operation seeded with `seed`. Distinct tags give
/// decorrelated streams while staying auditable from the recorded seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

/// Uniform draw from {0, 1, ..., bound-1} by rejection sampling.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  if (bound == 0) throw Error("uniform_below: bound must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return draw % bound;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_real01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Draws `k` elements from `pool` uniformly without replacement.
/// Returned in selection order; `pool` is taken by value and left untouched
/// at the call site.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k, Rng& rng) {
  if (k > pool.size()) throw Error("sample_without_replacement: k exceeds pool size");
  std::vector<T> picked;
  picked.reserve(k);
  std::size_t remaining = pool.size();
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(rng, remaining));
    picked.push_back(pool[j]);
    pool[j] = pool[remaining - 1];
    --remaining;
  }
  return picked;
}

/// Samples an index from an (unnormalized-free) probability vector whose
/// entries sum to 1.
inline std::size_t categorical_draw(const std::vector<double>& probs, Rng& rng) {
  const double u = uniform_real01(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return probs.size() - 1;
}

}  // namespace updateleak
