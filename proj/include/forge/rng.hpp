// Copyright 2026 The Forge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "forge/common.hpp"

namespace forge {

// Deterministic pseudo-random stream. The generator is fully specified here
// (splitmix64 core, Box-Muller normals, rejection-sampled bounded ints) so
// results are bit-identical across platforms and standard libraries.
//
// All randomness in the project flows from one root seed. Independent
// consumers derive named sub-streams ("init", "data", "mask", "sampling",
// "teacher", ...) via substream(), so adding a consumer never perturbs the
// draws seen by existing ones.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // splitmix64 step.
  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; caches the spare value.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;  // avoid log(0)
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    FORGE_CHECK(n > 0, "Rng::below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  // Derive an independent stream identified by name. Derivation depends only
  // on the current state value and the name, not on generator history shape.
  Rng substream(std::string_view name) const {
    uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a 64
    for (const char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ull;
    }
    uint64_t z = state_ ^ (h * 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

  // k distinct indices drawn uniformly from [0, n), returned sorted ascending.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
    FORGE_CHECK(k <= n, "Rng::sample_without_replacement: k=", k, " > n=", n);
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = 0; i < k; ++i) {
      const size_t j = i + static_cast<size_t>(below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace forge
