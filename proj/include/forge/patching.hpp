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
#include <utility>
#include <vector>

#include "forge/common.hpp"
#include "forge/graph.hpp"
#include "forge/image.hpp"
#include "forge/rng.hpp"

namespace forge {

inline constexpr int kGridMultiple = 28;  // two patch widths
inline constexpr int kPatchSize = 14;

// Choose the training resolution for an arbitrary input size: scale down
// uniformly (never up) so the longer side fits max_side, then snap each side
// to the nearest multiple of 28. Degenerate inputs clamp to 28; outputs never
// exceed max_side. Aspect ratio is preserved before snapping, so each side
// moves by at most half a grid step afterwards.
inline std::pair<int, int> snap_resolution(int width, int height,
                                           int multiple = kGridMultiple,
                                           int max_side = 1008) {
  FORGE_CHECK(width > 0 && height > 0, "snap_resolution: non-positive input ",
              width, "x", height);
  FORGE_CHECK(multiple > 0 && max_side >= multiple,
              "snap_resolution: bad grid multiple=", multiple,
              " max_side=", max_side);
  FORGE_CHECK(max_side % multiple == 0, "snap_resolution: max_side ", max_side,
              " is not a multiple of ", multiple);
  const int longer = width > height ? width : height;
  const double s = longer > max_side ? double(max_side) / longer : 1.0;
  auto snap = [&](double side) {
    int v = int(std::floor(side / multiple + 0.5)) * multiple;
    if (v < multiple) v = multiple;
    if (v > max_side) v = max_side;
    return v;
  };
  return {snap(width * s), snap(height * s)};
}

// One image cut into a variable-length token sequence. `patches` holds the
// raw flattened 14x14x3 pixels per token (embedding happens inside the
// encoder so gradients reach the projection); `positions` carries the 2-D
// grid coordinate of each token, row-major.
template <typename T>
struct TokenSequence {
  Tensor<T> patches;               // tokens x (patch*patch*3)
  std::vector<GridPos> positions;  // grid coord per token
  int grid_rows = 0;
  int grid_cols = 0;
  size_t token_count() const { return positions.size(); }
};

// Cut an image whose sides are multiples of the patch size into row-major
// 14x14 patches. 448x448 -> 32x32 grid -> 1024 tokens of dim 588.
template <typename T>
TokenSequence<T> patchify(const ImageTensor& img, int patch = kPatchSize) {
  FORGE_CHECK(patch > 0, "patchify: bad patch size ", patch);
  FORGE_CHECK(img.width % patch == 0 && img.height % patch == 0,
              "patchify: image ", img.width, "x", img.height,
              " is not a multiple of patch size ", patch);
  const int rows = img.height / patch;
  const int cols = img.width / patch;
  const size_t dim = size_t(patch) * patch * 3;
  TokenSequence<T> seq;
  seq.grid_rows = rows;
  seq.grid_cols = cols;
  seq.patches = Tensor<T>(size_t(rows) * cols, dim);
  seq.positions.reserve(size_t(rows) * cols);
  T* out = seq.patches.data_mut();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      seq.positions.push_back(GridPos{r, c});
      T* tok = out + (size_t(r) * cols + c) * dim;
      size_t k = 0;
      for (int y = 0; y < patch; ++y) {
        const double* px = img.pixel(r * patch + y, c * patch);
        for (int x = 0; x < patch * 3; ++x) tok[k++] = T(px[x]);
      }
    }
  }
  return seq;
}

// Indices of tokens hidden from the encoder during masked pretraining.
struct MaskSet {
  std::vector<size_t> indices;  // sorted ascending, unique
  size_t count() const { return indices.size(); }
  bool contains(size_t i) const {
    return std::binary_search(indices.begin(), indices.end(), i);
  }
};

// Uniformly choose round(ratio * token_count) distinct token indices.
// Deterministic in (token_count, ratio, seed).
inline MaskSet sample_mask(size_t token_count, double ratio, uint64_t seed) {
  FORGE_CHECK(token_count > 0, "sample_mask: empty token sequence");
  FORGE_CHECK(ratio >= 0.0 && ratio <= 1.0, "sample_mask: ratio ", ratio,
              " outside [0,1]");
  const size_t k = size_t(std::llround(ratio * double(token_count)));
  Rng rng(seed);
  MaskSet m;
  m.indices = rng.sample_without_replacement(token_count, k);
  return m;
}

}  // namespace forge
