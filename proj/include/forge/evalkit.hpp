// Copyright 2026 The Forge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Retrieval, classification, and grounding metrics over embedding tensors.
// Ranking uses raw cosine similarity (no temperature or bias); ground truth
// for retrieval is the diagonal pairing, and all ties break toward the lower
// index so results are deterministic.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/regions.hpp"
#include "forge/tensor.hpp"

namespace forge {

template <typename T>
struct SimilarityMatrix {
  Tensor<T> values;                    // n_images x n_texts cosines in [-1,1]
  std::vector<std::string> image_ids;  // one per row
  std::vector<std::string> text_ids;   // one per column
};

enum class RetrievalDirection { TextToImage, ImageToText };

namespace detail {

template <typename T>
void check_unit_rows(const Tensor<T>& embs, const char* side) {
  const T* p = embs.data();
  for (size_t r = 0; r < embs.rows(); ++r) {
    double norm = 0.0;
    for (size_t c = 0; c < embs.cols(); ++c) {
      FORGE_CHECK(std::isfinite(double(p[r * embs.cols() + c])),
                  "similarity: non-finite ", side, " embedding in row ", r);
      norm += double(p[r * embs.cols() + c]) * double(p[r * embs.cols() + c]);
    }
    norm = std::sqrt(norm);
    FORGE_CHECK(std::abs(norm - 1.0) <= 1e-3, "similarity: ", side, " row ", r,
                " has norm ", norm, ", expected unit length");
  }
}

}  // namespace detail

// Cosine similarity of every image row against every text row. Empty id
// lists are filled with decimal indices.
template <typename T>
SimilarityMatrix<T> similarity(const Tensor<T>& img_embs,
                               const Tensor<T>& txt_embs,
                               std::vector<std::string> image_ids = {},
                               std::vector<std::string> text_ids = {}) {
  FORGE_CHECK(img_embs.rows() > 0 && txt_embs.rows() > 0,
              "similarity: empty embedding set");
  FORGE_SHAPE_CHECK(img_embs.cols() == txt_embs.cols(),
                    "similarity: image width ", img_embs.cols(),
                    " vs text width ", txt_embs.cols());
  detail::check_unit_rows(img_embs, "image");
  detail::check_unit_rows(txt_embs, "text");
  const size_t n = img_embs.rows(), m = txt_embs.rows(), d = img_embs.cols();
  if (image_ids.empty())
    for (size_t i = 0; i < n; ++i) image_ids.push_back(std::to_string(i));
  if (text_ids.empty())
    for (size_t j = 0; j < m; ++j) text_ids.push_back(std::to_string(j));
  FORGE_SHAPE_CHECK(image_ids.size() == n, "similarity: ", image_ids.size(),
                    " image ids for ", n, " rows");
  FORGE_SHAPE_CHECK(text_ids.size() == m, "similarity: ", text_ids.size(),
                    " text ids for ", m, " columns");
  SimilarityMatrix<T> sim;
  sim.values = Tensor<T>(n, m);
  sim.image_ids = std::move(image_ids);
  sim.text_ids = std::move(text_ids);
  T* out = sim.values.data_mut();
  const T* a = img_embs.data();
  const T* b = txt_embs.data();
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) {
      double dot = 0.0;
      for (size_t c = 0; c < d; ++c)
        dot += double(a[i * d + c]) * double(b[j * d + c]);
      out[i * m + j] = T(std::clamp(dot, -1.0, 1.0));
    }
  return sim;
}

// Fraction of queries whose diagonal match ranks in the top k. A competitor
// outranks the match when its score is strictly higher, or equal with a
// lower index.
template <typename T>
double recall_at_k(const SimilarityMatrix<T>& sim, int k,
                   RetrievalDirection direction) {
  const Tensor<T>& v = sim.values;
  FORGE_CHECK(k >= 1, "recall_at_k: k = ", k);
  FORGE_SHAPE_CHECK(v.rows() == v.cols(),
                    "recall_at_k: diagonal ground truth needs a square "
                    "matrix, got ",
                    v.shape_str());
  const size_t n = v.rows();
  size_t hits = 0;
  for (size_t q = 0; q < n; ++q) {
    const T own = v.at(q, q);
    size_t ahead = 0;
    for (size_t c = 0; c < n; ++c) {
      if (c == q) continue;
      const T score = direction == RetrievalDirection::TextToImage
                          ? v.at(c, q)
                          : v.at(q, c);
      if (score > own || (score == own && c < q)) ++ahead;
    }
    if (ahead < size_t(k)) ++hits;
  }
  return double(hits) / double(n);
}

// Argmax over classes of the mean cosine similarity between the image
// embedding and each class's prompt embeddings. Ties pick the lower id.
template <typename T>
size_t zeroshot_classify(const Tensor<T>& img_emb,
                         const std::vector<Tensor<T>>& class_prompts) {
  FORGE_CHECK(!class_prompts.empty(), "zeroshot_classify: no classes");
  FORGE_SHAPE_CHECK(img_emb.rows() == 1, "zeroshot_classify: image embedding ",
                    img_emb.shape_str(), ", expected a single row");
  const size_t d = img_emb.cols();
  size_t best = 0;
  double best_score = -1e300;
  for (size_t cls = 0; cls < class_prompts.size(); ++cls) {
    const Tensor<T>& prompts = class_prompts[cls];
    FORGE_CHECK(prompts.rows() > 0, "zeroshot_classify: class ", cls,
                " has no prompts");
    FORGE_SHAPE_CHECK(prompts.cols() == d, "zeroshot_classify: class ", cls,
                      " prompt width ", prompts.cols(), " vs image width ", d);
    double total = 0.0;
    const T* p = prompts.data();
    const T* q = img_emb.data();
    for (size_t r = 0; r < prompts.rows(); ++r)
      for (size_t c = 0; c < d; ++c)
        total += double(p[r * d + c]) * double(q[c]);
    const double score = total / double(prompts.rows());
    if (score > best_score) {
      best_score = score;
      best = cls;
    }
  }
  return best;
}

// Fraction of aligned prediction/gold pairs with IoU at or above threshold.
inline double grounding_accuracy(const std::vector<Box>& predicted,
                                 const std::vector<Box>& gold,
                                 double iou_threshold = 0.5) {
  FORGE_SHAPE_CHECK(predicted.size() == gold.size(), "grounding_accuracy: ",
                    predicted.size(), " predictions vs ", gold.size(),
                    " gold boxes");
  FORGE_CHECK(!gold.empty(), "grounding_accuracy: empty evaluation set");
  FORGE_CHECK(iou_threshold > 0.0 && iou_threshold <= 1.0,
              "grounding_accuracy: threshold ", iou_threshold);
  size_t hits = 0;
  for (size_t i = 0; i < gold.size(); ++i)
    if (iou(predicted[i], gold[i]) >= iou_threshold) ++hits;
  return double(hits) / double(gold.size());
}

}  // namespace forge
