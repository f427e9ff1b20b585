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
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "forge/common.hpp"

namespace forge {

// Axis-aligned box, corner convention [x1,y1,x2,y2] with x2 > x1, y2 > y1.
// Areas use the continuous convention (x2-x1)*(y2-y1).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

inline double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Greedy non-maximum suppression over all boxes at once (label-agnostic).
// Candidates are visited by descending score, ties broken by lower input
// index; a candidate is dropped iff its IoU with an already-kept box is
// >= threshold. Returns indices into the input, in keep order.
inline std::vector<size_t> nms(const std::vector<Box>& boxes,
                               const std::vector<double>& scores,
                               double iou_threshold) {
  FORGE_CHECK(boxes.size() == scores.size(), "nms: ", boxes.size(),
              " boxes vs ", scores.size(), " scores");
  FORGE_CHECK(iou_threshold > 0.0 && iou_threshold <= 1.0,
              "nms: threshold ", iou_threshold, " outside (0,1]");
  std::vector<size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<size_t> kept;
  for (const size_t i : order) {
    bool suppressed = false;
    for (const size_t k : kept) {
      if (iou(boxes[i], boxes[k]) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

// Annotation category: generic object grounding, scene-text reading, or
// document-text reading.
enum class RegionKind { General, RichTextOcr, DocOcr };

inline const char* region_kind_name(RegionKind k) {
  switch (k) {
    case RegionKind::General: return "general";
    case RegionKind::RichTextOcr: return "rich_text_ocr";
    case RegionKind::DocOcr: return "doc_ocr";
  }
  return "general";
}

inline RegionKind region_kind_from(const std::string& s) {
  if (s == "general") return RegionKind::General;
  if (s == "rich_text_ocr") return RegionKind::RichTextOcr;
  if (s == "doc_ocr") return RegionKind::DocOcr;
  throw Error(format_msg("unknown region kind \"", s, "\""));
}

// One localized annotation: a box in pixel coordinates plus its grouping
// label, free-text caption (or OCR transcript), and detector confidence.
struct RegionAnnotation {
  Box box;
  std::string label;    // grouping key for stratified sampling
  std::string caption;  // referring text or transcript
  double confidence = 1.0;
  RegionKind kind = RegionKind::General;
};

}  // namespace forge
