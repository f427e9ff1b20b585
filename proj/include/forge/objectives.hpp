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
// Training losses and the region-task serializer.
//
//   mim_loss     sum of squared feature residuals over masked tokens; the
//                teacher side is a plain tensor, so gradient reaches the
//                student only.
//   siglip_loss  pairwise sigmoid contrastive loss over an n x n similarity
//                matrix with learnable temperature and bias, applied as
//                z = tau * (dot + b).
//   ar_loss      token-level negative log-likelihood against per-position
//                logits, reported as both sum and per-token mean.
//
// Region tasks serialize boxes as four integers in [0, 999] (coordinates
// scaled by 999/image_side and floored) inside the fixed template
// `<box>x1,y1,x2,y2</box>`. The four task kinds use fixed prompt templates:
//
//   bbox-to-string   prompt "describe <box>...</box>"   target caption
//   string-to-bbox   prompt "locate: " + caption        target box token
//   bbox-to-ocr      prompt "read <box>...</box>"       target transcript
//   ocr-to-bbox      prompt "find text: " + transcript  target box token

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forge/common.hpp"
#include "forge/graph.hpp"
#include "forge/manifest.hpp"
#include "forge/patching.hpp"
#include "forge/regions.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Masked feature-reconstruction loss.
// ---------------------------------------------------------------------------

// Sum over masked tokens of the squared L2 residual between student and
// teacher features. The teacher enters as a constant: no gradient flows to it.
template <typename T>
Var<T> mim_loss(Graph<T>& g, Var<T> student, const Tensor<T>& teacher,
                const MaskSet& mask) {
  const Tensor<T>& sv = student.value();
  FORGE_SHAPE_CHECK(
      sv.rows() == teacher.rows() && sv.cols() == teacher.cols(),
      "mim_loss: student ", sv.shape_str(), " vs teacher ",
      teacher.shape_str());
  FORGE_CHECK(mask.count() > 0, "mim_loss: empty mask");
  std::vector<int> rows;
  rows.reserve(mask.count());
  for (const size_t i : mask.indices) {
    FORGE_CHECK(i < sv.rows(), "mim_loss: mask index ", i, " out of range [0,",
                sv.rows(), ")");
    rows.push_back(int(i));
  }
  Var<T> s = gather_rows(student, rows);
  Tensor<T> picked(rows.size(), teacher.cols());
  {
    T* dst = picked.data_mut();
    const T* src = teacher.data();
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy(src + size_t(rows[i]) * teacher.cols(),
                src + (size_t(rows[i]) + 1) * teacher.cols(),
                dst + i * teacher.cols());
  }
  Var<T> diff = sub(s, g.constant(std::move(picked)));
  return sum_all(mul(diff, diff));
}

template <typename T>
T mim_loss_value(const Tensor<T>& student, const Tensor<T>& teacher,
                 const MaskSet& mask) {
  Graph<T> g;
  return mim_loss(g, g.constant(student.clone()), teacher, mask).value().item();
}

// ---------------------------------------------------------------------------
// Pairwise sigmoid contrastive loss.
// ---------------------------------------------------------------------------

template <typename T>
struct SigmoidLossParams {
  T tau = T(10);     // temperature, must stay positive
  T bias = T(-10);   // additive bias inside the temperature factor
};

// loss = -(1/n) * sum_{i,j} log sigmoid(y_ij * z_ij),
//   z_ij = tau * (img_i . txt_j + b),  y_ij = +1 on the diagonal, -1 off it.
// log_tau and bias are 1x1 graph variables so both can be learned; the
// temperature is exp(log_tau), positive by construction.
template <typename T>
Var<T> siglip_loss(Graph<T>& g, Var<T> img_emb, Var<T> txt_emb, Var<T> log_tau,
                   Var<T> bias) {
  const Tensor<T>& iv = img_emb.value();
  const Tensor<T>& tv = txt_emb.value();
  FORGE_CHECK(iv.rows() > 0, "siglip_loss: empty batch");
  FORGE_SHAPE_CHECK(iv.rows() == tv.rows(),
                    "siglip_loss: ", iv.rows(), " images vs ", tv.rows(),
                    " texts");
  FORGE_SHAPE_CHECK(iv.cols() == tv.cols(), "siglip_loss: image width ",
                    iv.cols(), " vs text width ", tv.cols());
  FORGE_SHAPE_CHECK(log_tau.value().is_scalar(), "siglip_loss: log_tau must be 1x1");
  FORGE_SHAPE_CHECK(bias.value().is_scalar(), "siglip_loss: bias must be 1x1");
  const size_t n = iv.rows();
  Tensor<T> sign = Tensor<T>::full(n, n, T(-1));
  {
    T* s = sign.data_mut();
    for (size_t i = 0; i < n; ++i) s[i * n + i] = T(1);
  }
  Var<T> sims = matmul(img_emb, transpose(txt_emb));
  Var<T> z = mul(exp(log_tau), add(sims, bias));
  Var<T> matched = mul(z, g.constant(std::move(sign)));
  return scale(sum_all(log_sigmoid(matched)), T(-1) / T(n));
}

template <typename T>
T siglip_loss_value(const Tensor<T>& img_emb, const Tensor<T>& txt_emb,
                    const SigmoidLossParams<T>& params) {
  FORGE_CHECK(params.tau > T(0), "siglip_loss: tau ", params.tau,
              " must be positive");
  Graph<T> g;
  return siglip_loss(g, g.constant(img_emb.clone()),
                     g.constant(txt_emb.clone()),
                     g.constant(Tensor<T>::scalar(std::log(params.tau))),
                     g.constant(Tensor<T>::scalar(params.bias)))
      .value()
      .item();
}

// ---------------------------------------------------------------------------
// Autoregressive token loss.
// ---------------------------------------------------------------------------

template <typename T>
struct ArLoss {
  Var<T> total;  // sum over positions of -log softmax(logits)[target]
  Var<T> mean;   // total / positions
};

template <typename T>
ArLoss<T> ar_loss(Graph<T>& g, Var<T> logits, const std::vector<int>& targets) {
  const Tensor<T>& lv = logits.value();
  FORGE_CHECK(!targets.empty(), "ar_loss: no target tokens");
  FORGE_SHAPE_CHECK(lv.rows() == targets.size(), "ar_loss: ", lv.rows(),
                    " logit rows vs ", targets.size(), " targets");
  for (const int id : targets)
    FORGE_CHECK(id >= 0 && size_t(id) < lv.cols(), "ar_loss: target id ", id,
                " outside vocabulary [0,", lv.cols(), ")");
  Var<T> lse = logsumexp_rows(logits);
  Var<T> picked = select_index(logits, targets);
  Var<T> total = sum_all(sub(lse, picked));
  return {total, scale(total, T(1) / T(targets.size()))};
}

// Returns {sum, per-token mean}.
template <typename T>
std::pair<T, T> ar_loss_value(const Tensor<T>& logits,
                              const std::vector<int>& targets) {
  Graph<T> g;
  ArLoss<T> l = ar_loss(g, g.constant(logits.clone()), targets);
  return {l.total.value().item(), l.mean.value().item()};
}

// ---------------------------------------------------------------------------
// Region-task serialization.
// ---------------------------------------------------------------------------

enum class TaskKind { BboxToString, StringToBbox, BboxToOcr, OcrToBbox };

inline const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::BboxToString: return "bbox-to-string";
    case TaskKind::StringToBbox: return "string-to-bbox";
    case TaskKind::BboxToOcr: return "bbox-to-ocr";
    case TaskKind::OcrToBbox: return "ocr-to-bbox";
  }
  throw Error("task_kind_name: bad kind");
}

inline TaskKind task_kind_from(std::string_view name) {
  if (name == "bbox-to-string") return TaskKind::BboxToString;
  if (name == "string-to-bbox") return TaskKind::StringToBbox;
  if (name == "bbox-to-ocr") return TaskKind::BboxToOcr;
  if (name == "ocr-to-bbox") return TaskKind::OcrToBbox;
  throw Error(format_msg("unknown task kind \"", name, "\""));
}

struct RegionTask {
  TaskKind kind = TaskKind::BboxToString;
  std::string prompt;
  std::string target;
  std::string image_id;
};

// Map a pixel coordinate to the integer grid [0, 999].
inline int quantize_coord(double x, double size) {
  FORGE_CHECK(size > 0, "quantize_coord: image side ", size);
  const double q = std::floor(999.0 * x / size);
  return int(std::clamp(q, 0.0, 999.0));
}

inline std::string box_token(const Box& box, double img_w, double img_h) {
  FORGE_CHECK(img_w > 0 && img_h > 0, "box_token: image size ", img_w, "x",
              img_h);
  FORGE_CHECK(box.valid(), "box_token: empty box");
  FORGE_CHECK(box.x1 >= 0 && box.y1 >= 0 && box.x2 <= img_w && box.y2 <= img_h,
              "box_token: box [", box.x1, ",", box.y1, ",", box.x2, ",",
              box.y2, "] outside ", img_w, "x", img_h, " image");
  const int x1 = quantize_coord(box.x1, img_w);
  const int y1 = quantize_coord(box.y1, img_h);
  const int x2 = quantize_coord(box.x2, img_w);
  const int y2 = quantize_coord(box.y2, img_h);
  FORGE_CHECK(x2 > x1 && y2 > y1,
              "box_token: box degenerates to zero area on the [0,999] grid");
  return format_msg("<box>", x1, ",", y1, ",", x2, ",", y2, "</box>");
}

// Extract the first well-formed `<box>x1,y1,x2,y2</box>` token. Each field
// must be a plain run of digits with value <= 999. Returns the integer
// coordinates, or nullopt when no well-formed token is present.
inline std::optional<Box> parse_box(std::string_view text) {
  static constexpr std::string_view kOpen = "<box>";
  static constexpr std::string_view kClose = "</box>";
  size_t from = 0;
  while (true) {
    const size_t start = text.find(kOpen, from);
    if (start == std::string_view::npos) return std::nullopt;
    const size_t body = start + kOpen.size();
    const size_t end = text.find(kClose, body);
    if (end == std::string_view::npos) return std::nullopt;
    std::string_view inner = text.substr(body, end - body);
    int vals[4];
    size_t field = 0, pos = 0;
    bool ok = true;
    while (ok && field < 4) {
      size_t stop = inner.find(',', pos);
      if (field == 3) stop = inner.size();
      if (stop == std::string_view::npos || stop == pos) {
        ok = false;
        break;
      }
      int v = 0;
      for (size_t i = pos; ok && i < stop; ++i) {
        if (inner[i] < '0' || inner[i] > '9') ok = false;
        v = v * 10 + (inner[i] - '0');
        if (v > 999) ok = false;
      }
      if (stop - pos > 3) ok = false;
      if (ok) vals[field++] = v;
      pos = stop + 1;
    }
    if (ok && field == 4 && pos - 1 == inner.size())
      return Box{double(vals[0]), double(vals[1]), double(vals[2]),
                 double(vals[3])};
    from = body;  // malformed token: keep scanning after its opener
  }
}

inline RegionTask format_region_task(const RegionAnnotation& region,
                                     TaskKind kind, double img_w, double img_h,
                                     std::string image_id = {}) {
  FORGE_CHECK(!region.caption.empty(), "format_region_task: empty caption");
  const std::string coords = box_token(region.box, img_w, img_h);
  RegionTask task;
  task.kind = kind;
  task.image_id = std::move(image_id);
  switch (kind) {
    case TaskKind::BboxToString:
      task.prompt = "describe " + coords;
      task.target = region.caption;
      break;
    case TaskKind::StringToBbox:
      task.prompt = "locate: " + region.caption;
      task.target = coords;
      break;
    case TaskKind::BboxToOcr:
      task.prompt = "read " + coords;
      task.target = region.caption;
      break;
    case TaskKind::OcrToBbox:
      task.prompt = "find text: " + region.caption;
      task.target = coords;
      break;
  }
  return task;
}

inline ojson region_task_to_json(const RegionTask& task) {
  ojson j;
  j["kind"] = task_kind_name(task.kind);
  j["prompt"] = task.prompt;
  j["target"] = task.target;
  j["image_id"] = task.image_id;
  return j;
}

inline RegionTask region_task_from_json(const ojson& j) {
  for (const char* key : {"kind", "prompt", "target", "image_id"})
    FORGE_CHECK(j.contains(key) && j[key].is_string(),
                "region task: missing or non-string \"", key, "\"");
  RegionTask task;
  task.kind = task_kind_from(j["kind"].template get<std::string>());
  task.prompt = j["prompt"].template get<std::string>();
  task.target = j["target"].template get<std::string>();
  task.image_id = j["image_id"].template get<std::string>();
  return task;
}

inline std::string region_tasks_to_jsonl(const std::vector<RegionTask>& tasks) {
  std::string out;
  for (const RegionTask& t : tasks) {
    out += region_task_to_json(t).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<RegionTask> region_tasks_from_jsonl(std::string_view text) {
  std::vector<RegionTask> tasks;
  size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.empty()) continue;
    try {
      tasks.push_back(region_task_from_json(
          ojson::parse(std::string(line), nullptr, true)));
    } catch (const std::exception& e) {
      throw Error(
          format_msg("region task line ", line_no, ": ", e.what()));
    }
  }
  return tasks;
}

}  // namespace forge
