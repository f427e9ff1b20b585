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
// Three-stage training driver: schedules, freeze plans, AdamW, and the
// per-stage step loop.
//
//   Stage 1  masked feature reconstruction against a frozen, independently
//            seeded copy of the encoder.
//   Stage 2  pairwise sigmoid contrastive alignment of the two towers, with
//            the text tower joining at text_unfreeze_fraction and the
//            temperature/bias head training from the first step.
//   Stage 3  token prediction through the projector and decoder on region
//            tasks (or plain captioning when a record carries no regions),
//            with only the answer tokens supervised.

#pragma once

#include <algorithm>
#include <numeric>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "forge/common.hpp"
#include "forge/image.hpp"
#include "forge/manifest.hpp"
#include "forge/models.hpp"
#include "forge/objectives.hpp"
#include "forge/patching.hpp"
#include "forge/rng.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Stage configuration.
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct StageConfig {
  int stage = 1;                    // 1, 2, or 3
  uint64_t samples_target = 0;      // total samples to consume
  size_t batch_size = 1;
  int max_resolution = 256;         // hard cap on the longer image side
  double lr_peak = 1e-3;
  std::vector<std::string> trainable;       // component names
  std::pair<int, int> resolution_schedule;  // start/end longer side, pixels
  std::pair<int, int> context_cap_schedule; // start/end text tokens
  double text_unfreeze_fraction = 0.5;      // stage 2 only
  double warmup_fraction = 0.03;
  double lr_min_fraction = 0.01;            // lr_min = lr_peak * this
  double mask_ratio = 0.75;                 // stage 1 only
  AdamWConfig optimizer;

  void validate() const {
    FORGE_CHECK(stage >= 1 && stage <= 3, "StageConfig: stage ", stage);
    FORGE_CHECK(samples_target > 0, "StageConfig: samples_target must be > 0");
    FORGE_CHECK(batch_size > 0, "StageConfig: batch_size must be > 0");
    FORGE_CHECK(lr_peak > 0, "StageConfig: lr_peak ", lr_peak);
    FORGE_CHECK(!trainable.empty(), "StageConfig: no trainable components");
    const std::vector<std::string> known = component_names();
    for (const std::string& name : trainable)
      FORGE_CHECK(std::find(known.begin(), known.end(), name) != known.end(),
                  "StageConfig: unknown component \"", name, "\"");
    FORGE_CHECK(resolution_schedule.first >= 28 &&
                    resolution_schedule.second >= 28,
                "StageConfig: resolution schedule below one grid cell");
    FORGE_CHECK(std::max(resolution_schedule.first,
                         resolution_schedule.second) <= max_resolution,
                "StageConfig: resolution schedule exceeds max_resolution ",
                max_resolution);
    FORGE_CHECK(context_cap_schedule.first >= 0 &&
                    context_cap_schedule.second >= 0,
                "StageConfig: negative context cap");
    if (stage != 1)
      FORGE_CHECK(context_cap_schedule.first >= 1 &&
                      context_cap_schedule.second >= 1,
                  "StageConfig: stage ", stage, " needs a text context cap");
    FORGE_CHECK(lr_min_fraction >= 0.0 && lr_min_fraction <= 1.0,
                "StageConfig: lr_min_fraction ", lr_min_fraction);
    FORGE_CHECK(
        text_unfreeze_fraction >= 0.0 && text_unfreeze_fraction <= 1.0,
        "StageConfig: text_unfreeze_fraction ", text_unfreeze_fraction);
    FORGE_CHECK(warmup_fraction >= 0.0 && warmup_fraction < 1.0,
                "StageConfig: warmup_fraction ", warmup_fraction);
    FORGE_CHECK(mask_ratio > 0.0 && mask_ratio <= 1.0,
                "StageConfig: mask_ratio ", mask_ratio);
  }

  // Full-scale presets: 1.8B/9.3B/0.5B samples at batch 4096/49152/4096,
  // resolution 256 fixed, 336 to 448, and capped at 1000, with peak rates
  // 1e-3/1e-4/1e-5.
  static StageConfig reference_preset(int stage) {
    StageConfig cfg;
    cfg.stage = stage;
    switch (stage) {
      case 1:
        cfg.samples_target = 1800000000ull;
        cfg.batch_size = 4096;
        cfg.max_resolution = 256;
        cfg.lr_peak = 1e-3;
        cfg.trainable = {"vit"};
        cfg.resolution_schedule = {256, 256};
        cfg.context_cap_schedule = {0, 0};
        break;
      case 2:
        cfg.samples_target = 9300000000ull;
        cfg.batch_size = 49152;
        cfg.max_resolution = 448;
        cfg.lr_peak = 1e-4;
        cfg.trainable = {"vit", "text"};
        cfg.resolution_schedule = {336, 448};
        cfg.context_cap_schedule = {64, 256};
        break;
      case 3:
        cfg.samples_target = 500000000ull;
        cfg.batch_size = 4096;
        cfg.max_resolution = 1000;
        cfg.lr_peak = 1e-5;
        cfg.trainable = {"vit", "projector", "decoder"};
        cfg.resolution_schedule = {1000, 1000};
        cfg.context_cap_schedule = {256, 256};
        break;
      default:
        throw Error(format_msg("reference_preset: stage ", stage));
    }
    cfg.validate();
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Learning-rate schedule.
// ---------------------------------------------------------------------------

// Linear ramp 0 -> lr_peak over the warmup steps, then half-cosine decay
// from lr_peak down to lr_min at step == total.
inline double cosine_lr(uint64_t step, uint64_t total, double lr_peak,
                        double lr_min, double warmup_fraction) {
  FORGE_CHECK(total > 0, "cosine_lr: total == 0");
  FORGE_CHECK(step <= total, "cosine_lr: step ", step, " beyond total ",
              total);
  FORGE_CHECK(lr_peak > 0 && lr_min >= 0 && lr_min <= lr_peak,
              "cosine_lr: rates peak=", lr_peak, " min=", lr_min);
  FORGE_CHECK(warmup_fraction >= 0.0 && warmup_fraction < 1.0,
              "cosine_lr: warmup_fraction ", warmup_fraction);
  const uint64_t warmup = uint64_t(std::llround(warmup_fraction * total));
  if (step < warmup) return lr_peak * double(step) / double(warmup);
  if (step == warmup) return lr_peak;  // exact peak at warmup end
  if (step == total) return lr_min;    // exact floor at the last step
  const double progress = double(step - warmup) / double(total - warmup);
  return lr_min + 0.5 * (lr_peak - lr_min) * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// AdamW.
// ---------------------------------------------------------------------------

// Per-parameter moment store. Parameters are identified by name; each keeps
// its own step counter so late-joining parameters (text tower unfreezing)
// bias-correct from their own first step.
template <typename T>
class OptimizerState {
 public:
  explicit OptimizerState(AdamWConfig cfg = {}) : cfg_(cfg) {
    FORGE_CHECK(cfg.beta1 >= 0 && cfg.beta1 < 1, "AdamW: beta1 ", cfg.beta1);
    FORGE_CHECK(cfg.beta2 >= 0 && cfg.beta2 < 1, "AdamW: beta2 ", cfg.beta2);
    FORGE_CHECK(cfg.eps > 0, "AdamW: eps ", cfg.eps);
    FORGE_CHECK(cfg.weight_decay >= 0, "AdamW: weight_decay ",
                cfg.weight_decay);
  }

  const AdamWConfig& config() const { return cfg_; }
  size_t tracked_params() const { return slots_.size(); }

  // Bias-corrected moment update plus decoupled weight decay, in place.
  void apply(const std::string& name, Tensor<T>& param, const Tensor<T>& grad,
             double lr) {
    FORGE_SHAPE_CHECK(param.same_shape(grad), "AdamW: param ", name, " is ",
                      param.shape_str(), " but grad is ", grad.shape_str());
    FORGE_CHECK(lr >= 0, "AdamW: negative learning rate ", lr);
    const T* gp = grad.data();
    for (size_t i = 0; i < grad.size(); ++i)
      FORGE_CHECK(std::isfinite(double(gp[i])),
                  "AdamW: non-finite gradient for parameter \"", name, "\"");
    Slot& slot = slots_.try_emplace(name, Slot{Tensor<T>(param.rows(),
                                                         param.cols()),
                                               Tensor<T>(param.rows(),
                                                         param.cols()),
                                               0})
                     .first->second;
    FORGE_SHAPE_CHECK(slot.m.same_shape(param), "AdamW: parameter \"", name,
                      "\" changed shape to ", param.shape_str());
    slot.step += 1;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(slot.step));
    const double c2 = 1.0 - std::pow(b2, double(slot.step));
    T* m = slot.m.data_mut();
    T* v = slot.v.data_mut();
    T* p = param.data_mut();
    for (size_t i = 0; i < param.size(); ++i) {
      const double g = double(gp[i]);
      m[i] = T(b1 * double(m[i]) + (1.0 - b1) * g);
      v[i] = T(b2 * double(v[i]) + (1.0 - b2) * g * g);
      const double mhat = double(m[i]) / c1;
      const double vhat = double(v[i]) / c2;
      p[i] = T(double(p[i]) - lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                    cfg_.weight_decay * double(p[i])));
    }
  }

 private:
  struct Slot {
    Tensor<T> m, v;
    uint64_t step = 0;
  };
  AdamWConfig cfg_;
  std::map<std::string, Slot> slots_;
};

// ---------------------------------------------------------------------------
// Progress-dependent schedules.
// ---------------------------------------------------------------------------

// Trainable component set at the given progress point. Stage 2 withholds
// the text tower until text_unfreeze_fraction. The temperature/bias head is
// not part of the plan; run_stage enables it for all of stage 2.
inline std::vector<std::string> freeze_plan(const StageConfig& cfg,
                                            double progress) {
  FORGE_CHECK(progress >= 0.0 && progress <= 1.0, "freeze_plan: progress ",
              progress);
  std::vector<std::string> out;
  for (const std::string& name : cfg.trainable) {
    if (cfg.stage == 2 && name == "text" &&
        progress < cfg.text_unfreeze_fraction)
      continue;
    out.push_back(name);
  }
  return out;
}

// Longer-side cap at the given progress: linear between the schedule
// endpoints, snapped down to a multiple of 28.
inline int resolution_at(const StageConfig& cfg, double progress) {
  FORGE_CHECK(progress >= 0.0 && progress <= 1.0, "resolution_at: progress ",
              progress);
  const double side =
      cfg.resolution_schedule.first +
      (cfg.resolution_schedule.second - cfg.resolution_schedule.first) *
          progress;
  const int snapped = int(std::floor(side / kGridMultiple)) * kGridMultiple;
  return std::max(kGridMultiple, snapped);
}

// Text context cap at the given progress, linearly interpolated and rounded.
inline int context_at(const StageConfig& cfg, double progress) {
  FORGE_CHECK(progress >= 0.0 && progress <= 1.0, "context_at: progress ",
              progress);
  return int(std::llround(
      cfg.context_cap_schedule.first +
      (cfg.context_cap_schedule.second - cfg.context_cap_schedule.first) *
          progress));
}

// ---------------------------------------------------------------------------
// Data sources.
// ---------------------------------------------------------------------------

class DataSource {
 public:
  virtual ~DataSource() = default;
  // Next record, or nullptr when the stream is exhausted.
  virtual const ManifestRecord* next() = 0;
};

// Loops over a fixed record list forever.
class CyclingSource : public DataSource {
 public:
  explicit CyclingSource(std::vector<ManifestRecord> records)
      : records_(std::move(records)) {
    FORGE_CHECK(!records_.empty(), "CyclingSource: no records");
  }
  const ManifestRecord* next() override {
    const ManifestRecord* r = &records_[pos_];
    pos_ = (pos_ + 1) % records_.size();
    return r;
  }

 private:
  std::vector<ManifestRecord> records_;
  size_t pos_ = 0;
};

// Cycles forever like CyclingSource, but re-shuffles the deck at every
// epoch boundary so batch composition varies across passes. Deterministic
// in (records, seed).
class ShufflingSource : public DataSource {
 public:
  ShufflingSource(std::vector<ManifestRecord> records, uint64_t seed)
      : records_(std::move(records)), rng_(seed) {
    FORGE_CHECK(!records_.empty(), "ShufflingSource: no records");
    order_.resize(records_.size());
    std::iota(order_.begin(), order_.end(), size_t(0));
    reshuffle();
  }
  const ManifestRecord* next() override {
    if (pos_ == order_.size()) {
      reshuffle();
      pos_ = 0;
    }
    return &records_[order_[pos_++]];
  }

 private:
  void reshuffle() {
    for (size_t i = order_.size(); i > 1; --i)
      std::swap(order_[i - 1], order_[rng_.below(i)]);
  }

  std::vector<ManifestRecord> records_;
  std::vector<size_t> order_;
  size_t pos_ = 0;
  Rng rng_;
};

// Yields each record once, in order, then reports exhaustion.
class BoundedSource : public DataSource {
 public:
  explicit BoundedSource(std::vector<ManifestRecord> records)
      : records_(std::move(records)) {}
  const ManifestRecord* next() override {
    if (pos_ >= records_.size()) return nullptr;
    return &records_[pos_++];
  }

 private:
  std::vector<ManifestRecord> records_;
  size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Stage runner.
// ---------------------------------------------------------------------------

struct StepMetrics {
  uint64_t step = 0;  // 1-based optimizer step
  double loss = 0.0;
  double lr = 0.0;
  int res = 0;
  int ctx = 0;
};

inline ojson step_metrics_to_json(const StepMetrics& m) {
  ojson j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["lr"] = m.lr;
  j["res"] = m.res;
  j["ctx"] = m.ctx;
  return j;
}

inline std::string metrics_to_jsonl(const std::vector<StepMetrics>& rows) {
  std::string out;
  for (const StepMetrics& m : rows) {
    out += step_metrics_to_json(m).dump();
    out += '\n';
  }
  return out;
}

struct RunResult {
  std::vector<StepMetrics> metrics;
  bool early_stopped = false;  // stream ran dry before samples_target
};

// Renders a record's pixels with the longer side capped; toy corpora draw
// procedurally from the record itself.
using RecordRenderer =
    std::function<ImageTensor(const ManifestRecord&, int max_side)>;

template <typename T>
struct RunHooks {
  RecordRenderer render;
  std::function<void(const StepMetrics&)> on_step;  // optional streaming
};

namespace detail {

// Rendered + patchified image, cached per (record, resolution).
template <typename T>
class PatchCache {
 public:
  PatchCache(const RecordRenderer& render) : render_(render) {}

  const TokenSequence<T>& get(const ManifestRecord& rec, int max_side) {
    const std::string key = rec.image_id + "@" + std::to_string(max_side);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ImageTensor img = render_(rec, max_side);
    return cache_.emplace(key, patchify<T>(img)).first->second;
  }

 private:
  const RecordRenderer& render_;
  std::map<std::string, TokenSequence<T>> cache_;
};

inline const Caption& first_caption(const ManifestRecord& rec, int stage) {
  FORGE_CHECK(!rec.captions.empty(), "run_stage: stage ", stage, " record \"",
              rec.image_id, "\" has no caption");
  return rec.captions.front();
}

// Pick the stage-3 task for one record: a region task when regions exist,
// plain captioning otherwise. Direction alternates via the data stream rng.
inline RegionTask stage3_task(const ManifestRecord& rec, Rng& data_rng) {
  if (rec.regions.empty()) {
    RegionTask task;
    task.kind = TaskKind::BboxToString;
    task.prompt = "caption:";
    task.target = first_caption(rec, 3).text;
    task.image_id = rec.image_id;
    return task;
  }
  const RegionAnnotation& region =
      rec.regions[size_t(data_rng.below(rec.regions.size()))];
  const bool to_box = data_rng.below(2) == 0;
  TaskKind kind;
  if (region.kind == RegionKind::General)
    kind = to_box ? TaskKind::StringToBbox : TaskKind::BboxToString;
  else
    kind = to_box ? TaskKind::OcrToBbox : TaskKind::BboxToOcr;
  return format_region_task(region, kind, double(rec.width),
                            double(rec.height), rec.image_id);
}

}  // namespace detail

// Runs one curriculum stage over the data stream, updating state in place.
// Deterministic in (cfg, data order, state, seed). Components outside the
// freeze plan are never touched by the optimizer.
template <typename T>
RunResult run_stage(const StageConfig& cfg, DataSource& data,
                    ModelState<T>& state, uint64_t seed,
                    const RunHooks<T>& hooks) {
  cfg.validate();
  FORGE_CHECK(bool(hooks.render), "run_stage: no record renderer");
  const uint64_t total_steps =
      std::max<uint64_t>(1, (cfg.samples_target + cfg.batch_size - 1) /
                                cfg.batch_size);
  Rng mask_rng = Rng(seed).substream("mask");
  Rng data_rng = Rng(seed).substream("data");
  OptimizerState<T> opt(cfg.optimizer);
  detail::PatchCache<T> cache(hooks.render);

  // Stage 1 reconstructs the features of a frozen, independently seeded
  // twin of the configured model.
  std::unique_ptr<ModelState<T>> teacher;
  std::map<std::string, Tensor<T>> teacher_feats;
  if (cfg.stage == 1) {
    teacher = std::make_unique<ModelState<T>>(init_model_state<T>(
        state.vit_cfg, state.text_cfg, state.dec_cfg,
        Rng(seed).substream("teacher").next_u64()));
    for (auto& entry : teacher->trainable) entry.second = false;
  }

  RunResult result;
  for (uint64_t step = 0; step < total_steps; ++step) {
    // Fraction of the phase completed before this step; a one-step phase
    // sits at the schedule start.
    const double progress =
        total_steps > 1 ? double(step) / double(total_steps - 1) : 0.0;
    const int res = resolution_at(cfg, progress);
    const int ctx = context_at(cfg, progress);
    const double lr = cosine_lr(step, total_steps, cfg.lr_peak,
                                cfg.lr_peak * cfg.lr_min_fraction,
                                cfg.warmup_fraction);

    const std::vector<std::string> plan = freeze_plan(cfg, progress);
    for (const std::string& name : component_names())
      state.trainable[name] =
          std::find(plan.begin(), plan.end(), name) != plan.end();
    state.trainable["head"] = cfg.stage == 2;

    std::vector<const ManifestRecord*> batch;
    while (batch.size() < cfg.batch_size) {
      const ManifestRecord* rec = data.next();
      if (rec == nullptr) {
        result.early_stopped = true;
        break;
      }
      batch.push_back(rec);
    }
    if (batch.empty()) break;

    Graph<T> g;
    ParamBinder<T> pb(g);
    std::vector<Var<T>> item_losses;
    std::vector<Var<T>> img_rows, txt_rows;  // stage 2 accumulators

    for (size_t item = 0; item < batch.size(); ++item) {
      const ManifestRecord& rec = *batch[item];
      const TokenSequence<T>& seq = cache.get(rec, res);
      if (cfg.stage == 1) {
        MaskSet mask = sample_mask(seq.token_count(), cfg.mask_ratio,
                                   mask_rng.next_u64());
        const std::string key =
            rec.image_id + "@" + std::to_string(res);
        auto found = teacher_feats.find(key);
        if (found == teacher_feats.end()) {
          Graph<T> tg;
          ParamBinder<T> tpb(tg);
          found = teacher_feats
                      .emplace(key, encode_image(tg, tpb, *teacher, seq)
                                        .patch_features.value()
                                        .clone())
                      .first;
        }
        EncodedImage<T> student = encode_image(g, pb, state, seq, &mask);
        item_losses.push_back(
            mim_loss(g, student.patch_features, found->second, mask));
      } else if (cfg.stage == 2) {
        img_rows.push_back(encode_image(g, pb, state, seq).pooled);
        TextTokens tokens =
            tokenize(detail::first_caption(rec, 2).text, ctx);
        txt_rows.push_back(encode_text(g, pb, state, tokens));
      } else {
        RegionTask task = detail::stage3_task(rec, data_rng);
        std::vector<int> ids = tokenize(task.prompt, ctx).ids;
        const size_t prompt_len = ids.size();
        for (const int id : tokenize(task.target, ctx).ids)
          ids.push_back(id);
        ids.push_back(kTokenEos);
        EncodedImage<T> enc = encode_image(g, pb, state, seq);
        Var<T> prefix = project(g, pb, state, enc.patch_features);
        Var<T> logits = decode(g, pb, state, prefix, ids);
        std::vector<int> sup_rows, sup_ids;
        for (size_t i = prompt_len; i < ids.size(); ++i) {
          sup_rows.push_back(int(i));
          sup_ids.push_back(ids[i]);
        }
        item_losses.push_back(
            ar_loss(g, gather_rows(logits, sup_rows), sup_ids).mean);
      }
    }

    Var<T> loss = [&] {
      if (cfg.stage == 2) {
        Var<T> imgs = concat_rows(img_rows);
        Var<T> txts = concat_rows(txt_rows);
        return siglip_loss(g, imgs, txts,
                           pb(state.log_tau, state.is_trainable("head")),
                           pb(state.logit_bias, state.is_trainable("head")));
      }
      Var<T> sum = item_losses[0];
      for (size_t i = 1; i < item_losses.size(); ++i)
        sum = add(sum, item_losses[i]);
      return scale(sum, T(1) / T(item_losses.size()));
    }();

    g.backward(loss);
    for_each_param(state, [&](const char* comp, const std::string& name,
                              Tensor<T>& tensor) {
      if (!state.is_trainable(comp)) return;
      auto bound = pb.bound(tensor);
      if (!bound) return;
      opt.apply(std::string(comp) + "/" + name, tensor, g.grad_of(*bound),
                double(lr));
    });

    StepMetrics m;
    m.step = step + 1;
    m.loss = double(loss.value().item());
    m.lr = lr;
    m.res = res;
    m.ctx = ctx;
    result.metrics.push_back(m);
    if (hooks.on_step) hooks.on_step(m);
    if (result.early_stopped) break;
  }
  return result;
}

}  // namespace forge
