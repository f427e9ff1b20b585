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
// Whole-run configuration: model geometry, the three stage budgets, curation
// rules, and output paths, loaded from a strict JSON file. Unknown keys are
// rejected with the dotted path of the offender, and the FORGE_SEED
// environment variable overrides the configured seed.

#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "forge/common.hpp"
#include "forge/curriculum.hpp"
#include "forge/curation.hpp"
#include "forge/manifest.hpp"
#include "forge/models.hpp"

namespace forge {

namespace detail {

// A view over one JSON object that tracks which keys were consumed so the
// leftovers can be reported as unknown.
class StrictView {
 public:
  StrictView(const ojson& j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string sub(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const ojson& require(const std::string& key) {
    const ojson* v = optional(key);
    if (v == nullptr) throw ConfigError(sub(key), "missing required field");
    return *v;
  }

  const ojson* optional(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &it.value();
  }

  // Call after all known keys were consumed.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(sub(it.key()), "unknown field");
  }

 private:
  const ojson& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline int as_int(const ojson& j, const std::string& path) {
  if (!j.is_number_integer())
    throw ConfigError(path, "expected an integer");
  return j.get<int>();
}

inline uint64_t as_u64(const ojson& j, const std::string& path) {
  if (!(j.is_number_unsigned() ||
        (j.is_number_integer() && j.get<int64_t>() >= 0)))
    throw ConfigError(path, "expected a non-negative integer");
  return j.get<uint64_t>();
}

inline double as_double(const ojson& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

inline std::string as_string(const ojson& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

inline std::pair<int, int> as_int_pair(const ojson& j,
                                       const std::string& path) {
  if (!j.is_array() || j.size() != 2)
    throw ConfigError(path, "expected an array of two integers");
  return {as_int(j[0], path + "[0]"), as_int(j[1], path + "[1]")};
}

inline std::vector<std::string> as_string_list(const ojson& j,
                                               const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of strings");
  std::vector<std::string> out;
  for (size_t i = 0; i < j.size(); ++i)
    out.push_back(as_string(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline EncoderConfig encoder_from(const ojson& j, const std::string& path) {
  StrictView v(j, path);
  EncoderConfig c;
  if (const ojson* f = v.optional("depth")) c.depth = as_int(*f, v.sub("depth"));
  if (const ojson* f = v.optional("patch")) c.patch = as_int(*f, v.sub("patch"));
  if (const ojson* f = v.optional("hidden"))
    c.hidden = as_int(*f, v.sub("hidden"));
  if (const ojson* f = v.optional("intermediate"))
    c.intermediate = as_int(*f, v.sub("intermediate"));
  if (const ojson* f = v.optional("heads")) c.heads = as_int(*f, v.sub("heads"));
  v.finish();
  return c;
}

inline TextConfig text_from(const ojson& j, const std::string& path) {
  StrictView v(j, path);
  TextConfig c;
  if (const ojson* f = v.optional("depth")) c.depth = as_int(*f, v.sub("depth"));
  if (const ojson* f = v.optional("hidden"))
    c.hidden = as_int(*f, v.sub("hidden"));
  if (const ojson* f = v.optional("intermediate"))
    c.intermediate = as_int(*f, v.sub("intermediate"));
  if (const ojson* f = v.optional("heads")) c.heads = as_int(*f, v.sub("heads"));
  if (const ojson* f = v.optional("vocab")) c.vocab = as_int(*f, v.sub("vocab"));
  v.finish();
  return c;
}

inline DecoderConfig decoder_from(const ojson& j, const std::string& path) {
  StrictView v(j, path);
  DecoderConfig c;
  if (const ojson* f = v.optional("depth")) c.depth = as_int(*f, v.sub("depth"));
  if (const ojson* f = v.optional("hidden"))
    c.hidden = as_int(*f, v.sub("hidden"));
  if (const ojson* f = v.optional("intermediate"))
    c.intermediate = as_int(*f, v.sub("intermediate"));
  if (const ojson* f = v.optional("heads")) c.heads = as_int(*f, v.sub("heads"));
  if (const ojson* f = v.optional("vocab")) c.vocab = as_int(*f, v.sub("vocab"));
  v.finish();
  return c;
}

inline AdamWConfig adamw_from(const ojson& j, const std::string& path) {
  StrictView v(j, path);
  AdamWConfig c;
  if (const ojson* f = v.optional("beta1"))
    c.beta1 = as_double(*f, v.sub("beta1"));
  if (const ojson* f = v.optional("beta2"))
    c.beta2 = as_double(*f, v.sub("beta2"));
  if (const ojson* f = v.optional("eps")) c.eps = as_double(*f, v.sub("eps"));
  if (const ojson* f = v.optional("weight_decay"))
    c.weight_decay = as_double(*f, v.sub("weight_decay"));
  v.finish();
  return c;
}

inline std::vector<std::string> default_trainable(int stage) {
  if (stage == 1) return {"vit"};
  if (stage == 2) return {"vit", "text"};
  return {"vit", "projector", "decoder"};
}

inline StageConfig stage_from(const ojson& j, int stage,
                              const std::string& path) {
  StrictView v(j, path);
  StageConfig c;
  c.stage = stage;
  c.samples_target = as_u64(v.require("samples_target"),
                            v.sub("samples_target"));
  c.batch_size = size_t(as_u64(v.require("batch_size"), v.sub("batch_size")));
  c.max_resolution = as_int(v.require("max_resolution"),
                            v.sub("max_resolution"));
  c.lr_peak = as_double(v.require("lr_peak"), v.sub("lr_peak"));
  c.resolution_schedule = as_int_pair(v.require("resolution_schedule"),
                                      v.sub("resolution_schedule"));
  c.trainable = default_trainable(stage);
  if (const ojson* f = v.optional("trainable"))
    c.trainable = as_string_list(*f, v.sub("trainable"));
  if (stage == 1) {
    c.context_cap_schedule = {0, 0};
    if (const ojson* f = v.optional("context_cap_schedule"))
      c.context_cap_schedule =
          as_int_pair(*f, v.sub("context_cap_schedule"));
  } else {
    c.context_cap_schedule = as_int_pair(v.require("context_cap_schedule"),
                                         v.sub("context_cap_schedule"));
  }
  if (const ojson* f = v.optional("text_unfreeze_fraction"))
    c.text_unfreeze_fraction =
        as_double(*f, v.sub("text_unfreeze_fraction"));
  if (const ojson* f = v.optional("warmup_fraction"))
    c.warmup_fraction = as_double(*f, v.sub("warmup_fraction"));
  if (const ojson* f = v.optional("lr_min_fraction"))
    c.lr_min_fraction = as_double(*f, v.sub("lr_min_fraction"));
  if (const ojson* f = v.optional("mask_ratio"))
    c.mask_ratio = as_double(*f, v.sub("mask_ratio"));
  if (const ojson* f = v.optional("optimizer"))
    c.optimizer = adamw_from(*f, v.sub("optimizer"));
  v.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  return c;
}

inline StageRules rules_from(const ojson& j, StageRules base,
                             const std::string& path) {
  StrictView v(j, path);
  if (const ojson* f = v.optional("min_short_side"))
    base.min_short_side = as_int(*f, v.sub("min_short_side"));
  if (const ojson* f = v.optional("aspect_lo"))
    base.aspect_lo = as_double(*f, v.sub("aspect_lo"));
  if (const ojson* f = v.optional("aspect_hi"))
    base.aspect_hi = as_double(*f, v.sub("aspect_hi"));
  if (const ojson* f = v.optional("require_quality")) {
    if (!f->is_boolean())
      throw ConfigError(v.sub("require_quality"), "expected a boolean");
    base.require_quality = f->get<bool>();
  }
  if (const ojson* f = v.optional("min_blur"))
    base.min_blur = as_double(*f, v.sub("min_blur"));
  if (const ojson* f = v.optional("luma_lo"))
    base.luma_lo = as_double(*f, v.sub("luma_lo"));
  if (const ojson* f = v.optional("luma_hi"))
    base.luma_hi = as_double(*f, v.sub("luma_hi"));
  if (const ojson* f = v.optional("max_saturation"))
    base.max_saturation = as_double(*f, v.sub("max_saturation"));
  if (const ojson* f = v.optional("min_confidence"))
    base.min_confidence = as_double(*f, v.sub("min_confidence"));
  if (const ojson* f = v.optional("min_area_fraction"))
    base.min_area_fraction = as_double(*f, v.sub("min_area_fraction"));
  if (const ojson* f = v.optional("nms_iou"))
    base.nms_iou = as_double(*f, v.sub("nms_iou"));
  v.finish();
  return base;
}

inline StratifyConfig stratify_from(const ojson& j, const std::string& path) {
  StrictView v(j, path);
  StratifyConfig c;
  if (const ojson* f = v.optional("batch_images"))
    c.batch_images = as_double(*f, v.sub("batch_images"));
  if (const ojson* f = v.optional("min_retain"))
    c.min_retain = as_double(*f, v.sub("min_retain"));
  if (const ojson* f = v.optional("cap")) c.cap = as_double(*f, v.sub("cap"));
  if (const ojson* f = v.optional("gamma"))
    c.gamma = as_double(*f, v.sub("gamma"));
  v.finish();
  return c;
}

}  // namespace detail

struct ForgeConfig {
  uint64_t seed = 0;
  EncoderConfig vit;
  TextConfig text;
  DecoderConfig decoder;
  std::map<int, StageConfig> stages;  // keys 1..3
  int curate_stage = 3;               // which rule preset curation applies
  CurateConfig curate;                // seed mirrors the root seed
  std::string data_path = "data/sample_manifest.jsonl";
  std::string out_dir = "out";

  const StageConfig& stage(int n) const {
    auto it = stages.find(n);
    FORGE_CHECK(it != stages.end(), "config: stage ", n, " not configured");
    return it->second;
  }

  void validate() const {
    try {
      vit.validate();
    } catch (const Error& e) {
      throw ConfigError("model.vit", e.what());
    }
    try {
      text.validate();
    } catch (const Error& e) {
      throw ConfigError("model.text", e.what());
    }
    try {
      decoder.validate();
    } catch (const Error& e) {
      throw ConfigError("model.decoder", e.what());
    }
    if (text.hidden != vit.hidden)
      throw ConfigError("model.text.hidden",
                        "text tower width must match the image tower");
    for (const auto& [n, cfg] : stages) {
      try {
        cfg.validate();
      } catch (const Error& e) {
        throw ConfigError("stages." + std::to_string(n), e.what());
      }
    }
    if (curate_stage < 1 || curate_stage > 3)
      throw ConfigError("curate.stage", "must be 1, 2, or 3");
  }
};

inline ForgeConfig config_from_json(const ojson& j) {
  detail::StrictView root(j, "");
  ForgeConfig cfg;
  cfg.seed = detail::as_u64(root.require("seed"), "seed");

  {
    detail::StrictView model(root.require("model"), "model");
    cfg.vit = detail::encoder_from(model.require("vit"), "model.vit");
    cfg.text = detail::text_from(model.require("text"), "model.text");
    cfg.decoder =
        detail::decoder_from(model.require("decoder"), "model.decoder");
    model.finish();
  }

  {
    const ojson& stages = root.require("stages");
    detail::StrictView sv(stages, "stages");
    for (int n : {1, 2, 3}) {
      const std::string key = std::to_string(n);
      const ojson* s = sv.optional(key);
      if (s != nullptr)
        cfg.stages.emplace(n, detail::stage_from(*s, n, "stages." + key));
    }
    sv.finish();
    if (cfg.stages.empty())
      throw ConfigError("stages", "at least one stage must be configured");
  }

  if (const ojson* c = root.optional("curate")) {
    detail::StrictView cv(*c, "curate");
    if (const ojson* f = cv.optional("stage"))
      cfg.curate_stage = detail::as_int(*f, "curate.stage");
    if (cfg.curate_stage < 1 || cfg.curate_stage > 3)
      throw ConfigError("curate.stage", "must be 1, 2, or 3");
    cfg.curate.rules = StageRules::for_stage(cfg.curate_stage);
    if (const ojson* f = cv.optional("rules"))
      cfg.curate.rules =
          detail::rules_from(*f, cfg.curate.rules, "curate.rules");
    if (const ojson* f = cv.optional("hamming_threshold")) {
      cfg.curate.hamming_threshold =
          detail::as_int(*f, "curate.hamming_threshold");
      if (cfg.curate.hamming_threshold < 0 ||
          cfg.curate.hamming_threshold > 64)
        throw ConfigError("curate.hamming_threshold", "must be in [0, 64]");
    }
    if (const ojson* f = cv.optional("stratify"))
      cfg.curate.stratify = detail::stratify_from(*f, "curate.stratify");
    cv.finish();
  } else {
    cfg.curate.rules = StageRules::for_stage(cfg.curate_stage);
  }

  if (const ojson* p = root.optional("paths")) {
    detail::StrictView pv(*p, "paths");
    if (const ojson* f = pv.optional("data"))
      cfg.data_path = detail::as_string(*f, "paths.data");
    if (const ojson* f = pv.optional("out"))
      cfg.out_dir = detail::as_string(*f, "paths.out");
    pv.finish();
  }

  root.finish();
  cfg.curate.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

// Loads a config file, then lets the FORGE_SEED environment variable
// override the configured seed (all sub-streams derive from it).
inline ForgeConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ConfigError(path, "cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  ojson j;
  try {
    j = ojson::parse(ss.str());
  } catch (const std::exception& e) {
    throw ConfigError(path, std::string("invalid json: ") + e.what());
  }
  ForgeConfig cfg = config_from_json(j);
  if (const char* env = std::getenv("FORGE_SEED")) {
    const std::string text(env);
    try {
      size_t used = 0;
      const unsigned long long v = std::stoull(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      cfg.seed = uint64_t(v);
      cfg.curate.seed = cfg.seed;
    } catch (const std::exception&) {
      throw ConfigError("seed", "FORGE_SEED is not a valid integer: \"" +
                                    text + "\"");
    }
  }
  return cfg;
}

}  // namespace forge
