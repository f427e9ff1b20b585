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

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/common.hpp"
#include "forge/regions.hpp"

namespace forge {

using ojson = nlohmann::ordered_json;

// A caption with the model that produced it.
struct Caption {
  std::string text;
  std::string source_model;
};

// Image-statistics block populated at ingestion; consumed by quality rules.
struct QualityStats {
  double blur_score = 0.0;        // variance of the 3x3 Laplacian on grayscale
  double mean_luma = 0.0;         // [0,1]
  double mean_saturation = 0.0;   // [0,1], HSV S averaged over pixels
};

// One dataset entry. Records carry metadata only — pixel access goes through
// the rendering/decoding layer keyed by image_id — so curation over millions
// of rows never touches rasters.
struct ManifestRecord {
  std::string image_id;
  int width = 0;
  int height = 0;
  uint64_t phash = 0;  // 64-bit perceptual hash; serialized as 16 hex chars
  std::vector<Caption> captions;
  std::vector<RegionAnnotation> regions;
  std::optional<QualityStats> quality;
};

namespace detail {

inline std::string phash_to_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[size_t(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return s;
}

inline uint64_t phash_from_hex(const std::string& s) {
  FORGE_CHECK(s.size() == 16, "phash: expected 16 hex chars, got \"", s, "\"");
  uint64_t h = 0;
  for (const char c : s) {
    h <<= 4;
    if (c >= '0' && c <= '9') h |= uint64_t(c - '0');
    else if (c >= 'a' && c <= 'f') h |= uint64_t(c - 'a' + 10);
    else if (c >= 'A' && c <= 'F') h |= uint64_t(c - 'A' + 10);
    else throw Error(format_msg("phash: bad hex char '", c, "'"));
  }
  return h;
}

}  // namespace detail

inline ojson region_to_json(const RegionAnnotation& r) {
  ojson j;
  j["box"] = {r.box.x1, r.box.y1, r.box.x2, r.box.y2};
  j["label"] = r.label;
  j["caption"] = r.caption;
  j["confidence"] = r.confidence;
  j["kind"] = region_kind_name(r.kind);
  return j;
}

inline RegionAnnotation region_from_json(const ojson& j) {
  RegionAnnotation r;
  const auto& b = j.at("box");
  FORGE_CHECK(b.is_array() && b.size() == 4, "region: box must have 4 coords");
  r.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
              b[3].get<double>()};
  r.label = j.at("label").get<std::string>();
  r.caption = j.at("caption").get<std::string>();
  r.confidence = j.at("confidence").get<double>();
  r.kind = region_kind_from(j.at("kind").get<std::string>());
  return r;
}

inline ojson record_to_json(const ManifestRecord& rec) {
  ojson j;
  j["image_id"] = rec.image_id;
  j["width"] = rec.width;
  j["height"] = rec.height;
  j["phash"] = detail::phash_to_hex(rec.phash);
  ojson caps = ojson::array();
  for (const auto& c : rec.captions)
    caps.push_back(ojson{{"text", c.text}, {"source_model", c.source_model}});
  j["captions"] = std::move(caps);
  ojson regs = ojson::array();
  for (const auto& r : rec.regions) regs.push_back(region_to_json(r));
  j["regions"] = std::move(regs);
  if (rec.quality) {
    j["quality"] = ojson{{"blur_score", rec.quality->blur_score},
                         {"mean_luma", rec.quality->mean_luma},
                         {"mean_saturation", rec.quality->mean_saturation}};
  }
  return j;
}

inline ManifestRecord record_from_json(const ojson& j) {
  ManifestRecord rec;
  rec.image_id = j.at("image_id").get<std::string>();
  rec.width = j.at("width").get<int>();
  rec.height = j.at("height").get<int>();
  rec.phash = detail::phash_from_hex(j.at("phash").get<std::string>());
  for (const auto& c : j.at("captions"))
    rec.captions.push_back(Caption{c.at("text").get<std::string>(),
                                   c.at("source_model").get<std::string>()});
  for (const auto& r : j.at("regions")) rec.regions.push_back(region_from_json(r));
  if (j.contains("quality")) {
    const auto& q = j.at("quality");
    rec.quality = QualityStats{q.at("blur_score").get<double>(),
                               q.at("mean_luma").get<double>(),
                               q.at("mean_saturation").get<double>()};
  }
  return rec;
}

// One JSON object per line; key order and float formatting are fixed, so a
// write -> read -> write round trip is byte-identical.
inline std::string manifest_to_jsonl(const std::vector<ManifestRecord>& recs) {
  std::string out;
  for (const auto& r : recs) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<ManifestRecord> manifest_from_jsonl(const std::string& text) {
  std::vector<ManifestRecord> recs;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const std::exception& e) {
      throw Error(format_msg("manifest line ", lineno, ": ", e.what()));
    }
    try {
      recs.push_back(record_from_json(j));
    } catch (const std::exception& e) {
      throw Error(format_msg("manifest line ", lineno, ": ", e.what()));
    }
  }
  return recs;
}

inline std::vector<ManifestRecord> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FORGE_CHECK(in.good(), "cannot open manifest \"", path, "\"");
  std::ostringstream ss;
  ss << in.rdbuf();
  return manifest_from_jsonl(ss.str());
}

inline void save_manifest(const std::vector<ManifestRecord>& recs,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  FORGE_CHECK(out.good(), "cannot write manifest \"", path, "\"");
  out << manifest_to_jsonl(recs);
  FORGE_CHECK(out.good(), "failed writing manifest \"", path, "\"");
}

}  // namespace forge
