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
// Procedural corpora with exact gold labels. Every pixel is a deterministic
// function of the manifest record, so training and evaluation can re-render
// images on demand at any resolution cap and still agree bit-for-bit.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "forge/curriculum.hpp"
#include "forge/curation.hpp"
#include "forge/image.hpp"
#include "forge/manifest.hpp"
#include "forge/patching.hpp"
#include "forge/rng.hpp"

namespace forge {

namespace toy {

inline const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names = {"red", "green", "blue",
                                                 "yellow"};
  return names;
}

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names = {"circle", "square",
                                                 "triangle", "cross"};
  return names;
}

inline const std::vector<std::string>& position_names() {
  static const std::vector<std::string> names = {
      "top left", "top right", "bottom left", "bottom right"};
  return names;
}

inline std::array<double, 3> color_rgb(std::string_view name) {
  if (name == "red") return {0.85, 0.10, 0.10};
  if (name == "green") return {0.10, 0.70, 0.15};
  if (name == "blue") return {0.15, 0.20, 0.85};
  if (name == "yellow") return {0.90, 0.85, 0.10};
  // Unknown labels get a stable pseudo-color from their hash.
  Rng rng(Rng(11).substream(name).next_u64());
  return {0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform(),
          0.2 + 0.6 * rng.uniform()};
}

// True when (x, y) lies inside the named glyph within the box.
inline bool inside_glyph(std::string_view shape, double x, double y,
                         const Box& b) {
  const double cx = (b.x1 + b.x2) / 2.0, cy = (b.y1 + b.y2) / 2.0;
  const double hw = b.width() / 2.0, hh = b.height() / 2.0;
  if (shape == "square") return true;  // the full box
  if (shape == "circle") {
    const double dx = (x - cx) / hw, dy = (y - cy) / hh;
    return dx * dx + dy * dy <= 1.0;
  }
  if (shape == "triangle") {
    const double t = (y - b.y1) / (b.y2 - b.y1);  // 0 at apex row
    return std::abs(x - cx) <= t * hw;
  }
  if (shape == "cross") {
    return std::abs(x - cx) <= hw / 3.0 || std::abs(y - cy) <= hh / 3.0;
  }
  return true;
}

}  // namespace toy

// Draw a record at its native size capped to max_side: light background,
// id-seeded faint noise, one glyph per region (filled with the color named
// in the region caption when present), and stripe patterns for transcript
// regions. Deterministic in (record, max_side).
inline ImageTensor render_record(const ManifestRecord& rec, int max_side) {
  FORGE_CHECK(rec.width > 0 && rec.height > 0, "render_record: record \"",
              rec.image_id, "\" has size ", rec.width, "x", rec.height);
  FORGE_CHECK(max_side >= kGridMultiple && max_side % kGridMultiple == 0,
              "render_record: max_side ", max_side);
  const auto [w, h] =
      snap_resolution(int(rec.width), int(rec.height), kGridMultiple,
                      max_side);
  ImageTensor img(h, w);
  // Corner-anchored lighting: everything dims toward the bottom right, so
  // content keeps a trace of where it sits even after features are pooled
  // spatially.
  const auto light = [w, h](double x, double y) {
    return 1.0 - 0.5 * 0.5 * ((x + 0.5) / double(w) + (y + 0.5) / double(h));
  };
  Rng noise(Rng(0xf0a9).substream(rec.image_id).next_u64());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double base =
          0.88 * light(x, y) + 0.04 * (noise.uniform() - 0.5);
      double* px = img.pixel(y, x);
      px[0] = px[1] = px[2] = base;
    }
  const double sx = double(w) / double(rec.width);
  const double sy = double(h) / double(rec.height);
  for (const RegionAnnotation& region : rec.regions) {
    const Box b{region.box.x1 * sx, region.box.y1 * sy, region.box.x2 * sx,
                region.box.y2 * sy};
    if (!b.valid()) continue;
    // First caption word naming a color wins; otherwise hash the caption.
    std::array<double, 3> rgb = toy::color_rgb(region.caption);
    for (const std::string& color : toy::color_names())
      if (region.caption.find(color) != std::string::npos) {
        rgb = toy::color_rgb(color);
        break;
      }
    std::string shape = region.label;
    const bool stripes = region.kind != RegionKind::General;
    const int y_lo = std::max(0, int(std::floor(b.y1)));
    const int y_hi = std::min(h - 1, int(std::ceil(b.y2)));
    const int x_lo = std::max(0, int(std::floor(b.x1)));
    const int x_hi = std::min(w - 1, int(std::ceil(b.x2)));
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        const double fx = x + 0.5, fy = y + 0.5;
        if (fx < b.x1 || fx > b.x2 || fy < b.y1 || fy > b.y2) continue;
        if (stripes) {
          // Alternating dark rows stand in for printed lines.
          const bool dark = ((y - y_lo) / 2) % 2 == 0;
          double* px = img.pixel(y, x);
          const double v = (dark ? 0.15 : 0.95) * light(fx, fy);
          px[0] = px[1] = px[2] = v;
        } else if (toy::inside_glyph(shape, fx, fy, b)) {
          double* px = img.pixel(y, x);
          px[0] = rgb[0] * light(fx, fy);
          px[1] = rgb[1] * light(fx, fy);
          px[2] = rgb[2] * light(fx, fy);
        }
      }
  }
  return img;
}

inline RecordRenderer toy_renderer() {
  return [](const ManifestRecord& rec, int max_side) {
    return render_record(rec, max_side);
  };
}

// 4 colors x 4 shapes x 4 quadrants = 64 records. Each carries one global
// caption ("a red circle in the top left") and one region with the exact
// quadrant box, giving retrieval and grounding verifiable gold labels.
inline std::vector<ManifestRecord> make_shape_corpus() {
  std::vector<ManifestRecord> out;
  const int side = 56, half = side / 2;
  for (const std::string& color : toy::color_names())
    for (const std::string& shape : toy::shape_names())
      for (size_t q = 0; q < toy::position_names().size(); ++q) {
        const std::string& pos = toy::position_names()[q];
        ManifestRecord rec;
        rec.image_id = "shape-" + color + "-" + shape + "-" +
                       std::to_string(q);
        rec.width = side;
        rec.height = side;
        Caption cap;
        cap.text = "a " + color + " " + shape + " in the " + pos;
        cap.source_model = "toy";
        rec.captions.push_back(cap);
        RegionAnnotation region;
        const int qx = (q % 2) ? half : 0;
        const int qy = (q / 2) ? half : 0;
        region.box = Box{double(qx + 4), double(qy + 4), double(qx + half - 4),
                         double(qy + half - 4)};
        region.label = shape;
        region.caption = "a " + color + " " + shape;
        region.confidence = 0.9;
        region.kind = RegionKind::General;
        rec.regions.push_back(region);
        rec.phash = phash64(render_record(rec, side));
        out.push_back(std::move(rec));
      }
  return out;
}

// ---------------------------------------------------------------------------
// Sample manifest: a 100-record corpus that exercises every curation rule.
// ---------------------------------------------------------------------------

namespace toy {

inline ManifestRecord base_record(const std::string& id, uint64_t width,
                                  uint64_t height) {
  ManifestRecord rec;
  rec.image_id = id;
  rec.width = width;
  rec.height = height;
  return rec;
}

inline Caption make_caption(std::string text) {
  Caption c;
  c.text = std::move(text);
  c.source_model = "toy";
  return c;
}

inline RegionAnnotation make_region(const Box& box, std::string label,
                                    std::string caption, double confidence,
                                    RegionKind kind = RegionKind::General) {
  RegionAnnotation r;
  r.box = box;
  r.label = std::move(label);
  r.caption = std::move(caption);
  r.confidence = confidence;
  r.kind = kind;
  return r;
}

// Measure the stored quality metadata and hash from an actual render, so
// well-formed records carry realistic, reproducible values.
inline void stamp_from_render(ManifestRecord& rec) {
  const ImageTensor img = render_record(rec, 448);
  rec.phash = phash64(img);
  rec.quality = quality_metrics(img);
}

}  // namespace toy

// Deterministic 100-record manifest covering keepers plus at least one
// trigger for every drop rule: short side, aspect ratio, blur, luma (both
// ends), saturation, exact and near duplicates, null and repetitive
// captions, region confidence, region area, and overlapping regions that
// non-maximum suppression must merge. A deliberately over-represented
// "tree" label exercises stratified downsampling.
inline std::vector<ManifestRecord> make_sample_manifest() {
  using toy::base_record;
  using toy::make_caption;
  using toy::make_region;
  std::vector<ManifestRecord> out;
  Rng rng(4242);
  const std::vector<std::string> things = {"tree",  "car",   "house",
                                           "boat",  "tower", "bridge",
                                           "horse", "sign"};

  // 62 keepers: stage-3 worthy sizes, clean captions, confident regions.
  // "tree" regions appear on every other keeper so one label dominates.
  for (int i = 0; i < 62; ++i) {
    const uint64_t w = 448 + 28 * rng.below(20);
    const uint64_t h = 448 + 28 * rng.below(20);
    ManifestRecord rec =
        base_record("sample-" + std::to_string(out.size()), w, h);
    const std::string& thing = things[size_t(rng.below(things.size()))];
    const std::string& color =
        toy::color_names()[size_t(rng.below(toy::color_names().size()))];
    rec.captions.push_back(
        make_caption("a " + color + " " + thing + " near the water"));
    const double bw = 0.2 * w + rng.uniform() * 0.3 * w;
    const double bh = 0.2 * h + rng.uniform() * 0.3 * h;
    const double bx = rng.uniform() * (w - bw);
    const double by = rng.uniform() * (h - bh);
    rec.regions.push_back(make_region(Box{bx, by, bx + bw, by + bh}, thing,
                                      "a " + color + " " + thing,
                                      0.35 + 0.6 * rng.uniform()));
    if (i % 2 == 0) {
      const double tw = std::max(0.15 * w, 0.11 * w + rng.uniform() * 0.1 * w);
      const double tx = rng.uniform() * (w - tw);
      rec.regions.push_back(make_region(Box{tx, 0.1 * h, tx + tw, 0.45 * h},
                                        "tree", "a green tree", 0.8));
    }
    toy::stamp_from_render(rec);
    out.push_back(std::move(rec));
  }

  auto reject = [&](uint64_t w, uint64_t h, const std::string& caption) {
    ManifestRecord rec =
        base_record("sample-" + std::to_string(out.size()), w, h);
    if (!caption.empty()) rec.captions.push_back(make_caption(caption));
    toy::stamp_from_render(rec);
    return rec;
  };

  // Geometry rejects: short side below 224 (all stages) and below 448 or
  // aspect outside [1/3, 3] (stage 3).
  out.push_back(reject(200, 600, "a thin strip of beach"));
  out.push_back(reject(180, 180, "a tiny icon"));
  out.push_back(reject(300, 560, "a mid-sized photo"));
  out.push_back(reject(2016, 560, "a panorama of hills"));
  out.push_back(reject(560, 2016, "a falling ribbon"));

  // Quality rejects: stamped metadata forced past each threshold.
  {
    ManifestRecord rec = reject(560, 560, "a foggy field");
    rec.quality->blur_score = 1e-6;
    out.push_back(std::move(rec));
    rec = reject(560, 560, "a night sky");
    rec.quality->mean_luma = 0.02;
    out.push_back(std::move(rec));
    rec = reject(560, 560, "an overexposed window");
    rec.quality->mean_luma = 0.97;
    out.push_back(std::move(rec));
    rec = reject(560, 560, "a neon poster");
    rec.quality->mean_saturation = 0.93;
    out.push_back(std::move(rec));
  }

  // Duplicates: exact hash copies and near misses within a few bits.
  {
    ManifestRecord rec = reject(588, 448, "a copied postcard");
    rec.phash = out[0].phash;
    out.push_back(std::move(rec));
    rec = reject(616, 476, "a copied postcard again");
    rec.phash = out[0].phash;
    out.push_back(std::move(rec));
    rec = reject(560, 560, "a slightly recompressed photo");
    rec.phash = out[1].phash ^ 0x3;  // two bits away
    out.push_back(std::move(rec));
  }

  // Caption rejects: no caption at all, null-equivalent whitespace, and a
  // caption dominated by one repeated 3-gram. Each gets a distinct marker
  // region so the renders (and hashes) cannot collide with each other.
  {
    const std::vector<std::string> texts = {
        "", "   ",
        "the cat the cat the cat the cat the cat sits on the cat"};
    for (size_t i = 0; i < texts.size(); ++i) {
      ManifestRecord rec = base_record(
          "sample-" + std::to_string(out.size()), 560 + 28 * i, 560);
      if (!texts[i].empty()) rec.captions.push_back(make_caption(texts[i]));
      rec.regions.push_back(make_region(
          Box{60.0 + 90.0 * i, 80, 220.0 + 90.0 * i, 300},
          "marker", "a " + toy::color_names()[i] + " marker", 0.9));
      toy::stamp_from_render(rec);
      out.push_back(std::move(rec));
    }
  }

  // Region-rule triggers on otherwise healthy records.
  {
    ManifestRecord rec = base_record(
        "sample-" + std::to_string(out.size()), 560, 560);
    rec.captions.push_back(make_caption("a hesitant detector output"));
    rec.regions.push_back(
        make_region(Box{100, 100, 300, 300}, "ghost", "a faint ghost", 0.29));
    toy::stamp_from_render(rec);
    out.push_back(std::move(rec));

    rec = base_record("sample-" + std::to_string(out.size()), 560, 560);
    rec.captions.push_back(make_caption("a speck on a wall"));
    rec.regions.push_back(
        make_region(Box{10, 10, 40, 40}, "speck", "a tiny speck", 0.9));
    toy::stamp_from_render(rec);
    out.push_back(std::move(rec));

    rec = base_record("sample-" + std::to_string(out.size()), 560, 560);
    rec.captions.push_back(make_caption("two boxes on one boat"));
    rec.regions.push_back(
        make_region(Box{100, 100, 400, 400}, "boat", "a long boat", 0.95));
    rec.regions.push_back(make_region(Box{110, 110, 400, 400}, "boat",
                                      "the same long boat", 0.60));
    toy::stamp_from_render(rec);
    out.push_back(std::move(rec));
  }

  // Transcript-style regions so both reading directions appear.
  for (int i = 0; i < 2; ++i) {
    ManifestRecord rec = base_record(
        "sample-" + std::to_string(out.size()), 560, 784);
    rec.captions.push_back(make_caption("a page of printed text"));
    rec.regions.push_back(make_region(Box{56, 56 + 200.0 * i, 504, 256 + 200.0 * i},
                                      "paragraph", "TOTAL DUE 42",
                                      0.85, RegionKind::DocOcr));
    toy::stamp_from_render(rec);
    out.push_back(std::move(rec));
  }

  while (out.size() < 100) {
    const size_t i = out.size();
    ManifestRecord rec = base_record(
        "sample-" + std::to_string(i), 532 + 28 * (i % 3), 532);
    const std::string& thing = things[i % things.size()];
    const std::string& color = toy::color_names()[i % 4];
    rec.captions.push_back(make_caption("a quiet " + color + " " + thing +
                                        " at dusk"));
    rec.regions.push_back(make_region(
        Box{80.0 + 10.0 * double(i % 7), 100, 360.0 + 10.0 * double(i % 7),
            380},
        thing, "a quiet " + color + " " + thing, 0.7));
    toy::stamp_from_render(rec);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace forge
