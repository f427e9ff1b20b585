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
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "forge/common.hpp"
#include "forge/image.hpp"
#include "forge/manifest.hpp"
#include "forge/regions.hpp"
#include "forge/rng.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Perceptual hash: 64-bit DCT hash of the 32x32 grayscale thumbnail.
// Bits are the top-left 8x8 block of DCT-II coefficients thresholded at
// their median, packed row-major, MSB first.
// ---------------------------------------------------------------------------

namespace detail {

// Unnormalized DCT-II along each row of an n x n buffer, in place semantics
// via an output copy. O(n^2) per row is plenty at n = 32.
inline void dct2_rows(std::vector<double>& a, int n) {
  std::vector<double> out(size_t(n) * n);
  const double pi = 3.14159265358979323846;
  for (int r = 0; r < n; ++r) {
    for (int u = 0; u < n; ++u) {
      double acc = 0.0;
      for (int x = 0; x < n; ++x)
        acc += a[size_t(r) * n + x] * std::cos(pi * (x + 0.5) * u / n);
      out[size_t(r) * n + u] = acc;
    }
  }
  a = std::move(out);
}

inline void transpose_square(std::vector<double>& a, int n) {
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c)
      std::swap(a[size_t(r) * n + c], a[size_t(c) * n + r]);
}

}  // namespace detail

inline uint64_t phash64(const ImageTensor& img) {
  constexpr int kThumb = 32;
  constexpr int kBlock = 8;
  ImageTensor small = resize_bilinear(img, kThumb, kThumb);
  std::vector<double> g = to_grayscale(small);
  detail::dct2_rows(g, kThumb);
  detail::transpose_square(g, kThumb);
  detail::dct2_rows(g, kThumb);
  detail::transpose_square(g, kThumb);
  double block[kBlock * kBlock];
  for (int u = 0; u < kBlock; ++u)
    for (int v = 0; v < kBlock; ++v)
      block[u * kBlock + v] = g[size_t(u) * kThumb + v];
  double sorted[kBlock * kBlock];
  std::copy(block, block + kBlock * kBlock, sorted);
  std::sort(sorted, sorted + kBlock * kBlock);
  const double median = 0.5 * (sorted[31] + sorted[32]);
  uint64_t hash = 0;
  for (int i = 0; i < kBlock * kBlock; ++i)
    if (block[i] > median) hash |= uint64_t(1) << (63 - i);
  return hash;
}

inline int hamming_distance(uint64_t a, uint64_t b) {
  uint64_t x = a ^ b;
  int n = 0;
  while (x) {
    x &= x - 1;
    ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Quality statistics used by the image filter.
// ---------------------------------------------------------------------------

// blur_score: population variance of the 3x3 Laplacian [[0,1,0],[1,-4,1],
// [0,1,0]] applied to grayscale interior pixels (sharp images score high).
// mean_luma: mean Rec.601 gray. mean_saturation: mean HSV saturation.
inline QualityStats quality_metrics(const ImageTensor& img) {
  QualityStats q;
  const std::vector<double> g = to_grayscale(img);
  const int h = img.height, w = img.width;
  double luma_sum = 0.0;
  for (double v : g) luma_sum += v;
  q.mean_luma = g.empty() ? 0.0 : luma_sum / double(g.size());

  double sat_sum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double* p = img.pixel(y, x);
      const double mx = std::max({p[0], p[1], p[2]});
      const double mn = std::min({p[0], p[1], p[2]});
      sat_sum += mx > 0.0 ? (mx - mn) / mx : 0.0;
    }
  q.mean_saturation = (h * w > 0) ? sat_sum / double(h * w) : 0.0;

  if (h >= 3 && w >= 3) {
    double sum = 0.0, sum2 = 0.0;
    const long long count = (long long)(h - 2) * (w - 2);
    for (int y = 1; y + 1 < h; ++y)
      for (int x = 1; x + 1 < w; ++x) {
        const double lap = g[size_t(y - 1) * w + x] + g[size_t(y + 1) * w + x] +
                           g[size_t(y) * w + x - 1] + g[size_t(y) * w + x + 1] -
                           4.0 * g[size_t(y) * w + x];
        sum += lap;
        sum2 += lap * lap;
      }
    const double mean = sum / double(count);
    q.blur_score = sum2 / double(count) - mean * mean;
    if (q.blur_score < 0.0) q.blur_score = 0.0;  // guard fp cancellation
  }
  return q;
}

// ---------------------------------------------------------------------------
// Per-stage curation rules.
// ---------------------------------------------------------------------------

struct StageRules {
  int min_short_side = 0;
  double aspect_lo = 0.0;  // width/height, inclusive bounds
  double aspect_hi = std::numeric_limits<double>::infinity();
  bool require_quality = false;
  // Quality thresholds; consulted only when require_quality is set. No
  // canonical published values exist, so they stay configurable; defaults
  // aim to reject only clear outliers.
  double min_blur = 1e-4;
  double luma_lo = 0.08;
  double luma_hi = 0.92;
  double max_saturation = 0.85;
  // Region post-processing.
  double min_confidence = 0.3;
  double min_area_fraction = 0.01;
  double nms_iou = 0.7;

  // Pretraining stages (1 and 2) gate only on a 224px short side; the
  // fine-grained stage (3) additionally bounds aspect ratio and enables the
  // quality heuristics.
  static StageRules for_stage(int stage) {
    FORGE_CHECK(stage >= 1 && stage <= 3, "StageRules: stage must be 1..3, got ",
                stage);
    StageRules r;
    if (stage < 3) {
      r.min_short_side = 224;
    } else {
      r.min_short_side = 448;
      r.aspect_lo = 1.0 / 3.0;
      r.aspect_hi = 3.0;
      r.require_quality = true;
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// Filters. Verdicts carry a machine-readable reason code.
// ---------------------------------------------------------------------------

struct Verdict {
  bool keep = true;
  std::string reason;  // empty when keep

  static Verdict ok() { return Verdict{}; }
  static Verdict fail(std::string why) { return Verdict{false, std::move(why)}; }
};

// Reason codes: short_side | aspect | blur | luma | saturation.
inline Verdict filter_image(const ManifestRecord& rec, const StageRules& rules) {
  FORGE_CHECK(rec.width >= 1 && rec.height >= 1, "filter_image: record \"",
              rec.image_id, "\" has degenerate size ", rec.width, "x",
              rec.height);
  if (std::min(rec.width, rec.height) < rules.min_short_side)
    return Verdict::fail("short_side");
  const double aspect = double(rec.width) / double(rec.height);
  if (aspect < rules.aspect_lo || aspect > rules.aspect_hi)
    return Verdict::fail("aspect");
  if (rules.require_quality) {
    FORGE_CHECK(rec.quality.has_value(), "filter_image: record \"",
                rec.image_id, "\" lacks quality stats required by the rules");
    const QualityStats& q = *rec.quality;
    if (q.blur_score < rules.min_blur) return Verdict::fail("blur");
    if (q.mean_luma < rules.luma_lo || q.mean_luma > rules.luma_hi)
      return Verdict::fail("luma");
    if (q.mean_saturation > rules.max_saturation)
      return Verdict::fail("saturation");
  }
  return Verdict::ok();
}

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// Reason codes: null | repetition. A caption is repetitive when its most
// frequent word 3-gram repeats (count >= 2) and accounts for more than 30%
// of all 3-grams; the repeat requirement keeps short unique captions, whose
// single 3-gram trivially exceeds any ratio, out of the reject bin.
inline Verdict filter_caption(const std::string& text) {
  const std::vector<std::string> words = split_words(text);
  if (words.empty()) return Verdict::fail("null");
  if (words.size() >= 3) {
    std::map<std::string, int> grams;
    int best = 0;
    const int total = int(words.size()) - 2;
    for (size_t i = 0; i + 2 < words.size(); ++i) {
      const std::string key = words[i] + '\x1f' + words[i + 1] + '\x1f' +
                              words[i + 2];
      best = std::max(best, ++grams[key]);
    }
    if (best >= 2 && double(best) > 0.30 * double(total))
      return Verdict::fail("repetition");
  }
  return Verdict::ok();
}

// ---------------------------------------------------------------------------
// Deduplication by perceptual hash. First occurrence wins; order-stable.
// ---------------------------------------------------------------------------

struct DedupResult {
  std::vector<ManifestRecord> unique;
  size_t duplicates = 0;
};

inline DedupResult dedup(const std::vector<ManifestRecord>& recs,
                         int hamming_threshold = 0) {
  FORGE_CHECK(hamming_threshold >= 0 && hamming_threshold <= 64,
              "dedup: hamming threshold must be in [0,64], got ",
              hamming_threshold);
  DedupResult out;
  std::vector<uint64_t> kept_hashes;
  for (const auto& rec : recs) {
    bool dup = false;
    for (uint64_t h : kept_hashes)
      if (hamming_distance(h, rec.phash) <= hamming_threshold) {
        dup = true;
        break;
      }
    if (dup) {
      ++out.duplicates;
    } else {
      kept_hashes.push_back(rec.phash);
      out.unique.push_back(rec);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Region post-processing: confidence gate, relative-area gate, then
// class-agnostic NMS. Survivors keep their input order.
// ---------------------------------------------------------------------------

inline std::vector<RegionAnnotation> region_post(
    const std::vector<RegionAnnotation>& regions, const StageRules& rules,
    int image_width, int image_height) {
  FORGE_CHECK(image_width >= 1 && image_height >= 1,
              "region_post: degenerate image size ", image_width, "x",
              image_height);
  const double image_area = double(image_width) * double(image_height);
  std::vector<RegionAnnotation> pass;
  for (const auto& r : regions) {
    if (r.confidence < rules.min_confidence) continue;
    if (r.box.area() / image_area < rules.min_area_fraction) continue;
    pass.push_back(r);
  }
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(pass.size());
  for (const auto& r : pass) {
    boxes.push_back(r.box);
    scores.push_back(r.confidence);
  }
  std::vector<size_t> keep = nms(boxes, scores, rules.nms_iou);
  std::sort(keep.begin(), keep.end());
  std::vector<RegionAnnotation> out;
  out.reserve(keep.size());
  for (size_t i : keep) out.push_back(pass[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Stratified per-label sampling across an image batch.
// ---------------------------------------------------------------------------

struct StratifyConfig {
  // Reference thresholds are stated against 10M-image batches; they scale
  // linearly with the actual batch size. batch_images <= 0 means "use the
  // number of records passed in".
  double batch_images = 0.0;
  double min_retain = 1000.0;
  double cap = 100000.0;
  double gamma = 1.0;  // proportional-downsampling exponent; 1 = pure cap
};

// Groups every region across the batch by label. Groups smaller than the
// scaled min_retain are kept whole; larger groups keep
// round(n * min(1, cap/n)^gamma) members chosen uniformly at random from a
// per-label seed substream, never more than the scaled cap. Record and
// region order are preserved.
inline std::vector<ManifestRecord> stratified_sample(
    std::vector<ManifestRecord> recs, const StratifyConfig& cfg,
    uint64_t seed) {
  FORGE_CHECK(cfg.min_retain >= 0 && cfg.cap >= cfg.min_retain,
              "stratified_sample: need 0 <= min_retain <= cap, got ",
              cfg.min_retain, " and ", cfg.cap);
  FORGE_CHECK(cfg.gamma > 0.0, "stratified_sample: gamma must be > 0, got ",
              cfg.gamma);
  const double batch =
      cfg.batch_images > 0.0 ? cfg.batch_images : double(recs.size());
  const double scale = batch / 1e7;
  const double eff_min = cfg.min_retain * scale;
  // Floor the scaled cap at one region so tiny batches thin groups rather
  // than erasing them.
  const double eff_cap = std::max(1.0, cfg.cap * scale);

  struct Slot {
    size_t rec;
    size_t idx;
  };
  std::map<std::string, std::vector<Slot>> groups;
  for (size_t ri = 0; ri < recs.size(); ++ri)
    for (size_t bi = 0; bi < recs[ri].regions.size(); ++bi)
      groups[recs[ri].regions[bi].label].push_back(Slot{ri, bi});

  std::vector<std::vector<char>> keep(recs.size());
  for (size_t ri = 0; ri < recs.size(); ++ri)
    keep[ri].assign(recs[ri].regions.size(), 0);

  Rng root(seed);
  for (const auto& [label, slots] : groups) {
    const size_t n = slots.size();
    size_t k = n;
    if (double(n) >= eff_min) {
      const double frac = std::pow(std::min(1.0, eff_cap / double(n)),
                                   cfg.gamma);
      long long want = std::llround(double(n) * frac);
      want = std::min<long long>(want, (long long)std::floor(eff_cap));
      want = std::max<long long>(want, 0);
      k = std::min<size_t>(n, size_t(want));
    }
    if (k == n) {
      for (const Slot& s : slots) keep[s.rec][s.idx] = 1;
    } else if (k > 0) {
      Rng sub = root.substream(label);
      for (size_t pick : sub.sample_without_replacement(n, k))
        keep[slots[pick].rec][slots[pick].idx] = 1;
    }
  }

  for (size_t ri = 0; ri < recs.size(); ++ri) {
    std::vector<RegionAnnotation> kept;
    for (size_t bi = 0; bi < recs[ri].regions.size(); ++bi)
      if (keep[ri][bi]) kept.push_back(recs[ri].regions[bi]);
    recs[ri].regions = std::move(kept);
  }
  return recs;
}

// ---------------------------------------------------------------------------
// Distribution statistics.
// ---------------------------------------------------------------------------

inline int token_length(const std::string& text) {
  return int(split_words(text).size());
}

// Fixed-bin histogram; the last bin absorbs overflow and prints "inf" as its
// upper edge. Values below lo clamp into the first bin.
struct Histogram {
  double lo = 0.0;
  double width = 1.0;
  std::vector<long long> counts;
  long long total = 0;

  Histogram() = default;
  Histogram(double lo_, double width_, int nbins)
      : lo(lo_), width(width_), counts(size_t(nbins), 0) {}

  void add(double v) {
    long long b = (long long)std::floor((v - lo) / width);
    b = std::max<long long>(0, std::min<long long>(b, (long long)counts.size() - 1));
    ++counts[size_t(b)];
    ++total;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "bin_lo,bin_hi,count,fraction\n";
    for (size_t i = 0; i < counts.size(); ++i) {
      os << lo + double(i) * width << ',';
      if (i + 1 == counts.size())
        os << "inf";
      else
        os << lo + double(i + 1) * width;
      const double frac = total > 0 ? double(counts[i]) / double(total) : 0.0;
      os << ',' << counts[i] << ',' << frac << '\n';
    }
    return os.str();
  }
};

struct ManifestStats {
  Histogram resolution{0.0, 128.0, 16};   // sqrt(width*height), pixels
  Histogram aspect_ratio{0.0, 0.25, 16};  // width/height
  std::map<std::string, Histogram> caption_token_length;  // "image" + kinds
  std::map<std::string, Histogram> bbox_area_fraction;    // per region kind
  std::map<std::string, Histogram> bbox_aspect;           // per region kind
  // Fraction of images whose pixel area is strictly below side*side.
  double below_256 = 0.0;
  double below_512 = 0.0;
  double below_1024 = 0.0;

  std::string cumulative_csv() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "area_side,fraction_strictly_below\n";
    os << "256," << below_256 << '\n';
    os << "512," << below_512 << '\n';
    os << "1024," << below_1024 << '\n';
    return os.str();
  }
};

inline ManifestStats compute_stats(const std::vector<ManifestRecord>& recs) {
  ManifestStats s;
  const std::vector<std::string> kinds = {"general", "rich_text_ocr",
                                          "doc_ocr"};
  s.caption_token_length.emplace("image", Histogram(0.0, 10.0, 20));
  for (const auto& k : kinds) {
    s.caption_token_length.emplace(k, Histogram(0.0, 10.0, 20));
    s.bbox_area_fraction.emplace(k, Histogram(0.0, 0.05, 20));
    s.bbox_aspect.emplace(k, Histogram(0.0, 0.25, 16));
  }
  long long n256 = 0, n512 = 0, n1024 = 0;
  for (const auto& rec : recs) {
    const double area = double(rec.width) * double(rec.height);
    s.resolution.add(std::sqrt(area));
    s.aspect_ratio.add(double(rec.width) / double(rec.height));
    if (area < 256.0 * 256.0) ++n256;
    if (area < 512.0 * 512.0) ++n512;
    if (area < 1024.0 * 1024.0) ++n1024;
    for (const auto& c : rec.captions)
      s.caption_token_length.at("image").add(double(token_length(c.text)));
    for (const auto& r : rec.regions) {
      const std::string kind = region_kind_name(r.kind);
      s.caption_token_length.at(kind).add(double(token_length(r.caption)));
      s.bbox_area_fraction.at(kind).add(r.box.area() / area);
      s.bbox_aspect.at(kind).add(r.box.width() / r.box.height());
    }
  }
  if (!recs.empty()) {
    s.below_256 = double(n256) / double(recs.size());
    s.below_512 = double(n512) / double(recs.size());
    s.below_1024 = double(n1024) / double(recs.size());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Full pipeline: filter_image -> dedup -> caption filter -> region_post ->
// stratified_sample. Each arrow's output feeds the next stage unchanged.
// ---------------------------------------------------------------------------

struct CurateConfig {
  StageRules rules;
  int hamming_threshold = 0;
  StratifyConfig stratify;
  uint64_t seed = 0;
};

struct CurateReport {
  size_t input_records = 0;
  std::map<std::string, size_t> image_rejects;    // reason -> count
  size_t duplicates = 0;
  std::map<std::string, size_t> caption_rejects;  // reason -> count
  size_t records_without_captions = 0;
  size_t regions_in = 0;
  size_t regions_after_post = 0;
  size_t regions_after_sampling = 0;
  size_t output_records = 0;

  ojson to_json() const {
    ojson j;
    j["input_records"] = input_records;
    j["image_rejects"] = ojson(image_rejects);
    j["duplicates"] = duplicates;
    j["caption_rejects"] = ojson(caption_rejects);
    j["records_without_captions"] = records_without_captions;
    j["regions_in"] = regions_in;
    j["regions_after_post"] = regions_after_post;
    j["regions_after_sampling"] = regions_after_sampling;
    j["output_records"] = output_records;
    return j;
  }
};

// Caption filtering drops offending captions from a record; a record whose
// captions all fail is dropped entirely. Region captions are governed by
// region_post, not by the image-caption filter.
inline std::vector<ManifestRecord> curate_pipeline(
    const std::vector<ManifestRecord>& input, const CurateConfig& cfg,
    CurateReport* report = nullptr) {
  CurateReport local;
  CurateReport& rep = report ? *report : local;
  rep = CurateReport{};
  rep.input_records = input.size();

  std::vector<ManifestRecord> stage;
  for (const auto& rec : input) {
    const Verdict v = filter_image(rec, cfg.rules);
    if (v.keep)
      stage.push_back(rec);
    else
      ++rep.image_rejects[v.reason];
  }

  DedupResult dd = dedup(stage, cfg.hamming_threshold);
  rep.duplicates = dd.duplicates;
  stage = std::move(dd.unique);

  std::vector<ManifestRecord> with_captions;
  for (auto& rec : stage) {
    std::vector<Caption> kept;
    for (auto& c : rec.captions) {
      const Verdict v = filter_caption(c.text);
      if (v.keep)
        kept.push_back(std::move(c));
      else
        ++rep.caption_rejects[v.reason];
    }
    if (kept.empty()) {
      ++rep.records_without_captions;
      continue;
    }
    rec.captions = std::move(kept);
    with_captions.push_back(std::move(rec));
  }
  stage = std::move(with_captions);

  for (auto& rec : stage) {
    rep.regions_in += rec.regions.size();
    rec.regions = region_post(rec.regions, cfg.rules, rec.width, rec.height);
    rep.regions_after_post += rec.regions.size();
  }

  stage = stratified_sample(std::move(stage), cfg.stratify, cfg.seed);
  for (const auto& rec : stage) rep.regions_after_sampling += rec.regions.size();
  rep.output_records = stage.size();
  return stage;
}

// ---------------------------------------------------------------------------
// Annotation-client interfaces. Real captioners/detectors/OCR engines live
// behind these; the stubs are pure functions of (seed, inputs) so tests and
// the toy corpus stay deterministic. Failures surface as ClientError.
// ---------------------------------------------------------------------------

class Recaptioner {
 public:
  virtual ~Recaptioner() = default;
  // The request pairs the full image with an optional local crop of the
  // subject, mirroring dual-view captioning prompts.
  virtual std::string recaption(const ImageTensor& global, const Box* crop,
                                const std::string& subject) = 0;
};

struct DetectedBox {
  Box box;
  std::string label;
  double confidence = 0.0;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<DetectedBox> detect(
      const ImageTensor& image, const std::vector<std::string>& nouns) = 0;
};

struct OcrSpan {
  Box box;
  std::string text;
};

class OcrEngine {
 public:
  virtual ~OcrEngine() = default;
  virtual std::vector<OcrSpan> read(const ImageTensor& image) = 0;
};

namespace detail {
inline uint64_t mix_seed(uint64_t seed, const std::string& s, uint64_t extra) {
  uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  h ^= extra + 0x9e3779b97f4a7c15ull;
  return h;
}
}  // namespace detail

class StubRecaptioner : public Recaptioner {
 public:
  explicit StubRecaptioner(uint64_t seed, bool always_timeout = false)
      : seed_(seed), always_timeout_(always_timeout) {}

  std::string recaption(const ImageTensor& global, const Box* crop,
                        const std::string& subject) override {
    if (always_timeout_)
      throw ClientError("recaptioner timed out", /*is_timeout=*/true);
    static const char* kStyles[] = {"detailed", "plain", "vivid", "concise"};
    Rng rng(detail::mix_seed(seed_, subject,
                             uint64_t(global.width) * 31 + global.height));
    std::ostringstream os;
    os << "a " << kStyles[rng.below(4)] << " view of " << subject;
    if (crop)
      os << " near (" << int(crop->x1) << "," << int(crop->y1) << ")";
    return os.str();
  }

 private:
  uint64_t seed_;
  bool always_timeout_;
};

class StubDetector : public Detector {
 public:
  explicit StubDetector(uint64_t seed, bool always_timeout = false)
      : seed_(seed), always_timeout_(always_timeout) {}

  std::vector<DetectedBox> detect(
      const ImageTensor& image,
      const std::vector<std::string>& nouns) override {
    if (always_timeout_)
      throw ClientError("detector timed out", /*is_timeout=*/true);
    std::vector<DetectedBox> out;
    for (const auto& noun : nouns) {
      Rng rng(detail::mix_seed(seed_, noun,
                               uint64_t(image.width) * 131 + image.height));
      const double w = image.width * (0.2 + 0.6 * rng.uniform());
      const double h = image.height * (0.2 + 0.6 * rng.uniform());
      const double x = (image.width - w) * rng.uniform();
      const double y = (image.height - h) * rng.uniform();
      out.push_back(
          DetectedBox{Box{x, y, x + w, y + h}, noun, 0.3 + 0.7 * rng.uniform()});
    }
    return out;
  }

 private:
  uint64_t seed_;
  bool always_timeout_;
};

class StubOcrEngine : public OcrEngine {
 public:
  explicit StubOcrEngine(uint64_t seed, bool always_timeout = false)
      : seed_(seed), always_timeout_(always_timeout) {}

  std::vector<OcrSpan> read(const ImageTensor& image) override {
    if (always_timeout_)
      throw ClientError("ocr engine timed out", /*is_timeout=*/true);
    Rng rng(detail::mix_seed(seed_, "ocr",
                             uint64_t(image.width) * 17 + image.height));
    std::vector<OcrSpan> out;
    const size_t spans = rng.below(3);
    for (size_t i = 0; i < spans; ++i) {
      const double w = image.width * (0.3 + 0.4 * rng.uniform());
      const double h = image.height * 0.1;
      const double x = (image.width - w) * rng.uniform();
      const double y = (image.height - h) * rng.uniform();
      std::ostringstream text;
      text << "TEXT" << rng.below(100);
      out.push_back(OcrSpan{Box{x, y, x + w, y + h}, text.str()});
    }
    return out;
  }

 private:
  uint64_t seed_;
  bool always_timeout_;
};

}  // namespace forge
