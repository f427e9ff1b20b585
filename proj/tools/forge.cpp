// Copyright 2026 The Forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// forge: command-line front end for the native-resolution vision-language
// workbench. Subcommands:
//
//   curate    filter + dedup + stratify a JSONL manifest
//   train     run one curriculum stage and write checkpoint + metrics
//   eval      retrieval / zero-shot classification / box grounding
//   stats     histogram + cumulative-resolution report for a manifest
//   selftest  fast built-in invariant checks
//
// Exit codes: 0 success, 1 runtime error (single line on stderr), 2 bad
// flags (usage on stderr), 3 invalid config (field path on stderr).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "forge/config.hpp"
#include "forge/curriculum.hpp"
#include "forge/evalkit.hpp"
#include "forge/curation.hpp"
#include "forge/models.hpp"
#include "forge/objectives.hpp"
#include "forge/toydata.hpp"

namespace fs = std::filesystem;

namespace {

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  FORGE_CHECK(out.good(), "cannot open ", path, " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  FORGE_CHECK(out.good(), "short write to ", path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FORGE_CHECK(in.good(), "cannot open ", path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// curate
// ---------------------------------------------------------------------------

int run_curate(const std::string& config_path, std::string data,
               std::string out_dir, std::string report_path) {
  const forge::ForgeConfig cfg = forge::load_config(config_path);
  if (data.empty()) data = cfg.data_path;
  if (out_dir.empty()) out_dir = cfg.out_dir;
  if (report_path.empty()) report_path = out_dir + "/curate_report.json";

  const std::vector<forge::ManifestRecord> input = forge::load_manifest(data);
  forge::CurateReport report;
  const std::vector<forge::ManifestRecord> kept =
      forge::curate_pipeline(input, cfg.curate, &report);

  fs::create_directories(out_dir);
  const std::string out_path = out_dir + "/curated.jsonl";
  forge::save_manifest(kept, out_path);
  write_file(report_path, report.to_json().dump(2) + "\n");

  std::cout << "curate: " << report.input_records << " -> "
            << report.output_records << " records ("
            << report.regions_after_sampling << " regions) -> " << out_path
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train(int stage, const std::string& config_path, std::string data,
              std::string out_dir, const std::string& init_ckpt) {
  const forge::ForgeConfig cfg = forge::load_config(config_path);
  const forge::StageConfig& sc = cfg.stage(stage);
  if (data.empty()) data = cfg.data_path;
  if (out_dir.empty()) out_dir = cfg.out_dir;

  forge::ModelState<float> state;
  if (!init_ckpt.empty()) {
    state = forge::load_checkpoint<float>(init_ckpt);
  } else {
    const uint64_t init_seed =
        forge::Rng(cfg.seed).substream("init").next_u64();
    state = forge::init_model_state<float>(cfg.vit, cfg.text, cfg.decoder,
                                           init_seed);
  }

  forge::ShufflingSource source(
      forge::load_manifest(data),
      forge::Rng(cfg.seed).substream("data").substream("order").next_u64());
  forge::RunHooks<float> hooks;
  hooks.render = forge::toy_renderer();
  const forge::RunResult result =
      forge::run_stage<float>(sc, source, state, cfg.seed, hooks);

  fs::create_directories(out_dir);
  const std::string tag = "stage" + std::to_string(stage);
  const std::string ckpt_path = out_dir + "/" + tag + ".ckpt";
  forge::save_checkpoint(state, ckpt_path);
  write_file(out_dir + "/" + tag + "_metrics.jsonl",
             forge::metrics_to_jsonl(result.metrics));

  FORGE_CHECK(!result.metrics.empty(), "train: stage produced no steps");
  std::cout << "train: stage " << stage << ", " << result.metrics.size()
            << " steps, final loss " << result.metrics.back().loss << " -> "
            << ckpt_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

forge::Tensor<float> pooled_image(const forge::ModelState<float>& state,
                                  const forge::ManifestRecord& rec, int res) {
  const forge::ImageTensor img = forge::render_record(rec, res);
  const forge::TokenSequence<float> seq = forge::patchify<float>(img);
  forge::Graph<float> g;
  forge::ParamBinder<float> pb(g);
  return forge::encode_image(g, pb, state, seq).pooled.value().clone();
}

forge::Tensor<float> pooled_text(const forge::ModelState<float>& state,
                                 const std::string& text, int ctx) {
  forge::Graph<float> g;
  forge::ParamBinder<float> pb(g);
  return forge::encode_text(g, pb, state, forge::tokenize(text, ctx))
      .value()
      .clone();
}

// Records usable for caption-based tasks: at least one caption.
std::vector<forge::ManifestRecord> captioned_only(
    std::vector<forge::ManifestRecord> recs) {
  std::vector<forge::ManifestRecord> out;
  for (auto& r : recs)
    if (!r.captions.empty()) out.push_back(std::move(r));
  return out;
}

forge::ojson eval_retrieval(const forge::ModelState<float>& state,
                            const std::vector<forge::ManifestRecord>& recs,
                            int res, int ctx) {
  const size_t n = recs.size();
  FORGE_CHECK(n >= 2, "eval retrieval: need at least 2 captioned records");
  const size_t d = size_t(state.vit_cfg.hidden);
  forge::Tensor<float> img(n, d), txt(n, d);
  std::vector<std::string> ids;
  for (size_t i = 0; i < n; ++i) {
    const forge::Tensor<float> ie = pooled_image(state, recs[i], res);
    const forge::Tensor<float> te =
        pooled_text(state, recs[i].captions.front().text, ctx);
    for (size_t c = 0; c < d; ++c) {
      img.data_mut()[i * d + c] = ie.data()[c];
      txt.data_mut()[i * d + c] = te.data()[c];
    }
    ids.push_back(recs[i].image_id);
  }
  const forge::SimilarityMatrix<float> sim =
      forge::similarity(img, txt, ids, ids);
  forge::ojson out;
  out["task"] = "retrieval";
  out["records"] = n;
  out["res"] = res;
  out["ctx"] = ctx;
  for (const char* dir : {"text_to_image", "image_to_text"}) {
    const auto d2 = std::string(dir) == "text_to_image"
                        ? forge::RetrievalDirection::TextToImage
                        : forge::RetrievalDirection::ImageToText;
    forge::ojson block;
    for (int k : {1, 5, 10})
      block["r" + std::to_string(k)] =
          forge::recall_at_k(sim, std::min<int>(k, int(n)), d2);
    out["recall"][dir] = block;
  }
  return out;
}

forge::ojson eval_classify(const forge::ModelState<float>& state,
                           const std::vector<forge::ManifestRecord>& recs,
                           int res, int ctx) {
  FORGE_CHECK(!recs.empty(), "eval classify: no captioned records");
  // Distinct caption texts, in order of first appearance, become classes.
  std::vector<std::string> classes;
  std::map<std::string, size_t> index;
  for (const auto& r : recs) {
    const std::string& t = r.captions.front().text;
    if (index.emplace(t, classes.size()).second) classes.push_back(t);
  }
  FORGE_CHECK(classes.size() >= 2, "eval classify: need at least 2 classes");
  std::vector<forge::Tensor<float>> prompts;
  prompts.reserve(classes.size());
  for (const auto& c : classes) prompts.push_back(pooled_text(state, c, ctx));

  size_t correct = 0;
  for (const auto& r : recs) {
    const forge::Tensor<float> ie = pooled_image(state, r, res);
    const size_t pred = forge::zeroshot_classify(ie, prompts);
    if (pred == index.at(r.captions.front().text)) ++correct;
  }
  forge::ojson out;
  out["task"] = "classify";
  out["records"] = recs.size();
  out["classes"] = classes.size();
  out["res"] = res;
  out["ctx"] = ctx;
  out["accuracy"] = double(correct) / double(recs.size());
  return out;
}

forge::ojson eval_ground(const forge::ModelState<float>& state,
                         const std::vector<forge::ManifestRecord>& recs,
                         int res, int ctx) {
  std::vector<forge::Box> predicted, gold;
  size_t parse_failures = 0;
  for (const auto& rec : recs) {
    const forge::ImageTensor img = forge::render_record(rec, res);
    const forge::TokenSequence<float> seq = forge::patchify<float>(img);
    for (const auto& region : rec.regions) {
      const forge::RegionTask task = forge::format_region_task(
          region, forge::TaskKind::StringToBbox, double(rec.width),
          double(rec.height), rec.image_id);
      const std::vector<int> prompt_ids = forge::tokenize(task.prompt, ctx).ids;
      const std::vector<int> new_ids =
          forge::generate(state, seq, prompt_ids, 32);
      const std::optional<forge::Box> hit =
          forge::parse_box(forge::detokenize(new_ids));
      // Both sides live on the shared [0,999] coordinate grid.
      gold.push_back(*forge::parse_box(task.target));
      if (hit) {
        predicted.push_back(*hit);
      } else {
        ++parse_failures;
        predicted.push_back(forge::Box{});  // zero area counts as a miss
      }
    }
  }
  FORGE_CHECK(!gold.empty(), "eval ground: manifest has no regions");
  forge::ojson out;
  out["task"] = "ground";
  out["records"] = recs.size();
  out["cases"] = gold.size();
  out["parse_failures"] = parse_failures;
  out["res"] = res;
  out["ctx"] = ctx;
  out["iou_threshold"] = 0.5;
  out["accuracy"] = forge::grounding_accuracy(predicted, gold, 0.5);
  return out;
}

int run_eval(const std::string& task, const std::string& ckpt,
             std::string data, std::string out_dir, std::string report_path,
             int res, int ctx) {
  if (data.empty()) data = "data/toy_shapes.jsonl";
  if (out_dir.empty()) out_dir = "out";
  const forge::ModelState<float> state = forge::load_checkpoint<float>(ckpt);
  const std::vector<forge::ManifestRecord> all = forge::load_manifest(data);

  forge::ojson report;
  if (task == "retrieval") {
    report = eval_retrieval(state, captioned_only(all), res, ctx);
  } else if (task == "classify") {
    report = eval_classify(state, captioned_only(all), res, ctx);
  } else {
    report = eval_ground(state, all, res, ctx);
  }

  if (report_path.empty()) {
    fs::create_directories(out_dir);
    report_path = out_dir + "/eval_" + task + ".json";
  } else if (fs::path(report_path).has_parent_path()) {
    fs::create_directories(fs::path(report_path).parent_path());
  }
  const std::string bytes = report.dump(2) + "\n";
  write_file(report_path, bytes);
  std::cout << bytes;
  return 0;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

int run_stats(std::string data, std::string out_dir) {
  if (data.empty()) data = "data/sample_manifest.jsonl";
  if (out_dir.empty()) out_dir = "out";
  const std::vector<forge::ManifestRecord> recs = forge::load_manifest(data);
  const forge::ManifestStats st = forge::compute_stats(recs);

  fs::create_directories(out_dir);
  write_file(out_dir + "/resolution_hist.csv", st.resolution.to_csv());
  write_file(out_dir + "/aspect_hist.csv", st.aspect_ratio.to_csv());
  write_file(out_dir + "/cumulative_area.csv", st.cumulative_csv());
  for (const auto& [key, hist] : st.caption_token_length)
    write_file(out_dir + "/caption_len_" + key + ".csv", hist.to_csv());
  for (const auto& [key, hist] : st.bbox_area_fraction)
    write_file(out_dir + "/bbox_area_" + key + ".csv", hist.to_csv());
  for (const auto& [key, hist] : st.bbox_aspect)
    write_file(out_dir + "/bbox_aspect_" + key + ".csv", hist.to_csv());

  std::ostringstream line;
  line.setf(std::ios::fixed);
  line.precision(1);
  line << "stats: " << recs.size()
       << " records; image area below 256^2/512^2/1024^2: "
       << 100.0 * st.below_256 << "%, " << 100.0 * st.below_512 << "%, "
       << 100.0 * st.below_1024 << "%";
  std::cout << line.str() << "\n";
  std::cout << "stats: histograms written to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// selftest
// ---------------------------------------------------------------------------

bool check_autograd() {
  forge::Rng rng(11);
  forge::Tensor<double> x(4, 6), w(6, 3);
  for (size_t i = 0; i < x.size(); ++i)
    x.data_mut()[i] = rng.normal() * 0.5;
  for (size_t i = 0; i < w.size(); ++i)
    w.data_mut()[i] = rng.normal() * 0.5;
  const double err = forge::grad_check<double>(
      [&](forge::Graph<double>& g, forge::Var<double> in) {
        forge::Var<double> wv = g.input(w.clone(), false);
        return forge::sum_all(forge::silu(forge::matmul(in, wv)));
      },
      x);
  return err <= 1e-4;
}

bool check_mim_identity() {
  forge::Rng rng(12);
  forge::Tensor<double> feats(6, 5);
  for (size_t i = 0; i < feats.size(); ++i) feats.data_mut()[i] = rng.normal();
  forge::MaskSet mask = forge::sample_mask(6, 0.5, 99);
  forge::Graph<double> g;
  forge::Var<double> student = g.input(feats.clone(), false);
  const double loss = forge::mim_loss(g, student, feats, mask).value().item();
  return loss == 0.0;
}

bool check_sigmoid_identity() {
  forge::Tensor<double> img(1, 2), txt(1, 2);
  img.data_mut()[0] = 1.0;  // orthogonal unit rows: dot = 0
  txt.data_mut()[1] = 1.0;
  forge::SigmoidLossParams<double> params;
  params.tau = 1.0;
  params.bias = 0.0;
  const double loss = forge::siglip_loss_value(img, txt, params);
  return std::abs(loss - std::log(2.0)) <= 1e-9;
}

bool check_uniform_next_token() {
  forge::Graph<double> g;
  forge::Var<double> logits = g.input(forge::Tensor<double>(2, 8), false);
  const forge::ArLoss<double> loss = forge::ar_loss(g, logits, {3, 5});
  return std::abs(loss.mean.value().item() - std::log(8.0)) <= 1e-9;
}

bool check_patch_grid() {
  forge::Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 20 + int(rng.below(500));
    const int h = 20 + int(rng.below(500));
    const auto [sw, sh] = forge::snap_resolution(w, h, 28, 448);
    if (sw % 28 != 0 || sh % 28 != 0 || sw > 448 || sh > 448) return false;
    forge::ImageTensor img(sh, sw);
    const forge::TokenSequence<double> seq = forge::patchify<double>(img);
    if (seq.token_count() != size_t((sw / 14) * (sh / 14))) return false;
  }
  return true;
}

bool check_nms_oracle() {
  forge::Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t n = 1 + rng.below(12);
    std::vector<forge::Box> boxes(n);
    std::vector<double> scores(n);
    for (size_t i = 0; i < n; ++i) {
      const double x1 = rng.uniform() * 80.0;
      const double y1 = rng.uniform() * 80.0;
      boxes[i] = forge::Box{x1, y1, x1 + 1.0 + rng.uniform() * 40.0,
                            y1 + 1.0 + rng.uniform() * 40.0};
      scores[i] = rng.below(4) == 0 ? 0.5 : rng.uniform();  // force ties
    }
    // Brute-force greedy reference: best remaining score (ties: lower
    // index), suppress everything at IoU >= threshold.
    std::vector<bool> alive(n, true);
    std::vector<size_t> want;
    while (true) {
      size_t best = n;
      for (size_t i = 0; i < n; ++i)
        if (alive[i] && (best == n || scores[i] > scores[best])) best = i;
      if (best == n) break;
      want.push_back(best);
      alive[best] = false;
      for (size_t i = 0; i < n; ++i)
        if (alive[i] && forge::iou(boxes[i], boxes[best]) >= 0.7)
          alive[i] = false;
    }
    if (forge::nms(boxes, scores, 0.7) != want) return false;
  }
  return true;
}

bool check_stratified() {
  forge::Rng rng(15);
  std::vector<forge::ManifestRecord> recs;
  for (int i = 0; i < 400; ++i) {
    forge::ManifestRecord r;
    r.image_id = "img-" + std::to_string(i);
    r.width = 300;
    r.height = 300;
    forge::RegionAnnotation a;
    a.box = forge::Box{10, 10, 200, 200};
    // Skewed taxonomy: label 0 dominates.
    a.label = "label-" + std::to_string(rng.below(3) == 0 ? rng.below(6) : 0);
    a.confidence = 0.9;
    recs.push_back(r);
    recs.back().regions.push_back(a);
  }
  forge::StratifyConfig cfg;
  cfg.batch_images = 100000;  // scale 0.01: eff. floor 10, eff. cap 20
  cfg.min_retain = 1000;
  cfg.cap = 2000;
  const auto a = forge::stratified_sample(recs, cfg, 77);
  const auto b = forge::stratified_sample(recs, cfg, 77);
  std::map<std::string, size_t> in_count, out_count;
  for (const auto& r : recs)
    for (const auto& g : r.regions) ++in_count[g.label];
  for (const auto& r : a)
    for (const auto& g : r.regions) ++out_count[g.label];
  for (const auto& [label, count] : out_count)
    if (count > 20) return false;
  for (const auto& [label, count] : in_count)
    if (count < 10 && out_count[label] != count) return false;
  return forge::manifest_to_jsonl(a) == forge::manifest_to_jsonl(b);
}

bool check_curate_determinism() {
  const std::vector<forge::ManifestRecord> input = forge::make_sample_manifest();
  forge::CurateConfig cfg;
  cfg.rules = forge::StageRules::for_stage(3);
  cfg.hamming_threshold = 4;
  cfg.stratify.batch_images = 100000;
  cfg.stratify.cap = 2000;
  cfg.seed = 4242;
  const auto a = forge::curate_pipeline(input, cfg);
  const auto b = forge::curate_pipeline(input, cfg);
  return !a.empty() && a.size() < input.size() &&
         forge::manifest_to_jsonl(a) == forge::manifest_to_jsonl(b);
}

bool check_checkpoint_roundtrip() {
  forge::EncoderConfig vit;
  vit.depth = 1;
  vit.hidden = 8;
  vit.intermediate = 16;
  vit.heads = 2;
  forge::TextConfig text;
  text.depth = 1;
  text.hidden = 8;
  text.intermediate = 16;
  text.heads = 2;
  forge::DecoderConfig dec;
  dec.depth = 1;
  dec.hidden = 8;
  dec.intermediate = 16;
  dec.heads = 2;
  const forge::ModelState<float> state =
      forge::init_model_state<float>(vit, text, dec, 314159);
  const fs::path dir = fs::temp_directory_path() / "forge-selftest";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  forge::save_checkpoint(state, p1);
  const forge::ModelState<float> loaded = forge::load_checkpoint<float>(p1);
  forge::save_checkpoint(loaded, p2);
  const bool same = read_file(p1) == read_file(p2);
  fs::remove_all(dir);
  return same;
}

bool check_schedule_and_box() {
  const double peak = 3e-3, floor = 3e-5;
  if (forge::cosine_lr(0, 1000, peak, floor, 0.1) != 0.0) return false;
  if (forge::cosine_lr(100, 1000, peak, floor, 0.1) != peak) return false;
  if (forge::cosine_lr(1000, 1000, peak, floor, 0.1) != floor) return false;
  forge::Rng rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    const double w = 64 + rng.uniform() * 2000.0;
    const double h = 64 + rng.uniform() * 2000.0;
    const double x1 = rng.uniform() * (w - 8.0);
    const double y1 = rng.uniform() * (h - 8.0);
    const forge::Box box{x1, y1, x1 + 4.0 + rng.uniform() * (w - x1 - 4.0),
                         y1 + 4.0 + rng.uniform() * (h - y1 - 4.0)};
    const auto parsed = forge::parse_box(forge::box_token(box, w, h));
    if (!parsed) return false;
    if (int(parsed->x1) != forge::quantize_coord(box.x1, w) ||
        int(parsed->y1) != forge::quantize_coord(box.y1, h) ||
        int(parsed->x2) != forge::quantize_coord(box.x2, w) ||
        int(parsed->y2) != forge::quantize_coord(box.y2, h))
      return false;
  }
  return true;
}

int run_selftest() {
  const std::vector<std::pair<const char*, std::function<bool()>>> checks = {
      {"autograd composite gradient", check_autograd},
      {"masked reconstruction zero at identity", check_mim_identity},
      {"paired sigmoid loss at neutral logit", check_sigmoid_identity},
      {"uniform next-token loss", check_uniform_next_token},
      {"resolution snapping and patch grid", check_patch_grid},
      {"nms matches brute-force greedy", check_nms_oracle},
      {"stratified sampling invariants", check_stratified},
      {"curation determinism", check_curate_determinism},
      {"checkpoint byte round-trip", check_checkpoint_roundtrip},
      {"schedule endpoints and box round-trip", check_schedule_and_box},
  };
  int failures = 0;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    std::string note;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      note = std::string(" (") + e.what() + ")";
    }
    std::cout << "selftest: " << name << ": " << (ok ? "ok" : "FAIL") << note
              << "\n";
    if (!ok) ++failures;
  }
  std::cout << "selftest: " << (checks.size() - size_t(failures)) << "/"
            << checks.size() << " checks passed\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: native-resolution vision-language workbench"};
  app.require_subcommand(1);

  std::string config_path, data, out_dir, report_path, init_ckpt, ckpt, task;
  int stage = 1, res = 56, ctx = 64;

  CLI::App* curate = app.add_subcommand("curate", "filter a JSONL manifest");
  curate->add_option("--config", config_path, "config JSON")->required();
  curate->add_option("--data", data, "input manifest (overrides config)");
  curate->add_option("--out", out_dir, "output directory (overrides config)");
  curate->add_option("--report", report_path, "report JSON path");

  CLI::App* train = app.add_subcommand("train", "run one curriculum stage");
  train->add_option("--stage", stage, "curriculum stage")
      ->required()
      ->check(CLI::Range(1, 3));
  train->add_option("--config", config_path, "config JSON")->required();
  train->add_option("--data", data, "training manifest (overrides config)");
  train->add_option("--out", out_dir, "output directory (overrides config)");
  train->add_option("--init", init_ckpt, "checkpoint to start from");

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint");
  eval->add_option("--task", task, "retrieval|classify|ground")
      ->required()
      ->check(CLI::IsMember({"retrieval", "classify", "ground"}));
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
  eval->add_option("--data", data, "eval manifest [data/toy_shapes.jsonl]");
  eval->add_option("--out", out_dir, "report directory [out]");
  eval->add_option("--report", report_path, "report JSON path");
  eval->add_option("--res", res, "max image side [56]");
  eval->add_option("--ctx", ctx, "text context cap [64]");

  CLI::App* stats = app.add_subcommand("stats", "manifest statistics");
  stats->add_option("--data", data, "manifest path [data/sample_manifest.jsonl]");
  stats->add_option("--out", out_dir, "output directory [out]");

  CLI::App* selftest =
      app.add_subcommand("selftest", "run built-in invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (curate->parsed())
      return run_curate(config_path, data, out_dir, report_path);
    if (train->parsed())
      return run_train(stage, config_path, data, out_dir, init_ckpt);
    if (eval->parsed())
      return run_eval(task, ckpt, data, out_dir, report_path, res, ctx);
    if (stats->parsed()) return run_stats(data, out_dir);
    if (selftest->parsed()) return run_selftest();
  } catch (const forge::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
