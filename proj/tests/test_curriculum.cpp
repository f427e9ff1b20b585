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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "forge/curriculum.hpp"
#include "forge/models.hpp"
#include "forge/objectives.hpp"
#include "forge/rng.hpp"
#include "forge/toydata.hpp"

namespace {

using forge::AdamWConfig;
using forge::BoundedSource;
using forge::CyclingSource;
using forge::ShufflingSource;
using forge::ManifestRecord;
using forge::OptimizerState;
using forge::Rng;
using forge::RunHooks;
using forge::StageConfig;
using forge::StepMetrics;
using forge::Tensor;

// Reference AdamW step sequence for a single scalar, written independently
// of the production optimizer.
struct ScalarAdamRef {
  double m = 0.0;
  double v = 0.0;
  uint64_t t = 0;

  double step(double theta, double g, const AdamWConfig& cfg, double lr) {
    t += 1;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(cfg.beta1, double(t)));
    const double vhat = v / (1.0 - std::pow(cfg.beta2, double(t)));
    return theta -
           lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * theta);
  }
};

forge::ModelState<double> tiny_state(uint64_t seed) {
  forge::EncoderConfig vit;
  vit.depth = 2;
  vit.hidden = 16;
  vit.intermediate = 32;
  vit.heads = 2;
  forge::TextConfig text;
  text.depth = 2;
  text.hidden = 16;
  text.intermediate = 32;
  text.heads = 2;
  forge::DecoderConfig dec;
  dec.depth = 2;
  dec.hidden = 16;
  dec.intermediate = 32;
  dec.heads = 2;
  return forge::init_model_state<double>(vit, text, dec, seed);
}

StageConfig toy_stage(int stage) {
  StageConfig cfg;
  cfg.stage = stage;
  cfg.samples_target = 64;
  cfg.batch_size = 8;
  cfg.max_resolution = 56;
  cfg.lr_peak = 1e-3;
  cfg.resolution_schedule = {28, 28};
  cfg.context_cap_schedule = {8, 16};
  cfg.text_unfreeze_fraction = 0.5;
  cfg.warmup_fraction = 0.1;
  cfg.mask_ratio = 0.75;
  if (stage == 1) cfg.trainable = {"vit"};
  if (stage == 2) cfg.trainable = {"vit", "text"};
  if (stage == 3) cfg.trainable = {"vit", "projector", "decoder"};
  return cfg;
}

forge::RunResult run_toy(const StageConfig& cfg, forge::DataSource& src,
                         forge::ModelState<double>& state, uint64_t seed) {
  RunHooks<double> hooks;
  hooks.render = forge::toy_renderer();
  return forge::run_stage(cfg, src, state, seed, hooks);
}

std::map<std::string, Tensor<double>> snapshot(
    forge::ModelState<double>& state, const std::string& component) {
  std::map<std::string, Tensor<double>> out;
  forge::for_each_param(
      state, [&](const char* comp, const std::string& name,
                 Tensor<double>& t) {
        if (component == comp) out.emplace(name, t.clone());
      });
  return out;
}

bool same_values(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

bool component_unchanged(std::map<std::string, Tensor<double>> before,
                         forge::ModelState<double>& state,
                         const std::string& component) {
  bool ok = true;
  forge::for_each_param(
      state, [&](const char* comp, const std::string& name,
                 Tensor<double>& t) {
        if (component != comp) return;
        auto it = before.find(name);
        if (it == before.end() || !same_values(it->second, t)) ok = false;
      });
  return ok;
}

std::vector<std::string> plan_of(const StageConfig& cfg, double progress) {
  return forge::freeze_plan(cfg, progress);
}

}  // namespace

TEST_CASE("cosine schedule hits its pinned endpoints") {
  const uint64_t total = 1000;
  const double peak = 1e-3;
  const double floor_lr = 1e-5;
  const double wf = 0.03;
  const uint64_t warmup = 30;

  // Linear ramp during warmup, exact peak at its end.
  REQUIRE(forge::cosine_lr(0, total, peak, floor_lr, wf) == 0.0);
  REQUIRE(forge::cosine_lr(15, total, peak, floor_lr, wf) ==
          Catch::Approx(peak * 0.5).margin(1e-15));
  REQUIRE(forge::cosine_lr(warmup, total, peak, floor_lr, wf) == peak);

  // Exact floor at the last step, midpoint of the decay halfway between.
  REQUIRE(forge::cosine_lr(total, total, peak, floor_lr, wf) == floor_lr);
  const uint64_t mid = warmup + (total - warmup) / 2;
  REQUIRE(forge::cosine_lr(mid, total, peak, floor_lr, wf) ==
          Catch::Approx((peak + floor_lr) / 2.0).margin(1e-12));

  SECTION("no decay step jumps more than twice the average slope") {
    double prev = forge::cosine_lr(warmup, total, peak, floor_lr, wf);
    for (uint64_t s = warmup + 1; s <= total; ++s) {
      const double cur = forge::cosine_lr(s, total, peak, floor_lr, wf);
      REQUIRE(std::abs(cur - prev) <= 2.0 * peak / double(total));
      prev = cur;
    }
  }

  SECTION("monotone up through warmup, monotone down after") {
    for (uint64_t s = 1; s <= warmup; ++s)
      REQUIRE(forge::cosine_lr(s, total, peak, floor_lr, wf) >=
              forge::cosine_lr(s - 1, total, peak, floor_lr, wf));
    for (uint64_t s = warmup + 1; s <= total; ++s)
      REQUIRE(forge::cosine_lr(s, total, peak, floor_lr, wf) <=
              forge::cosine_lr(s - 1, total, peak, floor_lr, wf));
  }

  SECTION("degenerate inputs are rejected") {
    REQUIRE_THROWS_AS(forge::cosine_lr(0, 0, peak, floor_lr, wf), forge::Error);
    REQUIRE_THROWS_AS(forge::cosine_lr(total + 1, total, peak, floor_lr, wf),
                      forge::Error);
    REQUIRE_THROWS_AS(forge::cosine_lr(0, total, peak, peak * 2.0, wf),
                      forge::Error);
    REQUIRE_THROWS_AS(forge::cosine_lr(0, total, peak, floor_lr, 1.0),
                      forge::Error);
  }
}

TEST_CASE("adamw first step moves a unit-gradient parameter by -lr") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState<double> opt(cfg);

  Tensor<double> theta(1, 3);
  Tensor<double> grad = Tensor<double>::full(1, 3, 1.0);
  opt.apply("vit/w", theta, grad, 0.1);
  for (size_t i = 0; i < 3; ++i)
    REQUIRE(theta.data()[i] == Catch::Approx(-0.1).margin(1e-6));
}

TEST_CASE("adamw leaves parameters alone when gradient and decay vanish") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState<double> opt(cfg);

  Tensor<double> theta(2, 2);
  theta.data_mut()[0] = 1.5;
  theta.data_mut()[1] = -2.5;
  theta.data_mut()[2] = 0.25;
  theta.data_mut()[3] = 4.0;
  const Tensor<double> before = theta.clone();
  Tensor<double> grad(2, 2);
  opt.apply("text/w", theta, grad, 0.1);
  REQUIRE(same_values(theta, before));
}

TEST_CASE("adamw weight decay shrinks by the decoupled factor") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  OptimizerState<double> opt(cfg);

  Tensor<double> theta = Tensor<double>::full(1, 1, 2.0);
  Tensor<double> grad(1, 1);
  opt.apply("vit/w", theta, grad, 0.1);
  // theta - lr * wd * theta = 2 * (1 - 0.05)
  REQUIRE(theta.at(0, 0) == Catch::Approx(1.9).margin(1e-12));
}

TEST_CASE("adamw trajectory matches an independent reference") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.02;
  OptimizerState<double> opt(cfg);

  Tensor<double> theta = Tensor<double>::full(1, 1, 0.7);
  ScalarAdamRef ref;
  double ref_theta = 0.7;
  Rng rng(99);
  for (int step = 0; step < 25; ++step) {
    const double g = rng.normal() * 0.5;
    const double lr = 0.05 / (1.0 + step);
    Tensor<double> grad = Tensor<double>::full(1, 1, g);
    opt.apply("projector/w1", theta, grad, lr);
    ref_theta = ref.step(ref_theta, g, cfg, lr);
    REQUIRE(theta.at(0, 0) == Catch::Approx(ref_theta).margin(1e-12));
  }
}

TEST_CASE("adamw keeps a separate step counter per parameter") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState<double> opt(cfg);

  // Warm another parameter first; a fresh one must still take a first-step
  // bias-corrected move of exactly -lr.
  Tensor<double> warm(1, 1);
  for (int i = 0; i < 3; ++i) {
    Tensor<double> g = Tensor<double>::full(1, 1, 1.0);
    opt.apply("vit/a", warm, g, 0.01);
  }
  Tensor<double> fresh(1, 1);
  Tensor<double> g = Tensor<double>::full(1, 1, 1.0);
  opt.apply("vit/b", fresh, g, 0.1);
  REQUIRE(fresh.at(0, 0) == Catch::Approx(-0.1).margin(1e-6));
  REQUIRE(opt.tracked_params() == 2);
}

TEST_CASE("adamw rejects bad gradients and shape drift") {
  OptimizerState<double> opt{AdamWConfig{}};
  Tensor<double> theta(1, 2);

  SECTION("non-finite gradient names the parameter") {
    Tensor<double> grad(1, 2);
    grad.data_mut()[1] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_WITH(
        opt.apply("vit/blocks.0.attn.wq", theta, grad, 0.1),
        Catch::Matchers::ContainsSubstring("vit/blocks.0.attn.wq"));
  }

  SECTION("gradient shape must match the parameter") {
    Tensor<double> grad(2, 1);
    REQUIRE_THROWS_AS(opt.apply("vit/w", theta, grad, 0.1), forge::Error);
  }

  SECTION("slot shape is pinned after the first step") {
    Tensor<double> grad = Tensor<double>::full(1, 2, 1.0);
    opt.apply("vit/w", theta, grad, 0.1);
    Tensor<double> theta2(2, 2);
    Tensor<double> grad2 = Tensor<double>::full(2, 2, 1.0);
    REQUIRE_THROWS_AS(opt.apply("vit/w", theta2, grad2, 0.1), forge::Error);
  }

  SECTION("negative learning rate is rejected") {
    Tensor<double> grad(1, 2);
    REQUIRE_THROWS_AS(opt.apply("vit/w", theta, grad, -0.1), forge::Error);
  }
}

TEST_CASE("freeze plan follows the per-phase component lists") {
  const StageConfig s1 = toy_stage(1);
  const StageConfig s2 = toy_stage(2);
  const StageConfig s3 = toy_stage(3);

  REQUIRE(plan_of(s1, 0.0) == std::vector<std::string>{"vit"});
  REQUIRE(plan_of(s1, 1.0) == std::vector<std::string>{"vit"});

  // The text tower joins once progress reaches the unfreeze fraction.
  REQUIRE(plan_of(s2, 0.0) == std::vector<std::string>{"vit"});
  REQUIRE(plan_of(s2, 0.49) == std::vector<std::string>{"vit"});
  REQUIRE(plan_of(s2, 0.5) == std::vector<std::string>({"vit", "text"}));
  REQUIRE(plan_of(s2, 0.9) == std::vector<std::string>({"vit", "text"}));

  REQUIRE(plan_of(s3, 0.0) ==
          std::vector<std::string>({"vit", "projector", "decoder"}));

  REQUIRE_THROWS_AS(forge::freeze_plan(s2, -0.01), forge::Error);
  REQUIRE_THROWS_AS(forge::freeze_plan(s2, 1.01), forge::Error);
}

TEST_CASE("resolution and context interpolate across a phase") {
  StageConfig cfg = toy_stage(2);
  cfg.resolution_schedule = {336, 448};
  cfg.max_resolution = 448;
  cfg.context_cap_schedule = {64, 256};

  REQUIRE(forge::resolution_at(cfg, 0.0) == 336);
  REQUIRE(forge::resolution_at(cfg, 1.0) == 448);
  // Interpolated sides land on the patch-grid multiple.
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const int r = forge::resolution_at(cfg, p);
    REQUIRE(r % 28 == 0);
    REQUIRE(r >= 336);
    REQUIRE(r <= 448);
  }
  REQUIRE(forge::resolution_at(cfg, 0.3) == 364);

  REQUIRE(forge::context_at(cfg, 0.0) == 64);
  REQUIRE(forge::context_at(cfg, 0.5) == 160);
  REQUIRE(forge::context_at(cfg, 1.0) == 256);

  StageConfig flat = toy_stage(3);
  flat.resolution_schedule = {1000, 1000};
  flat.max_resolution = 1000;
  REQUIRE(forge::resolution_at(flat, 0.37) == 980);

  REQUIRE_THROWS_AS(forge::resolution_at(cfg, 1.5), forge::Error);
  REQUIRE_THROWS_AS(forge::context_at(cfg, -0.5), forge::Error);
}

TEST_CASE("published presets carry the expected budgets") {
  const StageConfig s1 = StageConfig::reference_preset(1);
  const StageConfig s2 = StageConfig::reference_preset(2);
  const StageConfig s3 = StageConfig::reference_preset(3);

  REQUIRE(s1.samples_target == 1800000000ull);
  REQUIRE(s1.batch_size == 4096);
  REQUIRE(s1.lr_peak == Catch::Approx(1e-3));
  REQUIRE(s1.resolution_schedule == std::pair<int, int>{256, 256});
  REQUIRE(s1.trainable == std::vector<std::string>{"vit"});
  REQUIRE(s1.mask_ratio == Catch::Approx(0.75));
  // 256 is not a grid multiple; the runner snaps down to 252.
  REQUIRE(forge::resolution_at(s1, 0.0) == 252);

  REQUIRE(s2.samples_target == 9300000000ull);
  REQUIRE(s2.batch_size == 49152);
  REQUIRE(s2.lr_peak == Catch::Approx(1e-4));
  REQUIRE(s2.resolution_schedule == std::pair<int, int>{336, 448});
  REQUIRE(s2.context_cap_schedule == std::pair<int, int>{64, 256});
  REQUIRE(s2.trainable == std::vector<std::string>({"vit", "text"}));
  REQUIRE(s2.text_unfreeze_fraction == Catch::Approx(0.5));

  REQUIRE(s3.samples_target == 500000000ull);
  REQUIRE(s3.batch_size == 4096);
  REQUIRE(s3.lr_peak == Catch::Approx(1e-5));
  REQUIRE(s3.resolution_schedule == std::pair<int, int>{1000, 1000});
  REQUIRE(forge::resolution_at(s3, 1.0) == 980);
  REQUIRE(s3.trainable ==
          std::vector<std::string>({"vit", "projector", "decoder"}));

  for (const StageConfig* c : {&s1, &s2, &s3}) {
    REQUIRE_NOTHROW(c->validate());
    REQUIRE(c->warmup_fraction == Catch::Approx(0.03));
  }
  REQUIRE_THROWS_AS(StageConfig::reference_preset(4), forge::Error);
}

TEST_CASE("stage configs validate their invariants") {
  StageConfig cfg = toy_stage(2);
  REQUIRE_NOTHROW(cfg.validate());

  SECTION("stage outside the curriculum") {
    cfg.stage = 0;
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("zero batch") {
    cfg.batch_size = 0;
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("zero samples") {
    cfg.samples_target = 0;
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("resolution above the cap") {
    cfg.resolution_schedule = {28, 112};
    cfg.max_resolution = 56;
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("resolution below one grid cell") {
    cfg.resolution_schedule = {14, 28};
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("text stage without a context cap") {
    cfg.context_cap_schedule = {0, 0};
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("mask ratio out of range") {
    cfg.mask_ratio = 1.5;
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("warmup fraction of one") {
    cfg.warmup_fraction = 1.0;
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("floor fraction above one") {
    cfg.lr_min_fraction = 1.5;
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("unknown trainable component") {
    cfg.trainable = {"vit", "flux"};
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
  SECTION("no trainable components") {
    cfg.trainable.clear();
    REQUIRE_THROWS_AS(cfg.validate(), forge::Error);
  }
}

TEST_CASE("data sources cycle and bound as advertised") {
  std::vector<ManifestRecord> recs;
  for (int i = 0; i < 3; ++i) {
    ManifestRecord r;
    r.image_id = "rec-" + std::to_string(i);
    r.width = 56;
    r.height = 56;
    recs.push_back(r);
  }

  SECTION("cycling source wraps around") {
    CyclingSource src(recs);
    std::vector<std::string> seen;
    for (int i = 0; i < 7; ++i) seen.push_back(src.next()->image_id);
    REQUIRE(seen == std::vector<std::string>({"rec-0", "rec-1", "rec-2",
                                              "rec-0", "rec-1", "rec-2",
                                              "rec-0"}));
  }

  SECTION("bounded source exhausts after one pass") {
    BoundedSource src(recs);
    for (int i = 0; i < 3; ++i) REQUIRE(src.next() != nullptr);
    REQUIRE(src.next() == nullptr);
    REQUIRE(src.next() == nullptr);
  }

  SECTION("empty cycling source is rejected") {
    REQUIRE_THROWS_AS(CyclingSource(std::vector<ManifestRecord>{}),
                      forge::Error);
  }

  SECTION("shuffling source permutes within each epoch") {
    ShufflingSource src(recs, 17);
    std::vector<std::string> epoch1, epoch2;
    for (int i = 0; i < 3; ++i) epoch1.push_back(src.next()->image_id);
    for (int i = 0; i < 3; ++i) epoch2.push_back(src.next()->image_id);
    auto is_perm = [&](std::vector<std::string> e) {
      std::sort(e.begin(), e.end());
      return e == std::vector<std::string>({"rec-0", "rec-1", "rec-2"});
    };
    REQUIRE(is_perm(epoch1));
    REQUIRE(is_perm(epoch2));

    // Deterministic in the seed.
    ShufflingSource again(recs, 17);
    for (const std::string& want : epoch1) REQUIRE(again.next()->image_id == want);

    // Across many epochs every distinct ordering shows up.
    ShufflingSource churn(recs, 3);
    std::set<std::vector<std::string>> orders;
    for (int e = 0; e < 64; ++e) {
      std::vector<std::string> epoch;
      for (int i = 0; i < 3; ++i) epoch.push_back(churn.next()->image_id);
      orders.insert(epoch);
    }
    REQUIRE(orders.size() == 6);
  }
}

TEST_CASE("step metrics serialize one json object per line") {
  StepMetrics m;
  m.step = 1;
  m.loss = 0.5;
  m.lr = 1e-3;
  m.res = 336;
  m.ctx = 64;
  const forge::ojson j = forge::step_metrics_to_json(m);
  REQUIRE(j.at("step").get<uint64_t>() == 1);
  REQUIRE(j.at("loss").get<double>() == Catch::Approx(0.5));
  REQUIRE(j.at("lr").get<double>() == Catch::Approx(1e-3));
  REQUIRE(j.at("res").get<int>() == 336);
  REQUIRE(j.at("ctx").get<int>() == 64);

  const std::string two = forge::metrics_to_jsonl({m, m});
  REQUIRE(std::count(two.begin(), two.end(), '\n') == 2);
  REQUIRE(nlohmann::json::parse(two.substr(0, two.find('\n'))).at("res") ==
          336);
}

TEST_CASE("phase one drives the masked reconstruction loss down") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(16);
  auto state = tiny_state(7);

  StageConfig cfg = toy_stage(1);
  cfg.batch_size = 8;
  cfg.samples_target = 8 * 50;
  cfg.lr_peak = 3e-3;

  CyclingSource src(corpus);
  const auto result = run_toy(cfg, src, state, 123);

  REQUIRE(result.metrics.size() == 50);
  REQUIRE_FALSE(result.early_stopped);
  for (const StepMetrics& m : result.metrics) {
    REQUIRE(std::isfinite(m.loss));
    REQUIRE(m.res == 28);
  }
  REQUIRE(result.metrics.front().step == 1);
  REQUIRE(result.metrics.back().step == 50);

  auto mean_of = [&](size_t from, size_t count) {
    double acc = 0.0;
    for (size_t i = from; i < from + count; ++i)
      acc += result.metrics[i].loss;
    return acc / double(count);
  };
  REQUIRE(mean_of(45, 5) < mean_of(0, 5));
  REQUIRE(result.metrics.back().loss < result.metrics.front().loss);
}

TEST_CASE("phase one trains only the vision tower") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(8);
  auto state = tiny_state(11);

  const auto text_before = snapshot(state, "text");
  const auto proj_before = snapshot(state, "projector");
  const auto dec_before = snapshot(state, "decoder");
  const auto vit_before = snapshot(state, "vit");
  const double tau_before = state.log_tau.at(0, 0);

  StageConfig cfg = toy_stage(1);
  cfg.samples_target = 16;
  CyclingSource src(corpus);
  run_toy(cfg, src, state, 5);

  REQUIRE(component_unchanged(text_before, state, "text"));
  REQUIRE(component_unchanged(proj_before, state, "projector"));
  REQUIRE(component_unchanged(dec_before, state, "decoder"));
  REQUIRE_FALSE(component_unchanged(vit_before, state, "vit"));
  REQUIRE(state.log_tau.at(0, 0) == tau_before);
}

TEST_CASE("phase two starting loss matches a saturated-sigmoid oracle") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(8);
  auto state = tiny_state(21);

  StageConfig cfg = toy_stage(2);
  cfg.batch_size = 8;
  cfg.samples_target = 8;  // single step
  CyclingSource src(corpus);
  const auto result = run_toy(cfg, src, state, 9);
  REQUIRE(result.metrics.size() == 1);
  const double observed = result.metrics.front().loss;

  // Oracle: average the paired-logit loss over random unit embeddings at the
  // same batch size and the same initial temperature / bias.
  Rng rng(4242);
  double acc = 0.0;
  const int trials = 64;
  const size_t n = 8, d = 16;
  for (int t = 0; t < trials; ++t) {
    Tensor<double> img(n, d), txt(n, d);
    for (Tensor<double>* mt : {&img, &txt}) {
      for (size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        std::vector<double> row(d);
        for (size_t jj = 0; jj < d; ++jj) {
          row[jj] = rng.normal();
          norm += row[jj] * row[jj];
        }
        norm = std::sqrt(norm);
        double* md = mt->data_mut();
        for (size_t jj = 0; jj < d; ++jj) md[i * d + jj] = row[jj] / norm;
      }
    }
    forge::SigmoidLossParams<double> params;  // initial temperature and bias
    acc += forge::siglip_loss_value(img, txt, params);
  }
  const double oracle = acc / trials;
  REQUIRE(observed == Catch::Approx(oracle).epsilon(0.20));
}

TEST_CASE("phase two trains the pairing head from the first step") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(8);
  auto state = tiny_state(31);
  const double tau_before = state.log_tau.at(0, 0);
  const double bias_before = state.logit_bias.at(0, 0);
  auto dec_before = snapshot(state, "decoder");
  auto text_before = snapshot(state, "text");

  StageConfig cfg = toy_stage(2);
  cfg.batch_size = 8;
  cfg.samples_target = 8;  // one step at progress == 0: text still frozen
  cfg.text_unfreeze_fraction = 0.5;
  CyclingSource src(corpus);
  const auto result = run_toy(cfg, src, state, 13);
  REQUIRE(result.metrics.size() == 1);

  REQUIRE(state.log_tau.at(0, 0) != tau_before);
  REQUIRE(state.logit_bias.at(0, 0) != bias_before);
  REQUIRE(component_unchanged(dec_before, state, "decoder"));
  REQUIRE(component_unchanged(text_before, state, "text"));
}

TEST_CASE("phase two unfreezes the text tower mid-run") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(8);
  auto state = tiny_state(41);
  auto text_before = snapshot(state, "text");

  StageConfig cfg = toy_stage(2);
  cfg.batch_size = 8;
  cfg.samples_target = 8 * 4;  // progress 0, 1/3, 2/3, 1
  cfg.text_unfreeze_fraction = 0.5;
  CyclingSource src(corpus);
  run_toy(cfg, src, state, 17);

  REQUIRE_FALSE(component_unchanged(text_before, state, "text"));
}

TEST_CASE("phase three trains decoder and projector over region tasks") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(8);
  auto state = tiny_state(51);
  auto text_before = snapshot(state, "text");
  auto dec_before = snapshot(state, "decoder");
  auto proj_before = snapshot(state, "projector");
  const double tau_before = state.log_tau.at(0, 0);

  StageConfig cfg = toy_stage(3);
  cfg.batch_size = 4;
  cfg.samples_target = 4 * 3;
  cfg.context_cap_schedule = {48, 64};
  CyclingSource src(corpus);
  const auto result = run_toy(cfg, src, state, 19);

  REQUIRE(result.metrics.size() == 3);
  for (const StepMetrics& m : result.metrics) REQUIRE(std::isfinite(m.loss));
  REQUIRE(component_unchanged(text_before, state, "text"));
  REQUIRE(state.log_tau.at(0, 0) == tau_before);
  REQUIRE_FALSE(component_unchanged(dec_before, state, "decoder"));
  REQUIRE_FALSE(component_unchanged(proj_before, state, "projector"));
}

TEST_CASE("training runs are reproducible from the seed") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(8);

  auto run_once = [&](forge::ModelState<double>& state) {
    StageConfig cfg = toy_stage(1);
    cfg.samples_target = 8 * 5;
    CyclingSource src(corpus);
    return run_toy(cfg, src, state, 77);
  };

  auto state_a = tiny_state(3);
  auto state_b = tiny_state(3);
  const auto ra = run_once(state_a);
  const auto rb = run_once(state_b);

  REQUIRE(forge::metrics_to_jsonl(ra.metrics) ==
          forge::metrics_to_jsonl(rb.metrics));
  const auto a_vit = snapshot(state_a, "vit");
  REQUIRE(component_unchanged(a_vit, state_b, "vit"));
}

TEST_CASE("a bounded source stops a run early") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(10);

  auto state = tiny_state(61);
  StageConfig cfg = toy_stage(1);
  cfg.batch_size = 4;
  cfg.samples_target = 100;  // would need 25 steps; only 10 records exist
  BoundedSource src(corpus);
  const auto result = run_toy(cfg, src, state, 23);

  REQUIRE(result.early_stopped);
  REQUIRE(result.metrics.size() == 3);  // batches of 4 + 4 + 2 records
}

TEST_CASE("metrics report the scheduled resolution and context") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(8);
  auto state = tiny_state(71);

  StageConfig cfg = toy_stage(2);
  cfg.batch_size = 8;
  cfg.samples_target = 8 * 3;
  cfg.resolution_schedule = {28, 56};
  cfg.max_resolution = 56;
  cfg.context_cap_schedule = {8, 16};
  CyclingSource src(corpus);
  const auto result = run_toy(cfg, src, state, 29);

  REQUIRE(result.metrics.size() == 3);
  REQUIRE(result.metrics[0].res == 28);
  REQUIRE(result.metrics[2].res == 56);
  REQUIRE(result.metrics[0].ctx == 8);
  REQUIRE(result.metrics[2].ctx == 16);
  for (size_t i = 1; i < result.metrics.size(); ++i) {
    REQUIRE(result.metrics[i].res >= result.metrics[i - 1].res);
    REQUIRE(result.metrics[i].ctx >= result.metrics[i - 1].ctx);
  }
}

TEST_CASE("step hook streams the same rows the result returns") {
  auto corpus = forge::make_shape_corpus();
  corpus.resize(8);
  auto state = tiny_state(81);

  StageConfig cfg = toy_stage(1);
  cfg.samples_target = 8 * 2;
  CyclingSource src(corpus);
  RunHooks<double> hooks;
  hooks.render = forge::toy_renderer();
  std::vector<StepMetrics> streamed;
  hooks.on_step = [&](const StepMetrics& m) { streamed.push_back(m); };
  const auto result = forge::run_stage(cfg, src, state, 31, hooks);

  REQUIRE(forge::metrics_to_jsonl(streamed) ==
          forge::metrics_to_jsonl(result.metrics));
}

TEST_CASE("toy renders are deterministic and well formed") {
  const auto corpus = forge::make_shape_corpus();
  REQUIRE(corpus.size() == 64);

  const auto& rec = corpus[5];
  const auto render = forge::toy_renderer();
  const auto a = render(rec, 56);
  const auto b = render(rec, 56);
  REQUIRE(a.width == 56);
  REQUIRE(a.height == 56);
  REQUIRE(a.rgb == b.rgb);
  for (double v : a.rgb) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }

  // Distinct records disagree somewhere.
  const auto c = render(corpus[6], 56);
  REQUIRE(a.rgb != c.rgb);

  // Capping the longer side rescales the canvas onto the patch grid.
  const auto small = render(rec, 28);
  REQUIRE(small.width == 28);
  REQUIRE(small.height == 28);
}

TEST_CASE("toy corpus records carry usable captions and regions") {
  const auto corpus = forge::make_shape_corpus();
  std::set<std::string> ids;
  std::set<uint64_t> hashes;
  for (const auto& rec : corpus) {
    REQUIRE(ids.insert(rec.image_id).second);
    hashes.insert(rec.phash);
    REQUIRE_FALSE(rec.captions.empty());
    REQUIRE_FALSE(rec.captions[0].text.empty());
    REQUIRE_FALSE(rec.regions.empty());
    REQUIRE(rec.regions[0].box.valid());
    REQUIRE(rec.regions[0].box.x2 <= double(rec.width));
    REQUIRE(rec.regions[0].box.y2 <= double(rec.height));
  }
  // Renders must be visually distinct enough for dedup to keep all of them.
  REQUIRE(hashes.size() == corpus.size());
}

TEST_CASE("sample manifest covers every curation rule with unique ids") {
  const auto manifest = forge::make_sample_manifest();
  REQUIRE(manifest.size() == 100);
  std::set<std::string> ids;
  for (const auto& rec : manifest) REQUIRE(ids.insert(rec.image_id).second);
}
