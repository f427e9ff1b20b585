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

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/common.hpp"
#include "forge/graph.hpp"
#include "forge/manifest.hpp"
#include "forge/patching.hpp"
#include "forge/rng.hpp"
#include "forge/tensor.hpp"

namespace forge {

inline constexpr double kRopeBase = 10000.0;

// ---------------------------------------------------------------------------
// Byte-level tokenizer: ids 0..255 are raw bytes, plus four specials.
// ---------------------------------------------------------------------------

inline constexpr int kVocabSize = 260;
inline constexpr int kTokenBos = 256;
inline constexpr int kTokenEos = 257;
inline constexpr int kTokenSep = 258;
inline constexpr int kTokenPad = 259;

struct TextTokens {
  std::vector<int> ids;  // each < kVocabSize
  int max_len = 0;
  bool truncated = false;
};

// Byte ids for `text`, truncated to max_len with the flag set — never
// silently. The begin-of-sequence token is NOT included here; encoders and
// the decoder prepend it themselves.
inline TextTokens tokenize(const std::string& text, int max_len) {
  FORGE_CHECK(max_len >= 1, "tokenize: max_len must be >= 1, got ", max_len);
  TextTokens t;
  t.max_len = max_len;
  for (unsigned char c : text) {
    if (int(t.ids.size()) == max_len) {
      t.truncated = true;
      break;
    }
    t.ids.push_back(int(c));
  }
  return t;
}

inline std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids)
    if (id >= 0 && id < 256) out += char(static_cast<unsigned char>(id));
  return out;
}

// ---------------------------------------------------------------------------
// Network geometry.
// ---------------------------------------------------------------------------

struct EncoderConfig {
  int depth = 2;
  int patch = 14;
  int hidden = 32;
  int intermediate = 64;
  int heads = 4;

  int patch_dim() const { return patch * patch * 3; }
  int head_dim() const { return hidden / heads; }

  void validate() const {
    FORGE_CHECK(depth >= 1 && patch >= 1 && hidden >= 1 && intermediate >= 1 &&
                    heads >= 1,
                "EncoderConfig: all dimensions must be positive");
    FORGE_CHECK(hidden % heads == 0, "EncoderConfig: hidden ", hidden,
                " not divisible by heads ", heads);
    FORGE_CHECK((hidden / heads) % 4 == 0, "EncoderConfig: head width ",
                hidden / heads, " not divisible by 4");
  }

  // The 28-layer production geometry.
  static EncoderConfig full_scale() {
    EncoderConfig c;
    c.depth = 28;
    c.patch = 14;
    c.hidden = 1536;
    c.intermediate = 4608;
    c.heads = 16;
    return c;
  }
};

struct TextConfig {
  int depth = 2;
  int hidden = 32;
  int intermediate = 64;
  int heads = 4;
  int vocab = kVocabSize;

  int head_dim() const { return hidden / heads; }

  void validate() const {
    FORGE_CHECK(depth >= 1 && hidden >= 1 && intermediate >= 1 && heads >= 1,
                "TextConfig: all dimensions must be positive");
    FORGE_CHECK(hidden % heads == 0, "TextConfig: hidden ", hidden,
                " not divisible by heads ", heads);
    FORGE_CHECK((hidden / heads) % 4 == 0, "TextConfig: head width ",
                hidden / heads, " not divisible by 4");
    FORGE_CHECK(vocab == kVocabSize, "TextConfig: vocab must be ", kVocabSize,
                ", got ", vocab);
  }
};

struct DecoderConfig {
  int depth = 2;
  int hidden = 64;
  int intermediate = 128;
  int heads = 4;
  int vocab = kVocabSize;

  int head_dim() const { return hidden / heads; }

  void validate() const {
    FORGE_CHECK(depth >= 1 && hidden >= 1 && intermediate >= 1 && heads >= 1,
                "DecoderConfig: all dimensions must be positive");
    FORGE_CHECK(hidden % heads == 0, "DecoderConfig: hidden ", hidden,
                " not divisible by heads ", heads);
    FORGE_CHECK((hidden / heads) % 4 == 0, "DecoderConfig: head width ",
                hidden / heads, " not divisible by 4");
    FORGE_CHECK(vocab == kVocabSize, "DecoderConfig: vocab must be ",
                kVocabSize, ", got ", vocab);
  }
};

// ---------------------------------------------------------------------------
// Parameters. Every tensor lives in exactly one component; for_each_param
// walks them in a fixed order that init, optimizers, and checkpoints share.
// ---------------------------------------------------------------------------

template <typename T>
struct AttnParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct BlockParams {
  Tensor<T> ln1_g, ln1_b;
  AttnParams<T> attn;
  Tensor<T> ln2_g, ln2_b;
  // Gated feed-forward: silu(x@w_gate) * (x@w_up) @ w_down.
  Tensor<T> w_gate, b_gate, w_up, b_up, w_down, b_down;
};

template <typename T>
struct EncoderParams {
  Tensor<T> patch_embed_w, patch_embed_b;  // (patch_dim, h), (1, h)
  Tensor<T> mask_token;                    // (1, h)
  std::vector<BlockParams<T>> blocks;
  Tensor<T> ln_f_g, ln_f_b;
};

template <typename T>
struct TextParams {
  Tensor<T> tok_embed;  // (vocab, h)
  std::vector<BlockParams<T>> blocks;
  Tensor<T> ln_f_g, ln_f_b;
};

template <typename T>
struct ProjectorParams {
  Tensor<T> w1, b1;  // (enc_h, dec_h), (1, dec_h)
  Tensor<T> w2, b2;  // (dec_h, dec_h), (1, dec_h)
};

template <typename T>
struct DecoderParams {
  Tensor<T> tok_embed;  // (vocab, h)
  std::vector<BlockParams<T>> blocks;
  Tensor<T> ln_f_g, ln_f_b;
  Tensor<T> lm_head_w, lm_head_b;  // (h, vocab), (1, vocab)
};

inline const std::vector<std::string>& component_names() {
  static const std::vector<std::string> names = {"vit", "text", "projector",
                                                 "decoder", "head"};
  return names;
}

template <typename T>
struct ModelState {
  EncoderConfig vit_cfg;
  TextConfig text_cfg;
  DecoderConfig dec_cfg;
  EncoderParams<T> vit;
  TextParams<T> text;
  ProjectorParams<T> projector;
  DecoderParams<T> decoder;
  // Contrastive head: temperature stored as log_tau so tau = exp(log_tau)
  // stays positive by construction; additive bias on the pair logits.
  Tensor<T> log_tau;
  Tensor<T> logit_bias;
  std::map<std::string, bool> trainable;

  bool is_trainable(const std::string& component) const {
    auto it = trainable.find(component);
    FORGE_CHECK(it != trainable.end(), "ModelState: unknown component \"",
                component, "\"");
    return it->second;
  }
};

namespace detail {

template <typename T, typename Fn>
void walk_block(BlockParams<T>& b, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".ln1_g", b.ln1_g);
  fn(prefix + ".ln1_b", b.ln1_b);
  fn(prefix + ".wq", b.attn.wq);
  fn(prefix + ".bq", b.attn.bq);
  fn(prefix + ".wk", b.attn.wk);
  fn(prefix + ".bk", b.attn.bk);
  fn(prefix + ".wv", b.attn.wv);
  fn(prefix + ".bv", b.attn.bv);
  fn(prefix + ".wo", b.attn.wo);
  fn(prefix + ".bo", b.attn.bo);
  fn(prefix + ".ln2_g", b.ln2_g);
  fn(prefix + ".ln2_b", b.ln2_b);
  fn(prefix + ".w_gate", b.w_gate);
  fn(prefix + ".b_gate", b.b_gate);
  fn(prefix + ".w_up", b.w_up);
  fn(prefix + ".b_up", b.b_up);
  fn(prefix + ".w_down", b.w_down);
  fn(prefix + ".b_down", b.b_down);
}

}  // namespace detail

// Visits every parameter as (component, name, tensor&) in a fixed order.
template <typename T, typename Fn>
void for_each_param(ModelState<T>& state, Fn&& fn) {
  auto visit = [&fn](const char* comp) {
    return [comp, &fn](const std::string& name, Tensor<T>& t) {
      fn(comp, name, t);
    };
  };
  auto vit = visit("vit");
  vit("patch_embed_w", state.vit.patch_embed_w);
  vit("patch_embed_b", state.vit.patch_embed_b);
  vit("mask_token", state.vit.mask_token);
  for (size_t i = 0; i < state.vit.blocks.size(); ++i)
    detail::walk_block(state.vit.blocks[i], "blocks." + std::to_string(i), vit);
  vit("ln_f_g", state.vit.ln_f_g);
  vit("ln_f_b", state.vit.ln_f_b);

  auto text = visit("text");
  text("tok_embed", state.text.tok_embed);
  for (size_t i = 0; i < state.text.blocks.size(); ++i)
    detail::walk_block(state.text.blocks[i], "blocks." + std::to_string(i),
                       text);
  text("ln_f_g", state.text.ln_f_g);
  text("ln_f_b", state.text.ln_f_b);

  auto proj = visit("projector");
  proj("w1", state.projector.w1);
  proj("b1", state.projector.b1);
  proj("w2", state.projector.w2);
  proj("b2", state.projector.b2);

  auto dec = visit("decoder");
  dec("tok_embed", state.decoder.tok_embed);
  for (size_t i = 0; i < state.decoder.blocks.size(); ++i)
    detail::walk_block(state.decoder.blocks[i], "blocks." + std::to_string(i),
                       dec);
  dec("ln_f_g", state.decoder.ln_f_g);
  dec("ln_f_b", state.decoder.ln_f_b);
  dec("lm_head_w", state.decoder.lm_head_w);
  dec("lm_head_b", state.decoder.lm_head_b);

  auto head = visit("head");
  head("log_tau", state.log_tau);
  head("logit_bias", state.logit_bias);
}

// ---------------------------------------------------------------------------
// Initialization: weights and embeddings ~ N(0, 0.02), layernorm gains 1,
// every bias 0. Temperature starts at 10 (stored as its log) and the pair
// bias at -10.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> w_init(size_t r, size_t c, Rng& rng) {
  return Tensor<T>::randn(r, c, rng, T(0.02));
}

template <typename T>
BlockParams<T> init_block(int hidden, int intermediate, Rng& rng) {
  const size_t h = size_t(hidden), m = size_t(intermediate);
  BlockParams<T> b;
  b.ln1_g = Tensor<T>::full(1, h, T(1));
  b.ln1_b = Tensor<T>::zeros(1, h);
  b.attn.wq = w_init<T>(h, h, rng);
  b.attn.bq = Tensor<T>::zeros(1, h);
  b.attn.wk = w_init<T>(h, h, rng);
  b.attn.bk = Tensor<T>::zeros(1, h);
  b.attn.wv = w_init<T>(h, h, rng);
  b.attn.bv = Tensor<T>::zeros(1, h);
  b.attn.wo = w_init<T>(h, h, rng);
  b.attn.bo = Tensor<T>::zeros(1, h);
  b.ln2_g = Tensor<T>::full(1, h, T(1));
  b.ln2_b = Tensor<T>::zeros(1, h);
  b.w_gate = w_init<T>(h, m, rng);
  b.b_gate = Tensor<T>::zeros(1, m);
  b.w_up = w_init<T>(h, m, rng);
  b.b_up = Tensor<T>::zeros(1, m);
  b.w_down = w_init<T>(m, h, rng);
  b.b_down = Tensor<T>::zeros(1, h);
  return b;
}

}  // namespace detail

template <typename T>
ModelState<T> init_model_state(const EncoderConfig& vit_cfg,
                               const TextConfig& text_cfg,
                               const DecoderConfig& dec_cfg, uint64_t seed) {
  vit_cfg.validate();
  text_cfg.validate();
  dec_cfg.validate();
  FORGE_CHECK(text_cfg.hidden == vit_cfg.hidden,
              "init_model_state: text hidden ", text_cfg.hidden,
              " must match image hidden ", vit_cfg.hidden,
              " for the contrastive dot product");
  ModelState<T> s;
  s.vit_cfg = vit_cfg;
  s.text_cfg = text_cfg;
  s.dec_cfg = dec_cfg;
  Rng rng = Rng(seed).substream("init");

  const size_t eh = size_t(vit_cfg.hidden);
  s.vit.patch_embed_w = detail::w_init<T>(size_t(vit_cfg.patch_dim()), eh, rng);
  s.vit.patch_embed_b = Tensor<T>::zeros(1, eh);
  s.vit.mask_token = detail::w_init<T>(1, eh, rng);
  for (int i = 0; i < vit_cfg.depth; ++i)
    s.vit.blocks.push_back(
        detail::init_block<T>(vit_cfg.hidden, vit_cfg.intermediate, rng));
  s.vit.ln_f_g = Tensor<T>::full(1, eh, T(1));
  s.vit.ln_f_b = Tensor<T>::zeros(1, eh);

  const size_t th = size_t(text_cfg.hidden);
  s.text.tok_embed = detail::w_init<T>(size_t(text_cfg.vocab), th, rng);
  for (int i = 0; i < text_cfg.depth; ++i)
    s.text.blocks.push_back(
        detail::init_block<T>(text_cfg.hidden, text_cfg.intermediate, rng));
  s.text.ln_f_g = Tensor<T>::full(1, th, T(1));
  s.text.ln_f_b = Tensor<T>::zeros(1, th);

  const size_t dh = size_t(dec_cfg.hidden);
  s.projector.w1 = detail::w_init<T>(eh, dh, rng);
  s.projector.b1 = Tensor<T>::zeros(1, dh);
  s.projector.w2 = detail::w_init<T>(dh, dh, rng);
  s.projector.b2 = Tensor<T>::zeros(1, dh);

  s.decoder.tok_embed = detail::w_init<T>(size_t(dec_cfg.vocab), dh, rng);
  for (int i = 0; i < dec_cfg.depth; ++i)
    s.decoder.blocks.push_back(
        detail::init_block<T>(dec_cfg.hidden, dec_cfg.intermediate, rng));
  s.decoder.ln_f_g = Tensor<T>::full(1, dh, T(1));
  s.decoder.ln_f_b = Tensor<T>::zeros(1, dh);
  s.decoder.lm_head_w = detail::w_init<T>(dh, size_t(dec_cfg.vocab), rng);
  s.decoder.lm_head_b = Tensor<T>::zeros(1, size_t(dec_cfg.vocab));

  s.log_tau = Tensor<T>::scalar(T(std::log(10.0)));
  s.logit_bias = Tensor<T>::scalar(T(-10.0));

  for (const auto& name : component_names()) s.trainable[name] = true;
  return s;
}

// ---------------------------------------------------------------------------
// Analytic parameter counts (valid at any scale without allocating).
// ---------------------------------------------------------------------------

inline long long block_param_count(long long h, long long m) {
  const long long ln = 2 * (2 * h);               // two layernorms
  const long long attn = 4 * (h * h + h);         // q, k, v, out projections
  const long long ffn = 2 * (h * m + m) + (m * h + h);  // gate, up, down
  return ln + attn + ffn;
}

inline long long encoder_param_count(const EncoderConfig& c) {
  const long long h = c.hidden;
  const long long embed = (long long)c.patch_dim() * h + h;
  const long long mask = h;
  const long long final_ln = 2 * h;
  return embed + mask + c.depth * block_param_count(h, c.intermediate) +
         final_ln;
}

inline long long text_param_count(const TextConfig& c) {
  const long long h = c.hidden;
  return (long long)c.vocab * h +
         c.depth * block_param_count(h, c.intermediate) + 2 * h;
}

inline long long decoder_param_count(const DecoderConfig& c) {
  const long long h = c.hidden;
  return (long long)c.vocab * h +
         c.depth * block_param_count(h, c.intermediate) + 2 * h +
         (h * (long long)c.vocab + c.vocab);
}

inline long long projector_param_count(int enc_hidden, int dec_hidden) {
  const long long e = enc_hidden, d = dec_hidden;
  return (e * d + d) + (d * d + d);
}

template <typename T>
long long allocated_param_count(ModelState<T>& state) {
  long long n = 0;
  for_each_param(state, [&n](const char*, const std::string&, Tensor<T>& t) {
    n += (long long)(t.rows() * t.cols());
  });
  return n;
}

// ---------------------------------------------------------------------------
// Parameter binding: one graph leaf per distinct parameter tensor, so that
// repeated uses within a step accumulate into a single gradient.
// ---------------------------------------------------------------------------

template <typename T>
class ParamBinder {
 public:
  explicit ParamBinder(Graph<T>& g) : g_(&g) {}

  Var<T> operator()(const Tensor<T>& t, bool trainable) {
    const void* key = t.data();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    Var<T> v = trainable ? g_->input(t, /*requires_grad=*/true)
                         : g_->constant(t);
    cache_.emplace(key, v);
    return v;
  }

  // The leaf bound to `t` in this graph, if any.
  std::optional<Var<T>> bound(const Tensor<T>& t) const {
    auto it = cache_.find(t.data());
    if (it == cache_.end()) return std::nullopt;
    return it->second;
  }

  Graph<T>& graph() const { return *g_; }

 private:
  Graph<T>* g_;
  std::map<const void*, Var<T>> cache_;
};

// ---------------------------------------------------------------------------
// Shared transformer block: pre-norm attention with rotary positions, then a
// pre-norm gated feed-forward, both with residual connections.
// ---------------------------------------------------------------------------

template <typename T>
struct BlockCtx {
  std::shared_ptr<RopeTable> rope;
  int heads = 1;
  std::optional<Var<T>> attn_bias;  // additive (n, n); 0 allowed, -1e30 not
  bool train = false;
};

template <typename T>
Var<T> attention(Graph<T>& g, ParamBinder<T>& pb, const AttnParams<T>& p,
                 Var<T> x, const BlockCtx<T>& ctx) {
  const size_t h = x.cols();
  FORGE_SHAPE_CHECK(h % size_t(ctx.heads) == 0, "attention: width ", h,
                    " not divisible by ", ctx.heads, " heads");
  const size_t hd = h / size_t(ctx.heads);
  Var<T> q = add(matmul(x, pb(p.wq, ctx.train)), pb(p.bq, ctx.train));
  Var<T> k = add(matmul(x, pb(p.wk, ctx.train)), pb(p.bk, ctx.train));
  Var<T> v = add(matmul(x, pb(p.wv, ctx.train)), pb(p.bv, ctx.train));
  const T inv_sqrt = T(1) / T(std::sqrt(double(hd)));
  std::vector<Var<T>> heads_out;
  heads_out.reserve(size_t(ctx.heads));
  for (int head = 0; head < ctx.heads; ++head) {
    Var<T> qh = rope2d(slice_cols(q, size_t(head) * hd, hd), ctx.rope);
    Var<T> kh = rope2d(slice_cols(k, size_t(head) * hd, hd), ctx.rope);
    Var<T> vh = slice_cols(v, size_t(head) * hd, hd);
    Var<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (ctx.attn_bias) scores = add(scores, *ctx.attn_bias);
    heads_out.push_back(matmul(softmax_rows(scores), vh));
  }
  Var<T> cat = ctx.heads == 1 ? heads_out[0] : concat_cols(heads_out);
  return add(matmul(cat, pb(p.wo, ctx.train)), pb(p.bo, ctx.train));
}

template <typename T>
Var<T> gated_ffn(Graph<T>& g, ParamBinder<T>& pb, const BlockParams<T>& p,
                 Var<T> x, bool train) {
  Var<T> gate = silu(add(matmul(x, pb(p.w_gate, train)), pb(p.b_gate, train)));
  Var<T> up = add(matmul(x, pb(p.w_up, train)), pb(p.b_up, train));
  return add(matmul(mul(gate, up), pb(p.w_down, train)), pb(p.b_down, train));
}

template <typename T>
Var<T> transformer_block(Graph<T>& g, ParamBinder<T>& pb,
                         const BlockParams<T>& p, Var<T> x,
                         const BlockCtx<T>& ctx) {
  Var<T> normed1 =
      layernorm_rows(x, pb(p.ln1_g, ctx.train), pb(p.ln1_b, ctx.train));
  x = add(x, attention(g, pb, p.attn, normed1, ctx));
  Var<T> normed2 =
      layernorm_rows(x, pb(p.ln2_g, ctx.train), pb(p.ln2_b, ctx.train));
  return add(x, gated_ffn(g, pb, p, normed2, ctx.train));
}

// ---------------------------------------------------------------------------
// Image encoder.
// ---------------------------------------------------------------------------

template <typename T>
struct EncodedImage {
  Var<T> patch_features;  // (tokens, hidden), after the final layernorm
  Var<T> pooled;          // (1, hidden), unit norm
};

inline std::vector<GridPos> sequence_positions(size_t n) {
  std::vector<GridPos> pos(n);
  for (size_t i = 0; i < n; ++i) pos[i] = GridPos{int(i), 0};
  return pos;
}

template <typename T>
EncodedImage<T> encode_image(Graph<T>& g, ParamBinder<T>& pb,
                             const ModelState<T>& state,
                             const TokenSequence<T>& seq,
                             const MaskSet* mask = nullptr) {
  const EncoderConfig& cfg = state.vit_cfg;
  cfg.validate();
  const size_t n = seq.token_count();
  FORGE_CHECK(n > 0, "encode_image: empty token sequence");
  FORGE_SHAPE_CHECK(seq.patches.rows() == n && seq.patches.cols() ==
                        size_t(cfg.patch_dim()),
                    "encode_image: patches ", seq.patches.shape_str(),
                    " do not match ", n, " tokens of dim ", cfg.patch_dim());
  FORGE_SHAPE_CHECK(state.vit.patch_embed_w.rows() == size_t(cfg.patch_dim()),
                    "encode_image: state built for patch dim ",
                    state.vit.patch_embed_w.rows(), ", config wants ",
                    cfg.patch_dim());
  const bool train = state.is_trainable("vit");

  Var<T> x = add(matmul(g.constant(seq.patches), pb(state.vit.patch_embed_w, train)),
                 pb(state.vit.patch_embed_b, train));
  if (mask != nullptr && mask->count() > 0) {
    Tensor<T> keep = Tensor<T>::full(n, 1, T(1));
    Tensor<T> pick = Tensor<T>::zeros(n, 1);
    T* keep_d = keep.data_mut();
    T* pick_d = pick.data_mut();
    for (size_t i : mask->indices) {
      FORGE_CHECK(i < n, "encode_image: mask index ", i, " out of range ", n);
      keep_d[i] = T(0);
      pick_d[i] = T(1);
    }
    x = add(mul(x, g.constant(keep)),
            matmul(g.constant(pick), pb(state.vit.mask_token, train)));
  }

  auto rope = RopeTable::build(std::span<const GridPos>(seq.positions),
                               size_t(cfg.head_dim()), kRopeBase);
  BlockCtx<T> ctx{rope, cfg.heads, std::nullopt, train};
  for (const auto& block : state.vit.blocks)
    x = transformer_block(g, pb, block, x, ctx);
  x = layernorm_rows(x, pb(state.vit.ln_f_g, train),
                     pb(state.vit.ln_f_b, train));
  return EncodedImage<T>{x, l2_normalize_rows(mean_rows(x))};
}

// ---------------------------------------------------------------------------
// Text encoder: bidirectional over [BOS] + byte ids, mean-pooled, unit norm.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> encode_text(Graph<T>& g, ParamBinder<T>& pb, const ModelState<T>& state,
                   const TextTokens& tokens) {
  const TextConfig& cfg = state.text_cfg;
  cfg.validate();
  FORGE_CHECK(int(tokens.ids.size()) <= tokens.max_len || tokens.max_len == 0,
              "encode_text: ", tokens.ids.size(), " ids exceed context cap ",
              tokens.max_len);
  const bool train = state.is_trainable("text");

  std::vector<int> ids;
  ids.reserve(tokens.ids.size() + 1);
  ids.push_back(kTokenBos);
  for (int id : tokens.ids) {
    FORGE_CHECK(id >= 0 && id < cfg.vocab, "encode_text: token id ", id,
                " outside vocabulary of ", cfg.vocab);
    ids.push_back(id);
  }

  Var<T> x = gather_rows(pb(state.text.tok_embed, train), ids);
  const std::vector<GridPos> pos = sequence_positions(ids.size());
  auto rope = RopeTable::build(std::span<const GridPos>(pos),
                               size_t(cfg.head_dim()), kRopeBase);
  BlockCtx<T> ctx{rope, cfg.heads, std::nullopt, train};
  for (const auto& block : state.text.blocks)
    x = transformer_block(g, pb, block, x, ctx);
  x = layernorm_rows(x, pb(state.text.ln_f_g, train),
                     pb(state.text.ln_f_b, train));
  return l2_normalize_rows(mean_rows(x));
}

// ---------------------------------------------------------------------------
// Projector: two affine layers with a SiLU between, mapping encoder features
// into the decoder's embedding space, one vector per patch.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> project(Graph<T>& g, ParamBinder<T>& pb, const ModelState<T>& state,
               Var<T> patch_features) {
  FORGE_SHAPE_CHECK(patch_features.cols() == state.projector.w1.rows(),
                    "project: features of dim ", patch_features.cols(),
                    " vs projector input ", state.projector.w1.rows());
  const bool train = state.is_trainable("projector");
  Var<T> hidden = silu(add(matmul(patch_features, pb(state.projector.w1, train)),
                           pb(state.projector.b1, train)));
  return add(matmul(hidden, pb(state.projector.w2, train)),
             pb(state.projector.b2, train));
}

// ---------------------------------------------------------------------------
// Decoder: a prefix language model. Projected visual tokens form a prefix
// that attends within itself; text positions attend to the whole prefix and
// causally among themselves. Row i of the returned logits scores token i of
// `ids` given the prefix and ids[0..i-1] (teacher forcing: the input row for
// position i is BOS for i = 0, else ids[i-1]).
// ---------------------------------------------------------------------------

template <typename T>
Var<T> decode(Graph<T>& g, ParamBinder<T>& pb, const ModelState<T>& state,
              std::type_identity_t<std::optional<Var<T>>> visual_prefix,
              const std::vector<int>& ids) {
  const DecoderConfig& cfg = state.dec_cfg;
  cfg.validate();
  FORGE_CHECK(!ids.empty(), "decode: need at least one text position");
  const size_t P = visual_prefix ? visual_prefix->rows() : 0;
  const size_t L = ids.size();
  const size_t S = P + L;
  if (visual_prefix)
    FORGE_SHAPE_CHECK(visual_prefix->cols() == size_t(cfg.hidden),
                      "decode: prefix width ", visual_prefix->cols(),
                      " vs decoder hidden ", cfg.hidden);
  const bool train = state.is_trainable("decoder");

  std::vector<int> input_ids(L);
  input_ids[0] = kTokenBos;
  for (size_t i = 1; i < L; ++i) {
    FORGE_CHECK(ids[i - 1] >= 0 && ids[i - 1] < cfg.vocab,
                "decode: token id ", ids[i - 1], " outside vocabulary of ",
                cfg.vocab);
    input_ids[i] = ids[i - 1];
  }
  FORGE_CHECK(ids[L - 1] >= 0 && ids[L - 1] < cfg.vocab, "decode: token id ",
              ids[L - 1], " outside vocabulary of ", cfg.vocab);

  Var<T> text_embed = gather_rows(pb(state.decoder.tok_embed, train), input_ids);
  Var<T> x = visual_prefix
                 ? concat_rows(std::vector<Var<T>>{*visual_prefix, text_embed})
                 : text_embed;

  // Additive mask: prefix rows see only the prefix; text rows see the prefix
  // plus earlier text. Disallowed pairs get -1e30, which underflows to an
  // exact zero after the softmax, so future tokens cannot perturb a single
  // bit of earlier rows.
  Tensor<T> bias = Tensor<T>::zeros(S, S);
  T* bd = bias.data_mut();
  for (size_t i = 0; i < S; ++i)
    for (size_t j = 0; j < S; ++j) {
      const bool allowed = i < P ? (j < P) : (j < P || j <= i);
      if (!allowed) bd[i * S + j] = T(-1e30);
    }

  const std::vector<GridPos> pos = sequence_positions(S);
  auto rope = RopeTable::build(std::span<const GridPos>(pos),
                               size_t(cfg.head_dim()), kRopeBase);
  BlockCtx<T> ctx{rope, cfg.heads, g.constant(bias), train};
  for (const auto& block : state.decoder.blocks)
    x = transformer_block(g, pb, block, x, ctx);
  x = layernorm_rows(x, pb(state.decoder.ln_f_g, train),
                     pb(state.decoder.ln_f_b, train));

  std::vector<int> text_rows(L);
  for (size_t i = 0; i < L; ++i) text_rows[i] = int(P + i);
  Var<T> text_states = gather_rows(x, text_rows);
  return add(matmul(text_states, pb(state.decoder.lm_head_w, train)),
             pb(state.decoder.lm_head_b, train));
}

// ---------------------------------------------------------------------------
// Greedy generation. Each step re-runs the full forward pass (no KV cache by
// design); the next token is the argmax over the last row's logits, ties to
// the lower id. Returns the generated ids, stopping before EOS.
// ---------------------------------------------------------------------------

template <typename T>
std::vector<int> generate(const ModelState<T>& state,
                          const TokenSequence<T>& seq,
                          const std::vector<int>& prompt_ids,
                          int max_new_tokens) {
  FORGE_CHECK(max_new_tokens >= 0, "generate: negative token budget");
  std::vector<int> ids = prompt_ids;
  std::vector<int> out;
  for (int step = 0; step < max_new_tokens; ++step) {
    Graph<T> g;
    ParamBinder<T> pb(g);
    EncodedImage<T> enc = encode_image(g, pb, state, seq);
    Var<T> prefix = project(g, pb, state, enc.patch_features);
    // A trailing placeholder buys a logits row for the next position; its
    // value never reaches the inputs (teacher forcing shifts right).
    std::vector<int> probe = ids;
    probe.push_back(kTokenPad);
    Var<T> logits = decode(g, pb, state, prefix, probe);
    const Tensor<T>& lv = logits.value();
    const size_t row = lv.rows() - 1;
    int best = 0;
    T best_val = lv.at(row, 0);
    for (size_t c = 1; c < lv.cols(); ++c)
      if (lv.at(row, c) > best_val) {
        best_val = lv.at(row, c);
        best = int(c);
      }
    if (best == kTokenEos) break;
    out.push_back(best);
    ids.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, little-endian u64 header length, JSON header (configs,
// trainable flags, parameter inventory), then one float32 blob in
// for_each_param order. Round trips are bit-exact.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'F', 'O', 'R', 'G',
                                             'E', 'C', 'K', '1'};

inline ojson encoder_config_to_json(const EncoderConfig& c) {
  return ojson{{"depth", c.depth},
               {"patch", c.patch},
               {"hidden", c.hidden},
               {"intermediate", c.intermediate},
               {"heads", c.heads}};
}

inline EncoderConfig encoder_config_from_json(const ojson& j) {
  EncoderConfig c;
  c.depth = j.at("depth").get<int>();
  c.patch = j.at("patch").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.intermediate = j.at("intermediate").get<int>();
  c.heads = j.at("heads").get<int>();
  return c;
}

inline ojson text_config_to_json(const TextConfig& c) {
  return ojson{{"depth", c.depth},
               {"hidden", c.hidden},
               {"intermediate", c.intermediate},
               {"heads", c.heads},
               {"vocab", c.vocab}};
}

inline TextConfig text_config_from_json(const ojson& j) {
  TextConfig c;
  c.depth = j.at("depth").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.intermediate = j.at("intermediate").get<int>();
  c.heads = j.at("heads").get<int>();
  c.vocab = j.at("vocab").get<int>();
  return c;
}

inline ojson decoder_config_to_json(const DecoderConfig& c) {
  return ojson{{"depth", c.depth},
               {"hidden", c.hidden},
               {"intermediate", c.intermediate},
               {"heads", c.heads},
               {"vocab", c.vocab}};
}

inline DecoderConfig decoder_config_from_json(const ojson& j) {
  DecoderConfig c;
  c.depth = j.at("depth").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.intermediate = j.at("intermediate").get<int>();
  c.heads = j.at("heads").get<int>();
  c.vocab = j.at("vocab").get<int>();
  return c;
}

template <typename T>
void save_checkpoint(const ModelState<T>& state, const std::string& path) {
  ojson header;
  header["vit"] = encoder_config_to_json(state.vit_cfg);
  header["text"] = text_config_to_json(state.text_cfg);
  header["decoder"] = decoder_config_to_json(state.dec_cfg);
  header["trainable"] = ojson(state.trainable);
  ojson inventory = ojson::array();
  auto& mutable_state = const_cast<ModelState<T>&>(state);
  for_each_param(mutable_state, [&inventory](const char* comp,
                                             const std::string& name,
                                             Tensor<T>& t) {
    inventory.push_back(ojson{{"component", comp},
                              {"name", name},
                              {"rows", t.rows()},
                              {"cols", t.cols()}});
  });
  header["params"] = std::move(inventory);
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  FORGE_CHECK(out.good(), "save_checkpoint: cannot open \"", path, "\"");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint64_t hlen = header_text.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_text.data(), std::streamsize(header_text.size()));
  for_each_param(mutable_state, [&out](const char*, const std::string&,
                                       Tensor<T>& t) {
    const T* d = t.data();
    const size_t count = t.rows() * t.cols();
    if constexpr (std::is_same_v<T, float>) {
      out.write(reinterpret_cast<const char*>(d),
                std::streamsize(count * sizeof(float)));
    } else {
      std::vector<float> tmp(count);
      for (size_t i = 0; i < count; ++i) tmp[i] = float(d[i]);
      out.write(reinterpret_cast<const char*>(tmp.data()),
                std::streamsize(count * sizeof(float)));
    }
  });
  FORGE_CHECK(out.good(), "save_checkpoint: write to \"", path, "\" failed");
}

template <typename T>
ModelState<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FORGE_CHECK(in.good(), "load_checkpoint: cannot open \"", path, "\"");
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  FORGE_CHECK(in.good() && std::equal(magic, magic + sizeof(magic),
                                      kCheckpointMagic),
              "load_checkpoint: \"", path, "\" is not a checkpoint");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  FORGE_CHECK(in.good() && hlen > 0 && hlen < (uint64_t(1) << 30),
              "load_checkpoint: corrupt header length");
  std::string header_text(hlen, '\0');
  in.read(header_text.data(), std::streamsize(hlen));
  FORGE_CHECK(in.good(), "load_checkpoint: truncated header");
  ojson header;
  try {
    header = ojson::parse(header_text);
  } catch (const std::exception& e) {
    throw Error(format_msg("load_checkpoint: bad header: ", e.what()));
  }

  ModelState<T> state = init_model_state<T>(
      encoder_config_from_json(header.at("vit")),
      text_config_from_json(header.at("text")),
      decoder_config_from_json(header.at("decoder")), /*seed=*/0);
  for (const auto& [name, flag] : header.at("trainable").items())
    state.trainable[name] = flag.template get<bool>();

  const ojson& inventory = header.at("params");
  size_t cursor = 0;
  for_each_param(state, [&](const char* comp, const std::string& name,
                            Tensor<T>& t) {
    FORGE_CHECK(cursor < inventory.size(),
                "load_checkpoint: inventory too short at ", comp, ".", name);
    const ojson& entry = inventory[cursor++];
    FORGE_CHECK(entry.at("component").get<std::string>() == comp &&
                    entry.at("name").get<std::string>() == name &&
                    entry.at("rows").get<size_t>() == t.rows() &&
                    entry.at("cols").get<size_t>() == t.cols(),
                "load_checkpoint: parameter mismatch at ", comp, ".", name);
    const size_t count = t.rows() * t.cols();
    std::vector<float> tmp(count);
    in.read(reinterpret_cast<char*>(tmp.data()),
            std::streamsize(count * sizeof(float)));
    FORGE_CHECK(in.good(), "load_checkpoint: truncated blob at ", comp, ".",
                name);
    T* d = t.data_mut();
    for (size_t i = 0; i < count; ++i) d[i] = T(tmp[i]);
  });
  FORGE_CHECK(cursor == inventory.size(),
              "load_checkpoint: inventory has ", inventory.size(),
              " entries, state wants ", cursor);
  in.peek();
  FORGE_CHECK(in.eof(), "load_checkpoint: trailing bytes in \"", path, "\"");
  return state;
}

}  // namespace forge
