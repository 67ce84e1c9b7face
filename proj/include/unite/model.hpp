// Miniature pre-LN transformer encoder with mask-aware multi-head attention,
// first-position pooling and a three-layer tanh regression head.
#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "autodiff.hpp"
#include "corpus.hpp"
#include "mra.hpp"
#include "packing.hpp"

namespace unite {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 256;
  std::array<std::size_t, 3> head_dims = {192, 64, 1};
  std::size_t max_len = 128;
  std::size_t vocab_size = 0;
  std::map<TaskFormat, MaskVariant> masks = {
      {TaskFormat::Ref, MaskVariant::Full}, {TaskFormat::Src, MaskVariant::Full}, {TaskFormat::SrcRef, MaskVariant::Full}};
  bool segment_embeddings = false;
  std::string dtype = "f64";

  MaskVariant mask_for(TaskFormat f) const { return masks.at(f); }
  std::size_t head_width() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) throw Error("config: d_model must be divisible by n_heads");
    if (n_layers == 0) throw Error("config: n_layers must be positive");
    if (d_ffn == 0) throw Error("config: d_ffn must be positive");
    if (head_dims[2] != 1 || head_dims[0] == 0 || head_dims[1] == 0) throw Error("config: head_dims must be (a, b, 1)");
    if (max_len < 3) throw Error("config: max_len too small");
    if (vocab_size <= kNumSpecials) throw Error("config: vocab_size must exceed the special tokens");
    if (dtype != "f64") throw Error("config: only f64 precision is supported");
    for (auto f : kAllFormats)
      if (!masks.contains(f)) throw Error("config: missing mask variant for " + std::string(to_string(f)));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["d_model"] = d_model;
    j["n_layers"] = n_layers;
    j["n_heads"] = n_heads;
    j["d_ffn"] = d_ffn;
    j["head_dims"] = head_dims;
    j["max_len"] = max_len;
    j["vocab_size"] = vocab_size;
    nlohmann::json m;
    for (const auto& [f, v] : masks) m[std::string(to_string(f))] = std::string(to_string(v));
    j["masks"] = m;
    j["segment_embeddings"] = segment_embeddings;
    j["dtype"] = dtype;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ffn = j.at("d_ffn").get<std::size_t>();
    c.head_dims = j.at("head_dims").get<std::array<std::size_t, 3>>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.masks.clear();
    for (const auto& [k, v] : j.at("masks").items()) c.masks[parse_task_format(k)] = parse_mask_variant(v.get<std::string>());
    c.segment_embeddings = j.at("segment_embeddings").get<bool>();
    c.dtype = j.at("dtype").get<std::string>();
    c.validate();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Per-layer weights. Linear maps are stored (in x out) and applied as x * W + b.
template <class T>
struct LayerWeights {
  T ln1_gain, ln1_bias;
  T wq, bq, wk, wv, bv, wo, bo;  // no key bias: it shifts each logit row uniformly
  T ln2_gain, ln2_bias;
  T ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  template <class F>
  void for_each(F&& f) {
    f("ln1_gain", ln1_gain), f("ln1_bias", ln1_bias);
    f("wq", wq), f("bq", bq), f("wk", wk), f("wv", wv), f("bv", bv), f("wo", wo), f("bo", bo);
    f("ln2_gain", ln2_gain), f("ln2_bias", ln2_bias);
    f("ffn_w1", ffn_w1), f("ffn_b1", ffn_b1), f("ffn_w2", ffn_w2), f("ffn_b2", ffn_b2);
  }
};

/// Every trainable tensor, in the fixed declaration order used for
/// serialization. `segment_embed` has zero rows unless enabled.
template <class T>
struct Weights {
  T token_embed;
  T position_embed;
  T segment_embed;
  std::vector<LayerWeights<T>> layers;
  T final_gain, final_bias;
  T head_w1, head_b1, head_w2, head_b2, head_w3, head_b3;

  template <class F>
  void for_each(F&& f) {
    f(std::string("token_embed"), token_embed);
    f(std::string("position_embed"), position_embed);
    f(std::string("segment_embed"), segment_embed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string prefix = "layer" + std::to_string(l) + ".";
      layers[l].for_each([&](const char* name, T& x) { f(prefix + name, x); });
    }
    f(std::string("final_gain"), final_gain), f(std::string("final_bias"), final_bias);
    f(std::string("head_w1"), head_w1), f(std::string("head_b1"), head_b1);
    f(std::string("head_w2"), head_w2), f(std::string("head_b2"), head_b2);
    f(std::string("head_w3"), head_w3), f(std::string("head_b3"), head_b3);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<Weights*>(this)->for_each([&](const std::string& name, T& x) { f(name, static_cast<const T&>(x)); });
  }

  std::vector<T*> tensors() {
    std::vector<T*> out;
    for_each([&](const std::string&, T& x) { out.push_back(&x); });
    return out;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for_each([&](const std::string& n, const T&) { out.push_back(n); });
    return out;
  }

  friend bool operator==(const Weights& a, const Weights& b) {
    std::vector<const T*> xa, xb;
    a.for_each([&](const std::string&, const T& x) { xa.push_back(&x); });
    b.for_each([&](const std::string&, const T& x) { xb.push_back(&x); });
    if (xa.size() != xb.size()) return false;
    for (std::size_t i = 0; i < xa.size(); ++i)
      if (!(*xa[i] == *xb[i])) return false;
    return true;
  }
};

using ModelParams = Weights<Matrix>;
using Gradients = Weights<Matrix>;

/// Zero tensors with the shapes implied by `config`.
inline ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  ModelParams p;
  p.token_embed = Matrix(config.vocab_size, d);
  p.position_embed = Matrix(config.max_len, d);
  p.segment_embed = Matrix(config.segment_embeddings ? 3 : 0, d);
  p.layers.resize(config.n_layers);
  for (auto& l : p.layers) {
    l.ln1_gain = Matrix(1, d, 1.0);
    l.ln1_bias = Matrix(1, d);
    l.wq = Matrix(d, d), l.bq = Matrix(1, d);
    l.wk = Matrix(d, d);
    l.wv = Matrix(d, d), l.bv = Matrix(1, d);
    l.wo = Matrix(d, d), l.bo = Matrix(1, d);
    l.ln2_gain = Matrix(1, d, 1.0);
    l.ln2_bias = Matrix(1, d);
    l.ffn_w1 = Matrix(d, config.d_ffn), l.ffn_b1 = Matrix(1, config.d_ffn);
    l.ffn_w2 = Matrix(config.d_ffn, d), l.ffn_b2 = Matrix(1, d);
  }
  p.final_gain = Matrix(1, d, 1.0);
  p.final_bias = Matrix(1, d);
  const auto& h = config.head_dims;
  p.head_w1 = Matrix(d, h[0]), p.head_b1 = Matrix(1, h[0]);
  p.head_w2 = Matrix(h[0], h[1]), p.head_b2 = Matrix(1, h[1]);
  p.head_w3 = Matrix(h[1], h[2]), p.head_b3 = Matrix(1, h[2]);
  return p;
}

inline Gradients zeros_like(const ModelParams& p) {
  Gradients g = p;
  g.for_each([](const std::string&, Matrix& m) { std::fill(m.data.begin(), m.data.end(), 0.0); });
  return g;
}

/// Seeded initialization: embeddings ~ N(0, 0.02^2), linear maps ~
/// N(0, 1/fan_in), gains 1, biases 0.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config);
  Rng rng(seed);
  auto fill = [&](Matrix& m, double stddev) {
    for (auto& x : m.data) x = rng.normal(0.0, stddev);
  };
  fill(p.token_embed, 0.02);
  fill(p.position_embed, 0.02);
  fill(p.segment_embed, 0.02);
  for (auto& l : p.layers)
    for (Matrix* w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ffn_w1, &l.ffn_w2})
      fill(*w, 1.0 / std::sqrt(static_cast<double>(w->rows)));
  for (Matrix* w : {&p.head_w1, &p.head_w2, &p.head_w3}) fill(*w, 1.0 / std::sqrt(static_cast<double>(w->rows)));
  return p;
}

inline void check_shapes(const ModelConfig& config, const ModelParams& params) {
  ModelParams expect = zero_params(config);
  auto a = expect.tensors();
  auto b = const_cast<ModelParams&>(params).tensors();
  if (a.size() != b.size()) throw Error("checkpoint/config shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i]->same_shape(*b[i])) throw Error("checkpoint/config shape mismatch");
}

// ---------------------------------------------------------------------------
// Forward pass on a tape

using BoundWeights = Weights<Var>;

/// Registers every parameter tensor as a tape leaf (no copies).
inline BoundWeights bind(Tape& tape, const ModelParams& params) {
  BoundWeights b;
  b.layers.resize(params.layers.size());
  auto src = const_cast<ModelParams&>(params).tensors();
  auto dst = b.tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = tape.parameter(*src[i]);
  return b;
}

/// Copies gradients from the tape into a Gradients value.
inline void collect_gradients(Tape& tape, const BoundWeights& bound, Gradients& out) {
  auto vars = const_cast<BoundWeights&>(bound).tensors();
  auto dst = out.tensors();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Matrix& g = tape.grad(*vars[i]);
    if (g.size() == 0) continue;
    for (std::size_t k = 0; k < g.size(); ++k) dst[i]->data[k] += g.data[k];
  }
}

/// Attention probabilities captured during a forward pass, indexed
/// [layer * n_heads + head].
struct AttentionTrace {
  std::vector<Matrix> probs;
};

/// Rows: token embedding + position embedding (+ segment embedding if enabled).
inline Var embed(Tape& tape, const BoundWeights& w, const ModelConfig& config, const PackedInput& packed) {
  const std::size_t len = packed.length();
  if (len > config.max_len) throw Error("sequence too long");
  std::vector<std::size_t> ids(len), positions(len);
  for (std::size_t i = 0; i < len; ++i) {
    if (packed.tokens[i] < 0 || static_cast<std::size_t>(packed.tokens[i]) >= config.vocab_size)
      throw Error("token id out of vocabulary range");
    ids[i] = static_cast<std::size_t>(packed.tokens[i]);
    positions[i] = i;
  }
  Var x = ops::add(tape, ops::gather_rows(tape, w.token_embed, std::move(ids)),
                   ops::gather_rows(tape, w.position_embed, std::move(positions)));
  if (config.segment_embeddings) {
    std::vector<std::size_t> seg(len);
    for (std::size_t i = 0; i < len; ++i) seg[i] = static_cast<std::size_t>(segment_of(packed, i));
    x = ops::add(tape, x, ops::gather_rows(tape, w.segment_embed, std::move(seg)));
  }
  return x;
}

/// One head: softmax(Q K^T / sqrt(d_head) + M) V, with d_head = Q's width.
inline Var masked_attention(Tape& tape, Var q, Var k, Var v, const Matrix& mask, Matrix* probs_out = nullptr) {
  const Matrix& qv = tape.value(q);
  const Matrix& kv = tape.value(k);
  const Matrix& vv = tape.value(v);
  if (qv.cols != kv.cols || kv.rows != vv.rows || mask.rows != qv.rows || mask.cols != kv.rows)
    throw Error("shape mismatch in masked_attention");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(qv.cols));
  Var probs = ops::masked_softmax(tape, ops::scale(tape, ops::matmul_nt(tape, q, k), inv_sqrt), mask);
  if (probs_out) *probs_out = tape.value(probs);
  return ops::matmul(tape, probs, v);
}

struct AttentionResult {
  Matrix probs;
  Matrix output;
};

/// Value-level single-head attention.
inline AttentionResult masked_attention(const Matrix& q, const Matrix& k, const Matrix& v, const AttnMask& mask) {
  Tape tape;
  AttentionResult r;
  Var out = masked_attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), mask.values, &r.probs);
  r.output = tape.value(out);
  return r;
}

/// Heads of width d/n_heads attend independently; their outputs are
/// concatenated, then output-projected.
inline Var multi_head_attention(Tape& tape, const LayerWeights<Var>& lw, const ModelConfig& config, Var x,
                                const Matrix& mask, AttentionTrace* trace) {
  const Matrix& xv = tape.value(x);
  if (mask.rows != xv.rows || mask.cols != xv.rows) throw Error("shape mismatch: mask does not match sequence");
  const std::size_t dh = config.head_width();
  Var q = ops::add_row(tape, ops::matmul(tape, x, lw.wq), lw.bq);
  Var k = ops::matmul(tape, x, lw.wk);
  Var v = ops::add_row(tape, ops::matmul(tape, x, lw.wv), lw.bv);
  std::vector<Var> heads;
  heads.reserve(config.n_heads);
  for (std::size_t h = 0; h < config.n_heads; ++h) {
    Var qh = ops::slice_cols(tape, q, h * dh, (h + 1) * dh);
    Var kh = ops::slice_cols(tape, k, h * dh, (h + 1) * dh);
    Var vh = ops::slice_cols(tape, v, h * dh, (h + 1) * dh);
    Matrix probs;
    heads.push_back(masked_attention(tape, qh, kh, vh, mask, trace ? &probs : nullptr));
    if (trace) trace->probs.push_back(std::move(probs));
  }
  Var cat = config.n_heads == 1 ? heads.front() : ops::concat_cols(tape, heads);
  return ops::add_row(tape, ops::matmul(tape, cat, lw.wo), lw.bo);
}

inline Var feed_forward(Tape& tape, const LayerWeights<Var>& lw, Var x) {
  Var hidden = ops::tanh(tape, ops::add_row(tape, ops::matmul(tape, x, lw.ffn_w1), lw.ffn_b1));
  return ops::add_row(tape, ops::matmul(tape, hidden, lw.ffn_w2), lw.ffn_b2);
}

/// n_layers of pre-LN attention and feed-forward blocks with residuals, the
/// same mask at every layer, then a final layer norm. Output is L x d.
inline Var encode(Tape& tape, const BoundWeights& w, const ModelConfig& config, const PackedInput& packed,
                  MaskVariant variant, AttentionTrace* trace = nullptr) {
  const AttnMask mask = build_mask(variant, packed);
  Var x = embed(tape, w, config, packed);
  for (const auto& lw : w.layers) {
    Var a = multi_head_attention(tape, lw, config, ops::layer_norm(tape, x, lw.ln1_gain, lw.ln1_bias), mask.values, trace);
    x = ops::add(tape, x, a);
    Var f = feed_forward(tape, lw, ops::layer_norm(tape, x, lw.ln2_gain, lw.ln2_bias));
    x = ops::add(tape, x, f);
  }
  return ops::layer_norm(tape, x, w.final_gain, w.final_bias);
}

/// First-position representation.
inline Var pool_first(Tape& tape, Var encoded) { return ops::select_row(tape, encoded, 0); }

/// W3 tanh(W2 tanh(W1 pooled + b1) + b2) + b3, returned as 1 x 1.
inline Var predict(Tape& tape, const BoundWeights& w, Var pooled) {
  Var h1 = ops::tanh(tape, ops::add_row(tape, ops::matmul(tape, pooled, w.head_w1), w.head_b1));
  Var h2 = ops::tanh(tape, ops::add_row(tape, ops::matmul(tape, h1, w.head_w2), w.head_b2));
  return ops::add_row(tape, ops::matmul(tape, h2, w.head_w3), w.head_b3);
}

inline Var forward(Tape& tape, const BoundWeights& w, const ModelConfig& config, const PackedInput& packed,
                   MaskVariant variant, AttentionTrace* trace = nullptr) {
  return predict(tape, w, pool_first(tape, encode(tape, w, config, packed, variant, trace)));
}

// ---------------------------------------------------------------------------
// Tape-free conveniences

/// Encoder output for one packed input.
inline Matrix encode_values(const ModelParams& params, const ModelConfig& config, const PackedInput& packed,
                            MaskVariant variant, AttentionTrace* trace = nullptr) {
  Tape tape;
  BoundWeights w = bind(tape, params);
  return tape.value(encode(tape, w, config, packed, variant, trace));
}

inline double score_packed(const ModelParams& params, const ModelConfig& config, const PackedInput& packed,
                           MaskVariant variant, AttentionTrace* trace = nullptr) {
  Tape tape;
  BoundWeights w = bind(tape, params);
  return tape.scalar(forward(tape, w, config, packed, variant, trace));
}

/// pack -> mask -> encode -> pool -> predict with the format's configured
/// mask variant unless one is given.
inline double score(const TokenSeq& hyp, const std::optional<TokenSeq>& src, const std::optional<TokenSeq>& ref,
                    TaskFormat format, const ModelParams& params, const ModelConfig& config,
                    std::optional<MaskVariant> variant = std::nullopt) {
  const PackedInput packed = pack(hyp, src, ref, format);
  return score_packed(params, config, packed, variant.value_or(config.mask_for(format)));
}

}  // namespace unite
