#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "futr/config.hpp"
#include "futr/mask.hpp"
#include "futr/tensor.hpp"

// Encoder-decoder for long-term action anticipation. The encoder
// self-attends over stride-sampled frame tokens and emits per-frame
// segmentation probabilities; the decoder turns M learnable action queries
// into (action, duration) slots, in one parallel pass or, as ablations,
// with a causal mask or a stepwise label-fed loop.

namespace futr {

template <typename Real>
struct AttnBlockParams {
  std::vector<Tensor<Real>> wq, wk, wv;  // per head, D x D/h
  Tensor<Real> wo;                       // D x D
};

template <typename Real>
struct LayerNormParams {
  Tensor<Real> gain, bias;  // 1 x D
};

template <typename Real>
struct FfnParams {
  Tensor<Real> w1, b1, w2, b2;  // D x fD, 1 x fD, fD x D, 1 x D
};

template <typename Real>
struct EncoderLayerParams {
  AttnBlockParams<Real> self;
  LayerNormParams<Real> ln_attn, ln_ffn;
  FfnParams<Real> ffn;
};

template <typename Real>
struct DecoderLayerParams {
  AttnBlockParams<Real> self, cross;
  LayerNormParams<Real> ln_self, ln_cross, ln_ffn;
  FfnParams<Real> ffn;
};

template <typename Real>
struct ModelParams {
  Tensor<Real> input_proj;   // C x D
  Tensor<Real> pos_table;    // T_max x D (learnable modes only)
  Tensor<Real> query_embed;  // M x D
  std::vector<EncoderLayerParams<Real>> encoder;
  std::vector<DecoderLayerParams<Real>> decoder;
  Tensor<Real> seg_w, seg_b;  // D x K
  Tensor<Real> act_w, act_b;  // D x (K+1)
  Tensor<Real> dur_w, dur_b;  // D x 1 (duration) or D x 2 (start_end)
  Tensor<Real> label_embed;   // (K+3) x D, autoregressive mode only

  // Fixed enumeration order shared by init, the optimizer and checkpoints.
  template <typename Fn>
  void for_each(Fn&& fn) {
    auto attn = [&](const std::string& prefix, AttnBlockParams<Real>& a) {
      for (std::size_t h = 0; h < a.wq.size(); ++h) {
        fn(prefix + ".wq" + std::to_string(h), a.wq[h]);
        fn(prefix + ".wk" + std::to_string(h), a.wk[h]);
        fn(prefix + ".wv" + std::to_string(h), a.wv[h]);
      }
      fn(prefix + ".wo", a.wo);
    };
    auto ln = [&](const std::string& prefix, LayerNormParams<Real>& l) {
      fn(prefix + ".gain", l.gain);
      fn(prefix + ".bias", l.bias);
    };
    auto ffn = [&](const std::string& prefix, FfnParams<Real>& f) {
      fn(prefix + ".w1", f.w1);
      fn(prefix + ".b1", f.b1);
      fn(prefix + ".w2", f.w2);
      fn(prefix + ".b2", f.b2);
    };

    fn("input_proj", input_proj);
    if (pos_table.defined()) fn("pos_table", pos_table);
    fn("query_embed", query_embed);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      const std::string p = "enc" + std::to_string(l);
      attn(p + ".self", encoder[l].self);
      ln(p + ".ln_attn", encoder[l].ln_attn);
      ffn(p + ".ffn", encoder[l].ffn);
      ln(p + ".ln_ffn", encoder[l].ln_ffn);
    }
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      const std::string p = "dec" + std::to_string(l);
      attn(p + ".self", decoder[l].self);
      ln(p + ".ln_self", decoder[l].ln_self);
      attn(p + ".cross", decoder[l].cross);
      ln(p + ".ln_cross", decoder[l].ln_cross);
      ffn(p + ".ffn", decoder[l].ffn);
      ln(p + ".ln_ffn", decoder[l].ln_ffn);
    }
    fn("seg_w", seg_w);
    fn("seg_b", seg_b);
    fn("act_w", act_w);
    fn("act_b", act_b);
    fn("dur_w", dur_w);
    fn("dur_b", dur_b);
    if (label_embed.defined()) fn("label_embed", label_embed);
  }

  void set_requires_grad(bool b) {
    for_each([b](const std::string&, Tensor<Real>& t) {
      t.set_needs_grad(b);
    });
  }

  void zero_grad() {
    for_each([](const std::string&, Tensor<Real>& t) { t.zero_grad(); });
  }

  std::vector<Tensor<Real>> all_tensors() {
    std::vector<Tensor<Real>> out;
    for_each([&](const std::string&, Tensor<Real>& t) { out.push_back(t); });
    return out;
  }
};

namespace detail {

template <typename Real>
Tensor<Real> uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = Tensor<Real>::zeros(std::move(shape));
  for (auto& v : t.values())
    v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

template <typename Real>
Tensor<Real> normal_init(Shape shape, double stddev, Rng& rng) {
  auto t = Tensor<Real>::zeros(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Real>(rng.normal(0.0, stddev));
  return t;
}

template <typename Real>
AttnBlockParams<Real> init_attn(const ModelConfig& cfg, Rng& rng) {
  AttnBlockParams<Real> a;
  const auto d = static_cast<std::size_t>(cfg.hidden_dim);
  const auto dh = static_cast<std::size_t>(cfg.head_dim());
  for (int h = 0; h < cfg.heads; ++h) {
    a.wq.push_back(uniform_init<Real>({d, dh}, d, rng));
    a.wk.push_back(uniform_init<Real>({d, dh}, d, rng));
    a.wv.push_back(uniform_init<Real>({d, dh}, d, rng));
  }
  a.wo = uniform_init<Real>({d, d}, d, rng);
  return a;
}

template <typename Real>
LayerNormParams<Real> init_ln(const ModelConfig& cfg) {
  const auto d = static_cast<std::size_t>(cfg.hidden_dim);
  return {Tensor<Real>::constant({1, d}, Real(1)), Tensor<Real>::zeros({1, d})};
}

template <typename Real>
FfnParams<Real> init_ffn(const ModelConfig& cfg, Rng& rng) {
  const auto d = static_cast<std::size_t>(cfg.hidden_dim);
  const auto f = static_cast<std::size_t>(cfg.hidden_dim * cfg.ffn_expansion);
  return {uniform_init<Real>({d, f}, d, rng), Tensor<Real>::zeros({1, f}),
          uniform_init<Real>({f, d}, f, rng), Tensor<Real>::zeros({1, d})};
}

}  // namespace detail

// Scaled-uniform projections, unit LN gains, zero biases, N(0, 0.02)
// positional/query/label embeddings; bit-reproducible for a given seed.
template <typename Real>
ModelParams<Real> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.t_max < 1)
    throw ConfigError("init_params: t_max must be sized (>= 1) before init");
  Rng rng(mix_seed(seed, 0x696e6974));

  ModelParams<Real> p;
  const auto c = static_cast<std::size_t>(cfg.input_dim);
  const auto d = static_cast<std::size_t>(cfg.hidden_dim);
  const auto k = static_cast<std::size_t>(cfg.num_classes);
  const auto m = static_cast<std::size_t>(cfg.query_count);

  p.input_proj = detail::uniform_init<Real>({c, d}, c, rng);
  if (cfg.posembed == PosEmbedMode::learnable_input ||
      cfg.posembed == PosEmbedMode::learnable_per_attention)
    p.pos_table = detail::normal_init<Real>(
        {static_cast<std::size_t>(cfg.t_max), d}, 0.02, rng);
  p.query_embed = detail::normal_init<Real>({m, d}, 0.02, rng);

  for (int l = 0; l < cfg.enc_layers; ++l) {
    EncoderLayerParams<Real> layer;
    layer.self = detail::init_attn<Real>(cfg, rng);
    layer.ln_attn = detail::init_ln<Real>(cfg);
    layer.ffn = detail::init_ffn<Real>(cfg, rng);
    layer.ln_ffn = detail::init_ln<Real>(cfg);
    p.encoder.push_back(std::move(layer));
  }
  for (int l = 0; l < cfg.dec_layers; ++l) {
    DecoderLayerParams<Real> layer;
    layer.self = detail::init_attn<Real>(cfg, rng);
    layer.ln_self = detail::init_ln<Real>(cfg);
    layer.cross = detail::init_attn<Real>(cfg, rng);
    layer.ln_cross = detail::init_ln<Real>(cfg);
    layer.ffn = detail::init_ffn<Real>(cfg, rng);
    layer.ln_ffn = detail::init_ln<Real>(cfg);
    p.decoder.push_back(std::move(layer));
  }

  p.seg_w = detail::uniform_init<Real>({d, k}, d, rng);
  p.seg_b = Tensor<Real>::zeros({1, k});
  p.act_w = detail::uniform_init<Real>({d, k + 1}, d, rng);
  p.act_b = Tensor<Real>::zeros({1, k + 1});
  const std::size_t dur_out = cfg.head == HeadMode::start_end ? 2 : 1;
  p.dur_w = detail::uniform_init<Real>({d, dur_out}, d, rng);
  p.dur_b = Tensor<Real>::zeros({1, dur_out});
  if (cfg.decoding == DecodingMode::autoregressive)
    p.label_embed = detail::normal_init<Real>({k + 3, d}, 0.02, rng);
  return p;
}

// fixed sin/cos table used by the sinusoidal_input mode
template <typename Real>
Tensor<Real> sinusoidal_table(std::size_t length, std::size_t dim) {
  auto t = Tensor<Real>::zeros({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(i / 2) /
                                static_cast<double>(dim));
      t.at(pos, i) = static_cast<Real>(i % 2 == 0 ? std::sin(angle)
                                                  : std::cos(angle));
    }
  return t;
}

// captured cross-attention weights (head-averaged) for export
template <typename Real>
struct AttentionMap {
  std::size_t rows = 0, cols = 0;
  std::vector<Real> weights;
};

template <typename Real>
struct ForwardOutput {
  Tensor<Real> seg_probs;     // T^O x K
  Tensor<Real> action_probs;  // M x (K+1); stepwise rows in AR mode
  Tensor<Real> durations;     // M x 1, or M x 2 in start_end mode
  std::vector<AttentionMap<Real>> attention_maps;  // per decoder layer
  std::vector<int> emitted;        // AR only: class ids, end token excluded
  std::vector<Real> emitted_durations;  // AR only, one per emitted label
};

// Per-forward mutable state: the tape (null for inference) and the dropout
// stream (null unless training with dropout > 0).
template <typename Real>
struct ForwardCtx {
  Tape<Real>* tape = nullptr;
  Rng* dropout_rng = nullptr;
};

template <typename Real>
Tensor<Real> embed_inputs(const Tensor<Real>& features,
                          const ModelParams<Real>& params,
                          const ModelConfig& cfg,
                          Tape<Real>* tape = nullptr) {
  if (features.rank() != 2 ||
      features.cols() != static_cast<std::size_t>(cfg.input_dim))
    throw ShapeError("embed_inputs: features " +
                     shape_to_string(features.shape()) + " vs input_dim " +
                     std::to_string(cfg.input_dim));
  return relu(matmul(features, params.input_proj, tape), tape);
}

// One attention block: per head softmax((XWq)(YWk)^T / sqrt(D/h)) YWv,
// heads concatenated, then Wo. `capture` receives head-averaged weights.
template <typename Real>
Tensor<Real> multi_head_attention(const Tensor<Real>& queries_in,
                                  const Tensor<Real>& keys_values_in,
                                  const AttnBlockParams<Real>& block,
                                  const AttentionMask* mask,
                                  Tape<Real>* tape = nullptr,
                                  AttentionMap<Real>* capture = nullptr) {
  const std::size_t heads = block.wq.size();
  const std::size_t dh = block.wq[0].cols();
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));

  if (capture) {
    capture->rows = queries_in.rows();
    capture->cols = keys_values_in.rows();
    capture->weights.assign(capture->rows * capture->cols, Real(0));
  }

  std::vector<Tensor<Real>> zs;
  zs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto q = matmul(queries_in, block.wq[h], tape);
    auto k = matmul(keys_values_in, block.wk[h], tape);
    auto v = matmul(keys_values_in, block.wv[h], tape);
    auto scores = scale(matmul_nt(q, k, tape), inv_sqrt, tape);
    auto attn = softmax_lastdim(scores, mask, tape);
    if (capture) {
      const Real inv_h = Real(1) / static_cast<Real>(heads);
      for (std::size_t i = 0; i < capture->weights.size(); ++i)
        capture->weights[i] += attn.values()[i] * inv_h;
    }
    zs.push_back(matmul(attn, v, tape));
  }
  return matmul(concat_cols(zs, tape), block.wo, tape);
}

namespace detail {

template <typename Real>
Tensor<Real> ffn_forward(const Tensor<Real>& x, const FfnParams<Real>& f,
                         Tape<Real>* tape) {
  return linear(relu(linear(x, f.w1, f.b1, tape), tape), f.w2, f.b2, tape);
}

template <typename Real>
Tensor<Real> ln_forward(const Tensor<Real>& x, const LayerNormParams<Real>& l,
                        Tape<Real>* tape) {
  return layer_norm(x, l.gain, l.bias, Real(1e-5), tape);
}

// positional rows for a sequence of the given length
template <typename Real>
Tensor<Real> positional_rows(const ModelParams<Real>& params,
                             const ModelConfig& cfg, std::size_t len,
                             Tape<Real>* tape) {
  switch (cfg.posembed) {
    case PosEmbedMode::none:
      return {};
    case PosEmbedMode::sinusoidal_input:
      return sinusoidal_table<Real>(len,
                                    static_cast<std::size_t>(cfg.hidden_dim));
    case PosEmbedMode::learnable_input:
    case PosEmbedMode::learnable_per_attention:
      if (len > params.pos_table.rows())
        throw ShapeError("sequence length " + std::to_string(len) +
                         " exceeds positional table t_max=" +
                         std::to_string(params.pos_table.rows()));
      return slice_rows(params.pos_table, 0, len, tape);
  }
  return {};
}

}  // namespace detail

// Returns (encoder tokens, segmentation probabilities). Positional
// embeddings join the attention input at every layer in per-attention
// mode, or once at the first layer's input otherwise; the residual path
// carries the raw tokens either way.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> encoder_forward(
    const Tensor<Real>& features, const ModelParams<Real>& params,
    const ModelConfig& cfg, const ForwardCtx<Real>& ctx = {}) {
  Tape<Real>* tape = ctx.tape;
  Tensor<Real> x = embed_inputs(features, params, cfg, tape);
  const std::size_t t = x.rows();

  Tensor<Real> pos = detail::positional_rows(params, cfg, t, tape);
  const bool per_attn = cfg.posembed == PosEmbedMode::learnable_per_attention;
  if (pos.defined() && !per_attn) x = add(x, pos, tape);

  AttentionMask local;
  const AttentionMask* mask = nullptr;
  if (cfg.enc_attention.kind == AttentionKind::local) {
    local = build_attention_mask(MaskKind::local, t, t,
                                 cfg.enc_attention.window);
    mask = &local;
  }

  for (const auto& layer : params.encoder) {
    Tensor<Real> attn_in = (per_attn && pos.defined()) ? add(x, pos, tape) : x;
    auto attn =
        multi_head_attention(attn_in, attn_in, layer.self, mask, tape);
    attn = dropout(attn, cfg.dropout, ctx.dropout_rng, tape);
    auto x1 = detail::ln_forward(add(attn, x, tape), layer.ln_attn, tape);
    auto f = detail::ffn_forward(x1, layer.ffn, tape);
    f = dropout(f, cfg.dropout, ctx.dropout_rng, tape);
    x = detail::ln_forward(add(f, x1, tape), layer.ln_ffn, tape);
  }

  auto seg_probs = softmax_lastdim(
      linear(x, params.seg_w, params.seg_b, tape), nullptr, tape);
  return {x, seg_probs};
}

namespace detail {

// Self-attention mask over the decoder sequence: causal when requested,
// optionally intersected with a local window.
inline const AttentionMask* decoder_self_mask(const ModelConfig& cfg,
                                              bool causal, std::size_t m,
                                              AttentionMask& storage) {
  const bool local = cfg.dec_attention.kind == AttentionKind::local;
  if (!causal && !local) return nullptr;
  if (causal && local)
    storage = mask_and(make_causal_mask(m),
                       make_local_mask(m, cfg.dec_attention.window));
  else if (causal)
    storage = make_causal_mask(m);
  else
    storage = make_local_mask(m, cfg.dec_attention.window);
  return &storage;
}

// Shared decoder stack: `seq` is the layer-0 input (zeros for query
// decoding, label embeddings for the stepwise loop); `seq_embed` is added
// at each self-attention and cross-attention query input in per-attention
// mode (the action-query embeddings, reused as positions for AR prefixes).
template <typename Real>
Tensor<Real> decoder_stack(Tensor<Real> seq, const Tensor<Real>& seq_embed,
                           const Tensor<Real>& enc_out,
                           const ModelParams<Real>& params,
                           const ModelConfig& cfg, bool causal_self,
                           const ForwardCtx<Real>& ctx,
                           std::vector<AttentionMap<Real>>* capture) {
  Tape<Real>* tape = ctx.tape;
  const std::size_t m = seq.rows();
  const std::size_t t = enc_out.rows();
  const bool per_attn = cfg.posembed == PosEmbedMode::learnable_per_attention;

  if (!per_attn) seq = add(seq, seq_embed, tape);

  Tensor<Real> enc_pos = positional_rows(params, cfg, t, tape);
  Tensor<Real> kv = (per_attn && enc_pos.defined())
                        ? add(enc_out, enc_pos, tape)
                        : enc_out;

  AttentionMask self_storage;
  const AttentionMask* self_mask =
      decoder_self_mask(cfg, causal_self, m, self_storage);

  AttentionMask cross_storage;
  const AttentionMask* cross_mask = nullptr;
  if (cfg.cross_attend_ratio < 1.0) {
    cross_storage = build_attention_mask(MaskKind::cross_recent, m, t, 0,
                                         cfg.cross_attend_ratio);
    cross_mask = &cross_storage;
  }

  for (const auto& layer : params.decoder) {
    Tensor<Real> self_in = per_attn ? add(seq, seq_embed, tape) : seq;
    auto sa =
        multi_head_attention(self_in, self_in, layer.self, self_mask, tape);
    sa = dropout(sa, cfg.dropout, ctx.dropout_rng, tape);
    auto q1 = ln_forward(add(sa, seq, tape), layer.ln_self, tape);

    Tensor<Real> cross_q = per_attn ? add(q1, seq_embed, tape) : q1;
    AttentionMap<Real> attn_map;
    auto ca = multi_head_attention(cross_q, kv, layer.cross, cross_mask, tape,
                                   capture ? &attn_map : nullptr);
    if (capture) capture->push_back(std::move(attn_map));
    ca = dropout(ca, cfg.dropout, ctx.dropout_rng, tape);
    auto q2 = ln_forward(add(ca, q1, tape), layer.ln_cross, tape);

    auto f = ffn_forward(q2, layer.ffn, tape);
    f = dropout(f, cfg.dropout, ctx.dropout_rng, tape);
    seq = ln_forward(add(f, q2, tape), layer.ln_ffn, tape);
  }
  return seq;
}

template <typename Real>
Tensor<Real> duration_head(const Tensor<Real>& dec_out,
                           const ModelParams<Real>& params,
                           const ModelConfig& cfg, Tape<Real>* tape) {
  auto d = linear(dec_out, params.dur_w, params.dur_b, tape);
  // start/end timestamps are bounded to [0,1]
  if (cfg.head == HeadMode::start_end) d = sigmoid(d, tape);
  return d;
}

}  // namespace detail

// Parallel (or causally masked) query decoding: all M slots in one pass.
template <typename Real>
ForwardOutput<Real> decoder_forward(const Tensor<Real>& enc_out,
                                    const Tensor<Real>& seg_probs,
                                    const ModelParams<Real>& params,
                                    const ModelConfig& cfg,
                                    const ForwardCtx<Real>& ctx = {}) {
  if (cfg.decoding == DecodingMode::autoregressive)
    throw ConfigError(
        "decoder_forward handles parallel modes; use decode_autoregressive");
  Tape<Real>* tape = ctx.tape;
  const auto m = static_cast<std::size_t>(cfg.query_count);
  const bool causal = cfg.decoding == DecodingMode::masked_parallel;

  ForwardOutput<Real> out;
  out.seg_probs = seg_probs;

  auto q0 = Tensor<Real>::zeros({m, static_cast<std::size_t>(cfg.hidden_dim)});
  auto dec = detail::decoder_stack(q0, params.query_embed, enc_out, params,
                                   cfg, causal, ctx, &out.attention_maps);
  out.action_probs = softmax_lastdim(
      linear(dec, params.act_w, params.act_b, tape), nullptr, tape);
  out.durations = detail::duration_head(dec, params, cfg, tape);
  return out;
}

// Teacher-forced stepwise decoding: one pass over the embedded prefix
// [SOS, labels...]; row j predicts the action after prefix[j] and its
// duration. Used for training the stepwise variant.
template <typename Real>
ForwardOutput<Real> ar_teacher_forward(const Tensor<Real>& enc_out,
                                       const Tensor<Real>& seg_probs,
                                       const std::vector<int>& prefix_labels,
                                       const ModelParams<Real>& params,
                                       const ModelConfig& cfg,
                                       const ForwardCtx<Real>& ctx = {}) {
  if (!params.label_embed.defined())
    throw ConfigError("ar_teacher_forward: model lacks a label embedding "
                      "table (decoding_mode != autoregressive)");
  const auto m = static_cast<std::size_t>(cfg.query_count);
  if (prefix_labels.size() + 1 > m)
    throw ShapeError("ar prefix of " + std::to_string(prefix_labels.size()) +
                     " labels exceeds query budget M=" + std::to_string(m));
  Tape<Real>* tape = ctx.tape;

  std::vector<int> tokens{cfg.sos_token()};
  tokens.insert(tokens.end(), prefix_labels.begin(), prefix_labels.end());

  ForwardOutput<Real> out;
  out.seg_probs = seg_probs;
  auto seq = embed_rows(params.label_embed, tokens, tape);
  auto pos = slice_rows(params.query_embed, 0, tokens.size(), tape);
  auto dec = detail::decoder_stack(seq, pos, enc_out, params, cfg,
                                   /*causal_self=*/true, ctx,
                                   &out.attention_maps);
  out.action_probs = softmax_lastdim(
      linear(dec, params.act_w, params.act_b, tape), nullptr, tape);
  out.durations = detail::duration_head(dec, params, cfg, tape);
  return out;
}

// Inference loop: re-decodes the grown prefix each step (no KV cache),
// emits argmax labels until the end marker (class index K) or the step
// budget, capped by the query/position budget M. `stop_at_end = false`
// forces the loop through every step (latency measurements of a
// full-length decode); end markers then join the prefix via their own
// embedding row but never the emitted list.
template <typename Real>
ForwardOutput<Real> decode_autoregressive(const Tensor<Real>& enc_out,
                                          const Tensor<Real>& seg_probs,
                                          const ModelParams<Real>& params,
                                          const ModelConfig& cfg,
                                          int max_steps,
                                          bool stop_at_end = true) {
  if (max_steps < 1)
    throw ConfigError("decode_autoregressive: max_steps must be >= 1");
  const int steps = std::min(max_steps, cfg.query_count);
  const int end_marker = cfg.none_class();

  ForwardOutput<Real> out;
  out.seg_probs = seg_probs;
  std::vector<int> prefix;
  std::vector<int> emitted;
  std::vector<Real> durations;

  for (int step = 0; step < steps; ++step) {
    auto fwd = ar_teacher_forward(enc_out, seg_probs, prefix, params, cfg);
    const std::size_t last = fwd.action_probs.rows() - 1;
    int best = 0;
    Real best_p = fwd.action_probs.at(last, 0);
    for (std::size_t j = 1; j < fwd.action_probs.cols(); ++j)
      if (fwd.action_probs.at(last, j) > best_p) {
        best_p = fwd.action_probs.at(last, j);
        best = static_cast<int>(j);
      }
    out.action_probs = fwd.action_probs;
    out.durations = fwd.durations;
    out.attention_maps = std::move(fwd.attention_maps);
    if (best == end_marker) {
      if (stop_at_end) break;
    } else {
      emitted.push_back(best);
      durations.push_back(fwd.durations.at(last, 0));
    }
    if (static_cast<int>(prefix.size()) + 2 > cfg.query_count) break;
    prefix.push_back(best);
  }

  out.emitted = std::move(emitted);
  out.emitted_durations = std::move(durations);
  return out;
}

// Full anticipation pass in the configured decoding mode.
template <typename Real>
ForwardOutput<Real> forward(const Tensor<Real>& features,
                            const ModelParams<Real>& params,
                            const ModelConfig& cfg,
                            const ForwardCtx<Real>& ctx = {},
                            int ar_max_steps = 0) {
  auto [enc_out, seg_probs] = encoder_forward(features, params, cfg, ctx);
  if (cfg.decoding == DecodingMode::autoregressive)
    return decode_autoregressive(
        enc_out, seg_probs, params, cfg,
        ar_max_steps > 0 ? ar_max_steps : cfg.query_count);
  return decoder_forward(enc_out, seg_probs, params, cfg, ctx);
}

}  // namespace futr
