#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "futr/gradcheck.hpp"
#include "futr/model.hpp"
#include "futr/objectives.hpp"
#include "helpers.hpp"

using futr::ModelConfig;
using futr::Tape;
using futr::Tensor;

namespace {

ModelConfig tiny_config(int t_max, int c = 5, int d = 16, int h = 2,
                        int enc = 2, int dec = 1, int m = 3, int k = 4) {
  ModelConfig cfg;
  cfg.num_classes = k;
  cfg.input_dim = c;
  cfg.hidden_dim = d;
  cfg.heads = h;
  cfg.enc_layers = enc;
  cfg.dec_layers = dec;
  cfg.query_count = m;
  cfg.t_max = t_max;
  return cfg;
}

template <typename Real>
std::vector<Real> row_of(const Tensor<Real>& t, std::size_t i) {
  std::vector<Real> out(t.cols());
  for (std::size_t j = 0; j < t.cols(); ++j) out[j] = t.at(i, j);
  return out;
}

}  // namespace

TEST_CASE("embed_inputs basics", "[model]") {
  auto cfg = tiny_config(4, 2, 1, 1, 0, 1, 2, 3);
  auto params = futr::init_params<double>(cfg, 1);

  // zero weights -> zero tokens
  std::fill(params.input_proj.values().begin(),
            params.input_proj.values().end(), 0.0);
  auto e = Tensor<double>::from_rows({{1, 2}, {3, 4}});
  auto x = futr::embed_inputs(e, params, cfg);
  for (double v : x.values()) REQUIRE(v == 0.0);

  // zero input -> zero tokens
  params.input_proj = Tensor<double>::from_rows({{1}, {1}});
  auto zero = futr::embed_inputs(Tensor<double>::zeros({3, 2}), params, cfg);
  for (double v : zero.values()) REQUIRE(v == 0.0);

  // relu(1*1 + (-1)*1) = relu(0) = 0
  auto row = futr::embed_inputs(Tensor<double>::from_rows({{1, -1}}), params,
                                cfg);
  REQUIRE(row.at(0, 0) == 0.0);
}

TEST_CASE("multi_head_attention limit cases", "[model]") {
  const std::size_t d = 3;
  futr::AttnBlockParams<double> block;
  block.wq = {Tensor<double>::zeros({d, d})};
  block.wk = {Tensor<double>::zeros({d, d})};
  block.wv = {Tensor<double>::identity(d)};
  block.wo = Tensor<double>::identity(d);

  // zero logits -> uniform attention -> every row is the value mean
  auto vals = Tensor<double>::from_rows({{3, 0, 0}, {0, 6, 0}, {0, 0, 9}});
  auto out = futr::multi_head_attention<double>(vals, vals, block, nullptr);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE_THAT(out.at(i, 0), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(out.at(i, 1), Catch::Matchers::WithinAbs(2.0, 1e-12));
    REQUIRE_THAT(out.at(i, 2), Catch::Matchers::WithinAbs(3.0, 1e-12));
  }

  // a single key draws attention weight exactly 1 whatever the weights
  futr::Rng rng(3);
  futr::AttnBlockParams<double> rnd;
  rnd.wq = {testutil::random_tensor<double>({d, d}, rng)};
  rnd.wk = {testutil::random_tensor<double>({d, d}, rng)};
  rnd.wv = {Tensor<double>::identity(d)};
  rnd.wo = Tensor<double>::identity(d);
  auto kv = Tensor<double>::from_rows({{5, 6, 7}});
  auto q = testutil::random_tensor<double>({2, d}, rng);
  futr::AttentionMap<double> map;
  auto single =
      futr::multi_head_attention<double>(q, kv, rnd, nullptr, nullptr, &map);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(map.weights[i] == 1.0);
    REQUIRE(single.at(i, 0) == 5.0);
    REQUIRE(single.at(i, 2) == 7.0);
  }
}

TEST_CASE("multi_head_attention gradient check", "[model]") {
  futr::Rng rng(17);
  const std::size_t d = 8, heads = 2, dh = d / heads;
  futr::AttnBlockParams<double> block;
  for (std::size_t h = 0; h < heads; ++h) {
    block.wq.push_back(
        testutil::random_tensor<double>({d, dh}, rng, -0.5, 0.5, true));
    block.wk.push_back(
        testutil::random_tensor<double>({d, dh}, rng, -0.5, 0.5, true));
    block.wv.push_back(
        testutil::random_tensor<double>({d, dh}, rng, -0.5, 0.5, true));
  }
  block.wo = testutil::random_tensor<double>({d, d}, rng, -0.5, 0.5, true);
  auto x = testutil::random_tensor<double>({3, d}, rng, -1, 1, true);
  auto probe = testutil::random_tensor<double>({3, d}, rng, -1, 1);

  std::vector<Tensor<double>> params{x, block.wo};
  for (std::size_t h = 0; h < heads; ++h) {
    params.push_back(block.wq[h]);
    params.push_back(block.wk[h]);
    params.push_back(block.wv[h]);
  }
  const double err = futr::grad_check(
      [&](Tape<double>* t) {
        return futr::sum(
            futr::mul(futr::multi_head_attention(x, x, block, nullptr, t),
                      probe, t),
            t);
      },
      params, 1e-5);
  REQUIRE(err < 1e-5);
}

TEST_CASE("encoder with zero layers and softmax rows", "[model]") {
  auto cfg = tiny_config(6);
  cfg.enc_layers = 0;
  auto params = futr::init_params<double>(cfg, 5);
  futr::Rng rng(9);
  auto features = testutil::random_tensor<double>({5, 5}, rng);

  auto [enc, seg] = futr::encoder_forward(features, params, cfg);
  REQUIRE(enc.rows() == 5);
  REQUIRE(seg.rows() == 5);
  REQUIRE(seg.cols() == 4);
  for (std::size_t i = 0; i < seg.rows(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < seg.cols(); ++j) s += seg.at(i, j);
    REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-5));
  }
}

TEST_CASE("local attention receptive field is exact", "[model]") {
  auto cfg = tiny_config(12);
  cfg.enc_layers = 1;
  cfg.enc_attention = {futr::AttentionKind::local, 3};
  auto params = futr::init_params<double>(cfg, 21);
  futr::Rng rng(22);
  auto features = testutil::random_tensor<double>({9, 5}, rng);

  auto [enc0, seg0] = futr::encoder_forward(features, params, cfg);
  const std::size_t probe = 4;
  auto base_row = row_of(enc0, probe);

  // perturb every token outside {3,4,5}: output at 4 must be bit-identical
  auto perturbed = Tensor<double>::from(features.shape(), features.values());
  for (std::size_t t = 0; t < 9; ++t) {
    if (t + 1 >= probe && t <= probe + 1) continue;
    for (std::size_t j = 0; j < 5; ++j)
      perturbed.at(t, j) += rng.uniform(-3, 3);
  }
  auto [enc1, seg1] = futr::encoder_forward(perturbed, params, cfg);
  REQUIRE(testutil::bits_equal(row_of(enc1, probe), base_row));

  // with 2 layers the radius doubles: outside +-2 is still invisible
  cfg.enc_layers = 2;
  auto params2 = futr::init_params<double>(cfg, 23);
  auto [b0, s0] = futr::encoder_forward(features, params2, cfg);
  auto far = Tensor<double>::from(features.shape(), features.values());
  for (std::size_t t = 0; t < 9; ++t) {
    if (t + 2 >= probe && t <= probe + 2) continue;
    for (std::size_t j = 0; j < 5; ++j) far.at(t, j) += rng.uniform(-3, 3);
  }
  auto [b1, s1] = futr::encoder_forward(far, params2, cfg);
  REQUIRE(testutil::bits_equal(row_of(b1, probe), row_of(b0, probe)));

  // a neighbour inside the window does change the output
  auto near = Tensor<double>::from(features.shape(), features.values());
  near.at(probe + 1, 0) += 1.0;
  auto [n1, ns1] = futr::encoder_forward(near, params, cfg);
  REQUIRE_FALSE(testutil::bits_equal(row_of(n1, probe), base_row));
}

TEST_CASE("masked decoding is causal, parallel is not", "[model]") {
  auto cfg = tiny_config(8, 5, 16, 2, 1, 2, 4, 4);
  futr::Rng rng(31);
  auto features = testutil::random_tensor<double>({6, 5}, rng);

  for (int slot = 0; slot < 3; ++slot) {
    cfg.decoding = futr::DecodingMode::masked_parallel;
    auto params = futr::init_params<double>(cfg, 77);
    auto [enc, seg] = futr::encoder_forward(features, params, cfg);
    auto base = futr::decoder_forward(enc, seg, params, cfg);

    bool causal_ok = true;
    for (int trial = 0; trial < 20; ++trial) {
      for (std::size_t j = static_cast<std::size_t>(slot) + 1; j < 4; ++j)
        for (std::size_t d = 0; d < 16; ++d)
          params.query_embed.at(j, d) += rng.uniform(-2, 2);
      auto out = futr::decoder_forward(enc, seg, params, cfg);
      for (int i = 0; i <= slot; ++i) {
        causal_ok = causal_ok &&
                    testutil::bits_equal(
                        row_of(out.action_probs, static_cast<std::size_t>(i)),
                        row_of(base.action_probs, static_cast<std::size_t>(i)));
        causal_ok = causal_ok &&
                    out.durations.at(static_cast<std::size_t>(i), 0) ==
                        base.durations.at(static_cast<std::size_t>(i), 0);
      }
    }
    REQUIRE(causal_ok);
  }

  // parallel: perturbing a later query leaks into earlier slots
  cfg.decoding = futr::DecodingMode::parallel;
  auto params = futr::init_params<double>(cfg, 77);
  auto [enc, seg] = futr::encoder_forward(features, params, cfg);
  auto base = futr::decoder_forward(enc, seg, params, cfg);
  params.query_embed.at(3, 0) += 1.5;
  auto out = futr::decoder_forward(enc, seg, params, cfg);
  REQUIRE_FALSE(
      testutil::bits_equal(row_of(out.action_probs, 0),
                           row_of(base.action_probs, 0)));
}

TEST_CASE("autoregressive prefix is causal", "[model]") {
  auto cfg = tiny_config(8, 5, 16, 2, 1, 1, 6, 4);
  cfg.decoding = futr::DecodingMode::autoregressive;
  auto params = futr::init_params<double>(cfg, 13);
  futr::Rng rng(14);
  auto features = testutil::random_tensor<double>({6, 5}, rng);
  auto [enc, seg] = futr::encoder_forward(features, params, cfg);

  const std::vector<int> prefix{0, 1, 2};
  auto base = futr::ar_teacher_forward(enc, seg, prefix, params, cfg);

  // class 2 enters the prefix only at token position 3: earlier rows are
  // bitwise blind to its embedding
  for (std::size_t d = 0; d < 16; ++d)
    params.label_embed.at(2, d) += rng.uniform(-2, 2);
  auto out = futr::ar_teacher_forward(enc, seg, prefix, params, cfg);
  for (std::size_t r = 0; r < 3; ++r)
    REQUIRE(testutil::bits_equal(row_of(out.action_probs, r),
                                 row_of(base.action_probs, r)));
  REQUIRE_FALSE(testutil::bits_equal(row_of(out.action_probs, 3),
                                     row_of(base.action_probs, 3)));
}

TEST_CASE("autoregressive decode stops and is deterministic", "[model]") {
  auto cfg = tiny_config(8, 5, 16, 2, 1, 1, 5, 4);
  cfg.decoding = futr::DecodingMode::autoregressive;
  auto params = futr::init_params<double>(cfg, 40);
  futr::Rng rng(41);
  auto features = testutil::random_tensor<double>({6, 5}, rng);
  auto [enc, seg] = futr::encoder_forward(features, params, cfg);

  // bias the action head hard toward the end marker: zero emissions
  auto biased = futr::init_params<double>(cfg, 40);
  biased.act_b.at(0, static_cast<std::size_t>(cfg.none_class())) = 50.0;
  auto stopped = futr::decode_autoregressive(enc, seg, biased, cfg, 5);
  REQUIRE(stopped.emitted.empty());

  auto a = futr::decode_autoregressive(enc, seg, params, cfg, 5);
  auto b = futr::decode_autoregressive(enc, seg, params, cfg, 5);
  REQUIRE(a.emitted == b.emitted);
  REQUIRE(a.emitted_durations == b.emitted_durations);
  REQUIRE(static_cast<int>(a.emitted.size()) <= 5);
}

TEST_CASE("cross attention ratio: ceiling boundary", "[model]") {
  auto cfg = tiny_config(10, 5, 16, 2, 1, 1, 3, 4);
  auto params = futr::init_params<double>(cfg, 55);
  futr::Rng rng(56);
  auto features = testutil::random_tensor<double>({10, 5}, rng);
  auto [enc, seg] = futr::encoder_forward(features, params, cfg);

  cfg.cross_attend_ratio = 1.0;
  auto full = futr::decoder_forward(enc, seg, params, cfg);
  cfg.cross_attend_ratio = 0.9999;  // ceil(9.999) == 10 keys
  auto nearly = futr::decoder_forward(enc, seg, params, cfg);
  REQUIRE(testutil::bits_equal(full.action_probs.values(),
                               nearly.action_probs.values()));

  cfg.cross_attend_ratio = 0.5;
  auto half = futr::decoder_forward(enc, seg, params, cfg);
  REQUIRE_FALSE(testutil::bits_equal(full.action_probs.values(),
                                     half.action_probs.values()));
  // restricted attention puts exactly zero mass on the masked early keys
  for (std::size_t i = 0; i < half.attention_maps[0].rows; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      REQUIRE(half.attention_maps[0].weights[i * 10 + j] == 0.0);
}

TEST_CASE("init_params determinism and sane defaults", "[model]") {
  auto cfg = tiny_config(100, 16, 128, 8, 2, 1, 8, 6);
  auto a = futr::init_params<double>(cfg, 123);
  auto b = futr::init_params<double>(cfg, 123);

  std::vector<std::pair<std::string, Tensor<double>>> named_a, named_b;
  a.for_each([&](const std::string& n, Tensor<double>& t) {
    named_a.emplace_back(n, t);
  });
  b.for_each([&](const std::string& n, Tensor<double>& t) {
    named_b.emplace_back(n, t);
  });
  REQUIRE(named_a.size() == named_b.size());
  REQUIRE_FALSE(named_a.empty());
  for (std::size_t i = 0; i < named_a.size(); ++i) {
    REQUIRE(named_a[i].first == named_b[i].first);
    REQUIRE(testutil::bits_equal(named_a[i].second.values(),
                                 named_b[i].second.values()));
  }

  for (const auto& layer : a.encoder) {
    for (double v : layer.ln_attn.gain.values()) REQUIRE(v == 1.0);
    for (double v : layer.ln_attn.bias.values()) REQUIRE(v == 0.0);
  }

  auto c = futr::init_params<double>(cfg, 124);
  REQUIRE_FALSE(
      testutil::bits_equal(a.input_proj.values(), c.input_proj.values()));

  // random init stays finite on a realistic sequence length
  futr::Rng rng(5);
  auto features = testutil::random_tensor<double>({100, 16}, rng);
  auto out = futr::forward(features, a, cfg);
  REQUIRE(out.seg_probs.all_finite());
  REQUIRE(out.action_probs.all_finite());
  REQUIRE(out.durations.all_finite());
  for (const auto& map : out.attention_maps) {
    REQUIRE(map.rows == 8);
    REQUIRE(map.cols == 100);
    for (std::size_t i = 0; i < map.rows; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < map.cols; ++j)
        s += map.weights[i * map.cols + j];
      REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-5));
    }
  }
}

TEST_CASE("swapping query embeddings permutes slots at init", "[model]") {
  auto cfg = tiny_config(8, 5, 16, 2, 1, 1, 4, 4);
  auto params = futr::init_params<double>(cfg, 61);
  futr::Rng rng(62);
  auto features = testutil::random_tensor<double>({6, 5}, rng);
  auto [enc, seg] = futr::encoder_forward(features, params, cfg);
  auto base = futr::decoder_forward(enc, seg, params, cfg);

  // swap query rows 1 and 2: with zero decoder input only Q distinguishes
  // slots, so rows 1 and 2 of every head output swap too
  for (std::size_t d = 0; d < 16; ++d)
    std::swap(params.query_embed.at(1, d), params.query_embed.at(2, d));
  auto swapped = futr::decoder_forward(enc, seg, params, cfg);

  auto close = [](const std::vector<double>& x, const std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::abs(x[i] - y[i]) > 1e-12) return false;
    return true;
  };
  REQUIRE(close(row_of(swapped.action_probs, 1), row_of(base.action_probs, 2)));
  REQUIRE(close(row_of(swapped.action_probs, 2), row_of(base.action_probs, 1)));
  REQUIRE(close(row_of(swapped.action_probs, 0), row_of(base.action_probs, 0)));
  REQUIRE_THAT(swapped.durations.at(1, 0),
               Catch::Matchers::WithinAbs(base.durations.at(2, 0), 1e-12));
}

TEST_CASE("positional table overflow is a hard error", "[model]") {
  auto cfg = tiny_config(4);
  auto params = futr::init_params<double>(cfg, 3);
  futr::Rng rng(4);
  auto features = testutil::random_tensor<double>({5, 5}, rng);
  REQUIRE_THROWS_AS(futr::encoder_forward(features, params, cfg),
                    futr::ShapeError);
}

TEST_CASE("posembed mode variants all run and differ", "[model]") {
  auto cfg = tiny_config(8);
  futr::Rng rng(71);
  auto features = testutil::random_tensor<double>({6, 5}, rng);

  std::vector<std::vector<double>> outputs;
  for (auto mode : {futr::PosEmbedMode::none,
                    futr::PosEmbedMode::sinusoidal_input,
                    futr::PosEmbedMode::learnable_input,
                    futr::PosEmbedMode::learnable_per_attention}) {
    cfg.posembed = mode;
    auto params = futr::init_params<double>(cfg, 81);
    auto out = futr::forward(features, params, cfg);
    REQUIRE(out.action_probs.all_finite());
    outputs.push_back(out.action_probs.values());
  }
  REQUIRE_FALSE(testutil::bits_equal(outputs[0], outputs[1]));
  REQUIRE_FALSE(testutil::bits_equal(outputs[2], outputs[3]));
}

TEST_CASE("full model gradient check on a small config", "[model]") {
  auto cfg = tiny_config(4, 3, 8, 2, 1, 1, 2, 3);
  auto params = futr::init_params<double>(cfg, 90);
  params.set_requires_grad(true);
  futr::Rng rng(91);
  auto features = testutil::random_tensor<double>({4, 3}, rng);

  futr::SegmentSequence gt{{1, 2}, {0.4, 0.6}};
  const std::vector<int> seg_labels{0, 0, 1, 1};
  futr::LossConfig lcfg;
  lcfg.duration_gate = futr::DurationGate::target_non_none;

  auto loss_fn = [&](Tape<double>* tape) {
    futr::ForwardCtx<double> ctx{tape, nullptr};
    auto fwd = futr::forward(features, params, cfg, ctx);
    return futr::total_loss(fwd, seg_labels, gt, cfg, lcfg, tape).total;
  };
  const double err = futr::grad_check(loss_fn, params.all_tensors(), 1e-5);
  CAPTURE(err);
  REQUIRE(err < 1e-4);
}
