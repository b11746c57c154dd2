#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "futr/gradcheck.hpp"
#include "futr/mask.hpp"
#include "futr/tensor.hpp"
#include "helpers.hpp"

using futr::Tape;
using futr::Tensor;

TEST_CASE("matmul identity and hand products", "[tensor]") {
  auto a = Tensor<double>::from_rows({{1, 2}, {3, 4}});
  auto eye = Tensor<double>::identity(2);

  auto left = futr::matmul(eye, a);
  auto right = futr::matmul(a, eye);
  // bitwise: multiplying by I must not perturb a single ulp
  REQUIRE(testutil::bits_equal(left.values(), a.values()));
  REQUIRE(testutil::bits_equal(right.values(), a.values()));

  auto row = Tensor<double>::from_rows({{1, 2}});
  auto col = Tensor<double>::from_rows({{3}, {4}});
  auto prod = futr::matmul(row, col);
  REQUIRE(prod.rows() == 1);
  REQUIRE(prod.cols() == 1);
  REQUIRE(prod.at(0, 0) == 11.0);
}

TEST_CASE("matmul shape error names both shapes", "[tensor]") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({2, 3});
  REQUIRE_THROWS_MATCHES(
      futr::matmul(a, b), futr::ShapeError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("[2x3]") &&
          Catch::Matchers::ContainsSubstring("and [2x3]")));
}

TEST_CASE("matmul gradient of sum(A*B) equals ones*B^T", "[tensor]") {
  futr::Rng rng(7);
  auto a = testutil::random_tensor<double>({3, 4}, rng, -1, 1, true);
  auto b = testutil::random_tensor<double>({4, 5}, rng, -1, 1, true);

  Tape<double> tape;
  auto c = futr::matmul(a, b, &tape);
  auto loss = futr::sum(c, &tape);
  tape.backward(loss);

  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double expect = 0.0;
      for (std::size_t k = 0; k < 5; ++k) expect += b.at(j, k);
      REQUIRE_THAT(a.grad()[i * 4 + j],
                   Catch::Matchers::WithinRel(expect, 1e-12));
    }

  const double err = futr::grad_check(
      [&](Tape<double>* t) {
        return futr::sum(futr::matmul(a, b, t), t);
      },
      {a, b}, 1e-5);
  REQUIRE(err < 1e-6);
}

TEST_CASE("softmax basics", "[tensor]") {
  auto x = Tensor<double>::from_rows({{0, 0}});
  auto y = futr::softmax_lastdim(x);
  REQUIRE(y.at(0, 0) == 0.5);
  REQUIRE(y.at(0, 1) == 0.5);

  auto big = Tensor<double>::from_rows({{1000, 0}});
  auto yb = futr::softmax_lastdim(big);
  REQUIRE(std::isfinite(yb.at(0, 0)));
  REQUIRE_THAT(yb.at(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE(yb.at(0, 1) >= 0.0);

  futr::AttentionMask m{1, 2, {1, 0}};
  auto masked =
      futr::softmax_lastdim(Tensor<double>::from_rows({{-500, 700}}), &m);
  REQUIRE(masked.at(0, 0) == 1.0);
  REQUIRE(masked.at(0, 1) == 0.0);

  futr::AttentionMask dead{1, 2, {0, 0}};
  REQUIRE_THROWS_AS(futr::softmax_lastdim(x, &dead),
                    futr::DegenerateMaskError);
}

TEST_CASE("softmax rows sum to one on random inputs", "[tensor]") {
  futr::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = testutil::random_tensor<double>({5, 7}, rng, -8, 8);
    auto y = futr::softmax_lastdim(x);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += y.at(i, j);
      REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
  }
}

TEST_CASE("layer_norm forward cases", "[tensor]") {
  auto gain = Tensor<double>::constant({1, 3}, 1.0);
  auto bias = Tensor<double>::zeros({1, 3});
  auto flat = futr::layer_norm(Tensor<double>::from_rows({{5, 5, 5}}), gain,
                               bias, 1e-9);
  for (std::size_t j = 0; j < 3; ++j)
    REQUIRE_THAT(flat.at(0, j), Catch::Matchers::WithinAbs(0.0, 1e-9));

  auto g2 = Tensor<double>::constant({1, 2}, 1.0);
  auto b2 = Tensor<double>::zeros({1, 2});
  auto pre = futr::layer_norm(Tensor<double>::from_rows({{1, -1}}), g2, b2,
                              1e-12);
  REQUIRE_THAT(pre.at(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-6));
  REQUIRE_THAT(pre.at(0, 1), Catch::Matchers::WithinAbs(-1.0, 1e-6));
}

TEST_CASE("elementwise ops and subgradient convention", "[tensor]") {
  auto r = futr::relu(Tensor<double>::from_rows({{-1, 2}}));
  REQUIRE(r.at(0, 0) == 0.0);
  REQUIRE(r.at(0, 1) == 2.0);

  // d relu / dx: 0 at x=-1, 1 at x=2, and 0 exactly at x=0
  auto x = Tensor<double>::from_rows({{-1, 2, 0}}, true);
  Tape<double> tape;
  auto loss = futr::sum(futr::relu(x, &tape), &tape);
  tape.backward(loss);
  REQUIRE(x.grad()[0] == 0.0);
  REQUIRE(x.grad()[1] == 1.0);
  REQUIRE(x.grad()[2] == 0.0);

  auto w = Tensor<double>::identity(2);
  auto b = Tensor<double>::zeros({1, 2});
  auto in = Tensor<double>::from_rows({{3, -4}, {0.5, 9}});
  auto out = futr::linear(in, w, b);
  REQUIRE(testutil::bits_equal(out.values(), in.values()));
}

TEST_CASE("every differentiable op matches central differences", "[tensor]") {
  futr::Rng rng(1234);

  auto check = [&](auto&& fn, std::vector<Tensor<double>> params) {
    const double err = futr::grad_check(fn, params, 1e-5);
    CAPTURE(err);
    REQUIRE(err < 1e-6);
  };

  for (int trial = 0; trial < 100; ++trial) {
    auto a = testutil::random_tensor<double>({3, 4}, rng, -2, 2, true);
    auto b = testutil::random_tensor<double>({3, 4}, rng, -2, 2, true);
    auto w = testutil::random_tensor<double>({4, 3}, rng, -1, 1, true);
    auto bias = testutil::random_tensor<double>({1, 3}, rng, -1, 1, true);
    auto denom = testutil::random_tensor<double>({3, 4}, rng, 0.5, 2.5, true);

    switch (trial % 10) {
      case 0:
        check([&](Tape<double>* t) { return futr::sum(futr::add(a, b, t), t); },
              {a, b});
        break;
      case 1:
        check([&](Tape<double>* t) { return futr::mean(futr::mul(a, b, t), t); },
              {a, b});
        break;
      case 2:
        check(
            [&](Tape<double>* t) {
              return futr::sum(futr::linear(a, w, bias, t), t);
            },
            {a, w, bias});
        break;
      case 3:
        check(
            [&](Tape<double>* t) {
              return futr::sum(
                  futr::mul(futr::softmax_lastdim(a, nullptr, t), b, t), t);
            },
            {a, b});
        break;
      case 4: {
        auto gain4 = testutil::random_tensor<double>({1, 4}, rng, 0.5, 1.5,
                                                     true);
        auto bias4 = testutil::random_tensor<double>({1, 4}, rng, -0.5, 0.5,
                                                     true);
        check(
            [&](Tape<double>* t) {
              return futr::sum(
                  futr::mul(futr::layer_norm(a, gain4, bias4, 1e-5, t), b, t),
                  t);
            },
            {a, gain4, bias4});
        break;
      }
      case 5:
        check(
            [&](Tape<double>* t) {
              return futr::sum(futr::divide(a, denom, t), t);
            },
            {a, denom});
        break;
      case 6:
        check(
            [&](Tape<double>* t) {
              return futr::sum(futr::sigmoid(a, t), t);
            },
            {a});
        break;
      case 7:
        check(
            [&](Tape<double>* t) {
              return futr::sum(futr::smooth_l1(futr::sub(a, b, t), t), t);
            },
            {a, b});
        break;
      case 8:
        check(
            [&](Tape<double>* t) {
              auto top = futr::slice_rows(a, 0, 2, t);
              auto bot = futr::slice_rows(a, 2, 3, t);
              auto cat = futr::concat_rows<double>({bot, top}, t);
              return futr::sum(futr::mul(cat, b, t), t);
            },
            {a, b});
        break;
      case 9:
        check(
            [&](Tape<double>* t) {
              auto lhs = futr::slice_cols(a, 0, 2, t);
              auto rhs = futr::slice_cols(a, 2, 4, t);
              auto cat = futr::concat_cols<double>({rhs, lhs}, t);
              return futr::sum(futr::mul(futr::transpose(cat, t),
                                         futr::transpose(b, t), t),
                               t);
            },
            {a, b});
        break;
    }
  }
}

TEST_CASE("layer_norm backward vs central differences", "[tensor]") {
  futr::Rng rng(55);
  auto x = testutil::random_tensor<double>({4, 6}, rng, -2, 2, true);
  auto gain = testutil::random_tensor<double>({1, 6}, rng, 0.5, 1.5, true);
  auto bias = testutil::random_tensor<double>({1, 6}, rng, -0.5, 0.5, true);
  auto probe = testutil::random_tensor<double>({4, 6}, rng, -1, 1);

  const double err = futr::grad_check(
      [&](Tape<double>* t) {
        return futr::sum(
            futr::mul(futr::layer_norm(x, gain, bias, 1e-5, t), probe, t), t);
      },
      {x, gain, bias}, 1e-5);
  REQUIRE(err < 1e-6);
}

TEST_CASE("nll_sum and embed_rows gradients", "[tensor]") {
  futr::Rng rng(99);
  auto logits = testutil::random_tensor<double>({5, 4}, rng, -1, 1, true);
  std::vector<int> targets{0, 3, 1, 2, 2};

  const double err = futr::grad_check(
      [&](Tape<double>* t) {
        return futr::nll_sum(futr::softmax_lastdim(logits, nullptr, t),
                             targets, t);
      },
      {logits}, 1e-6);
  REQUIRE(err < 1e-6);

  auto table = testutil::random_tensor<double>({6, 3}, rng, -1, 1, true);
  std::vector<int> idx{1, 1, 4};
  auto probe = testutil::random_tensor<double>({3, 3}, rng, -1, 1);
  const double err2 = futr::grad_check(
      [&](Tape<double>* t) {
        return futr::sum(futr::mul(futr::embed_rows(table, idx, t), probe, t),
                         t);
      },
      {table}, 1e-6);
  REQUIRE(err2 < 1e-6);
}

TEST_CASE("grad_check sanity cases", "[tensor]") {
  auto w = Tensor<double>::scalar(3.0, true);
  const double err = futr::grad_check(
      [&](Tape<double>* t) { return futr::mul(w, w, t); }, {w}, 1e-5);
  REQUIRE(err < 1e-9);

  auto c = Tensor<double>::scalar(2.0, true);
  const double cerr = futr::grad_check(
      [&](Tape<double>* t) {
        (void)t;
        return Tensor<double>::scalar(7.0);
      },
      {c}, 1e-5);
  REQUIRE(cerr == 0.0);
}

TEST_CASE("tape replay determinism", "[tensor]") {
  auto run = [] {
    futr::Rng rng(4242);
    auto x = testutil::random_tensor<double>({6, 6}, rng, -1, 1, true);
    auto w = testutil::random_tensor<double>({6, 6}, rng, -1, 1, true);
    Tape<double> tape;
    auto h = futr::relu(futr::matmul(x, w, &tape), &tape);
    auto p = futr::softmax_lastdim(h, nullptr, &tape);
    auto loss = futr::mean(p, &tape);
    tape.backward(loss);
    return std::make_pair(loss.item(), w.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  REQUIRE(std::memcmp(&l1, &l2, sizeof(double)) == 0);
  REQUIRE(testutil::bits_equal(g1, g2));
}

TEST_CASE("forward ops keep values finite on finite input", "[tensor]") {
  futr::Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    auto a = testutil::random_tensor<double>({4, 4}, rng, -50, 50);
    auto b = testutil::random_tensor<double>({4, 4}, rng, -50, 50);
    REQUIRE(futr::matmul(a, b).all_finite());
    REQUIRE(futr::softmax_lastdim(a).all_finite());
    REQUIRE(futr::relu(a).all_finite());
    REQUIRE(futr::sigmoid(a).all_finite());
  }
}

TEST_CASE("mask builders", "[tensor]") {
  auto causal = futr::build_attention_mask(futr::MaskKind::causal, 3, 3);
  REQUIRE(causal.allowed(0, 0));
  REQUIRE_FALSE(causal.allowed(0, 1));
  REQUIRE(causal.allowed(1, 0));
  REQUIRE(causal.allowed(1, 1));
  REQUIRE_FALSE(causal.allowed(1, 2));
  REQUIRE(causal.allowed(2, 2));

  auto local = futr::build_attention_mask(futr::MaskKind::local, 5, 5, 3);
  REQUIRE_FALSE(local.allowed(2, 0));
  REQUIRE(local.allowed(2, 1));
  REQUIRE(local.allowed(2, 2));
  REQUIRE(local.allowed(2, 3));
  REQUIRE_FALSE(local.allowed(2, 4));

  auto recent = futr::build_attention_mask(futr::MaskKind::cross_recent, 4, 10,
                                           0, 0.5);
  for (std::size_t j = 0; j < 5; ++j) REQUIRE_FALSE(recent.allowed(0, j));
  for (std::size_t j = 5; j < 10; ++j) REQUIRE(recent.allowed(0, j));

  REQUIRE_THROWS_AS(futr::build_attention_mask(futr::MaskKind::local, 4, 4, 2),
                    futr::ConfigError);

  // a window wider than the sequence behaves like global attention
  auto wide = futr::build_attention_mask(futr::MaskKind::local, 4, 4, 201);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) REQUIRE(wide.allowed(i, j));
}
