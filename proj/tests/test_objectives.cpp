#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "futr/gradcheck.hpp"
#include "futr/hungarian.hpp"
#include "futr/objectives.hpp"
#include "helpers.hpp"

using futr::Tape;
using futr::TargetAssignment;
using futr::Tensor;

namespace {

// exhaustive-permutation oracle, independent of the solver
double brute_force_total(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0;
    for (int i = 0; i < n; ++i) s += cost[i][perm[i]];
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Tensor<double> probs_from_rows(const std::vector<std::vector<double>>& rows) {
  return futr::softmax_lastdim(Tensor<double>::from_rows(rows));
}

}  // namespace

TEST_CASE("assign_targets_sequential", "[objectives]") {
  futr::SegmentSequence two{{3, 1}, {0.3, 0.7}};
  auto a = futr::assign_targets_sequential(two, 4);
  REQUIRE(a.classes == std::vector<int>{3, 1, TargetAssignment::kNone,
                                        TargetAssignment::kNone});
  REQUIRE(a.delta == 3);
  REQUIRE(a.durations[2] == 0.0);

  futr::SegmentSequence exact{{0, 1, 2}, {0.2, 0.3, 0.5}};
  auto b = futr::assign_targets_sequential(exact, 3);
  REQUIRE(b.real_count() == 3);
  REQUIRE(b.delta == 3);

  futr::SegmentSequence over{{0, 1, 2}, {0.5, 0.25, 0.25}};
  auto c = futr::assign_targets_sequential(over, 2);
  REQUIRE(c.classes == std::vector<int>{0, 1});
  REQUIRE_THAT(c.durations[0], Catch::Matchers::WithinAbs(2.0 / 3, 1e-12));
  REQUIRE_THAT(c.durations[1], Catch::Matchers::WithinAbs(1.0 / 3, 1e-12));
  REQUIRE(c.delta == 2);
}

TEST_CASE("segmentation_loss values and gradient", "[objectives]") {
  // perfect one-hot predictions cost nothing
  auto perfect = Tensor<double>::from_rows({{1, 0, 0}, {0, 0, 1}});
  REQUIRE(futr::segmentation_loss(perfect, {0, 2}).item() == 0.0);

  auto uniform = Tensor<double>::from_rows({{0.25, 0.25, 0.25, 0.25}});
  REQUIRE_THAT(futr::segmentation_loss(uniform, {1}).item(),
               Catch::Matchers::WithinAbs(std::log(4.0), 1e-12));

  REQUIRE_THROWS_AS(futr::segmentation_loss(uniform, {7}), futr::DataError);

  futr::Rng rng(8);
  auto logits = testutil::random_tensor<double>({5, 4}, rng, -1, 1, true);
  const double err = futr::grad_check(
      [&](Tape<double>* t) {
        return futr::segmentation_loss(
            futr::softmax_lastdim(logits, nullptr, t),
            std::vector<int>{0, 1, 2, 3, 1}, t);
      },
      {logits}, 1e-6);
  REQUIRE(err < 1e-5);
}

TEST_CASE("anticipation_loss truncates at the first NONE", "[objectives]") {
  // delta = 1: only the NONE slot is supervised
  TargetAssignment empty;
  empty.classes = {TargetAssignment::kNone, TargetAssignment::kNone};
  empty.durations = {0, 0};
  empty.delta = 1;
  auto probs = probs_from_rows({{0, 0, 0, 5}, {0, 0, 0, 0}});
  const double expect = -std::log(probs.at(0, 3));
  REQUIRE_THAT(futr::anticipation_loss(probs, empty,
                                       futr::DeltaSource::target_first_none)
                   .item(),
               Catch::Matchers::WithinAbs(expect, 1e-12));

  // perfect predictions cost nothing
  auto perfect = Tensor<double>::from_rows({{0, 1, 0, 0}, {0, 0, 0, 1}});
  TargetAssignment one;
  one.classes = {1, TargetAssignment::kNone};
  one.durations = {1.0, 0};
  one.delta = 2;
  REQUIRE(futr::anticipation_loss(perfect, one,
                                  futr::DeltaSource::target_first_none)
              .item() == 0.0);

  // M=2, delta=2, uniform over K+1=4 classes -> 2 log 4
  auto uniform = probs_from_rows({{0, 0, 0, 0}, {0, 0, 0, 0}});
  TargetAssignment both;
  both.classes = {0, 2};
  both.durations = {0.5, 0.5};
  both.delta = 2;
  REQUIRE_THAT(futr::anticipation_loss(uniform, both,
                                       futr::DeltaSource::target_first_none)
                   .item(),
               Catch::Matchers::WithinAbs(2 * std::log(4.0), 1e-12));

  // mutating targets beyond delta cannot move the loss
  futr::Rng rng(12);
  auto p = probs_from_rows({{0.3, -1, 2, 0.1},
                            {1, 0.2, -0.5, 0},
                            {0, 1, 2, 3},
                            {-2, 0, 1, 0.5}});
  TargetAssignment trunc;
  trunc.classes = {2, TargetAssignment::kNone, TargetAssignment::kNone,
                   TargetAssignment::kNone};
  trunc.durations = {1.0, 0, 0, 0};
  trunc.delta = 2;
  const double base =
      futr::anticipation_loss(p, trunc, futr::DeltaSource::target_first_none)
          .item();
  auto mutated = trunc;
  mutated.classes[2] = 1;  // beyond delta; deliberately not a valid prefix
  mutated.durations[2] = 0.4;
  const double after =
      futr::anticipation_loss(p, mutated,
                              futr::DeltaSource::target_first_none)
          .item();
  REQUIRE(base == after);

  // literal reading: delta from the model's own first predicted NONE
  auto pred_none_first = probs_from_rows({{0, 0, 0, 9}, {9, 0, 0, 0}});
  const double lit =
      futr::anticipation_loss(pred_none_first, one,
                              futr::DeltaSource::predicted_first_none)
          .item();
  REQUIRE_THAT(lit,
               Catch::Matchers::WithinAbs(-std::log(pred_none_first.at(0, 1)),
                                          1e-12));
}

TEST_CASE("duration_loss variants and gating", "[objectives]") {
  TargetAssignment a;
  a.classes = {0};
  a.durations = {0.5};
  a.delta = 1;
  auto probs = Tensor<double>::from_rows({{0.9, 0.05, 0.05}});  // argmax real

  auto pred = Tensor<double>::from_rows({{0.0}});
  const double l2 =
      futr::duration_loss(pred, a, probs, futr::DurationLossKind::l2,
                          futr::DurationGate::predicted_non_none)
          .item();
  REQUIRE_THAT(l2, Catch::Matchers::WithinAbs(0.25, 1e-12));
  const double l1 =
      futr::duration_loss(pred, a, probs, futr::DurationLossKind::l1,
                          futr::DurationGate::predicted_non_none)
          .item();
  REQUIRE_THAT(l1, Catch::Matchers::WithinAbs(0.5, 1e-12));
  const double sl1 =
      futr::duration_loss(pred, a, probs, futr::DurationLossKind::smooth_l1,
                          futr::DurationGate::predicted_non_none)
          .item();
  REQUIRE_THAT(sl1, Catch::Matchers::WithinAbs(0.125, 1e-12));

  // exact predictions cost nothing under every variant
  auto exact = Tensor<double>::from_rows({{0.5}});
  for (auto kind : {futr::DurationLossKind::l2, futr::DurationLossKind::l1,
                    futr::DurationLossKind::smooth_l1})
    REQUIRE(futr::duration_loss(exact, a, probs, kind,
                                futr::DurationGate::target_non_none)
                .item() == 0.0);

  // predicted gate: slots whose argmax is NONE contribute nothing,
  // whatever duration they carry
  TargetAssignment two;
  two.classes = {0, TargetAssignment::kNone};
  two.durations = {1.0, 0};
  two.delta = 2;
  auto none_probs =
      Tensor<double>::from_rows({{0.8, 0.1, 0.1}, {0.1, 0.1, 0.8}});
  auto d1 = Tensor<double>::from_rows({{1.0}, {123.0}});
  auto d2 = Tensor<double>::from_rows({{1.0}, {-55.0}});
  const double v1 =
      futr::duration_loss(d1, two, none_probs, futr::DurationLossKind::l2,
                          futr::DurationGate::predicted_non_none)
          .item();
  const double v2 =
      futr::duration_loss(d2, two, none_probs, futr::DurationLossKind::l2,
                          futr::DurationGate::predicted_non_none)
          .item();
  REQUIRE(v1 == v2);

  // gradient flows through the gated slots only
  futr::Rng rng(3);
  auto dp = testutil::random_tensor<double>({2, 1}, rng, -1, 1, true);
  const double err = futr::grad_check(
      [&](Tape<double>* t) {
        return futr::duration_loss(dp, two, none_probs,
                                   futr::DurationLossKind::l2,
                                   futr::DurationGate::target_non_none, t);
      },
      {dp}, 1e-6);
  REQUIRE(err < 1e-6);
}

TEST_CASE("normalize_durations", "[objectives]") {
  auto both = futr::normalize_durations({2, 2}, {1, 1});
  REQUIRE(both == std::vector<double>{0.5, 0.5});

  auto clamped = futr::normalize_durations({-1, 3}, {1, 1});
  REQUIRE_THAT(clamped[0], Catch::Matchers::WithinAbs(0.0, 1e-5));
  REQUIRE_THAT(clamped[1], Catch::Matchers::WithinAbs(1.0, 1e-5));

  auto masked = futr::normalize_durations({1, 1, 1, 9}, {1, 1, 1, 0});
  REQUIRE_THAT(masked[0], Catch::Matchers::WithinAbs(1.0 / 3, 1e-12));
  REQUIRE(masked[3] == 0.0);

  double total = 0;
  futr::Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> raw(5);
    std::vector<char> act(5);
    bool any = false;
    for (int i = 0; i < 5; ++i) {
      raw[static_cast<std::size_t>(i)] = rng.uniform(-2, 2);
      act[static_cast<std::size_t>(i)] = rng.uniform() < 0.7;
      any = any || act[static_cast<std::size_t>(i)];
    }
    if (!any) act[0] = 1;
    auto out = futr::normalize_durations(raw, act);
    total = 0;
    for (double v : out) {
      REQUIRE(v >= 0.0);
      total += v;
    }
    REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-6));
  }

  REQUIRE_THROWS_AS(futr::normalize_durations({1, 2}, {0, 0}),
                    futr::NumericError);
}

TEST_CASE("window_loss values", "[objectives]") {
  auto same = Tensor<double>::from_rows({{0.2, 0.5}});
  REQUIRE_THAT(futr::window_loss(same, 0.2, 0.5, 5, 2).item(),
               Catch::Matchers::WithinAbs(-2.0, 1e-9));

  auto far = Tensor<double>::from_rows({{0.5, 1.0}});
  REQUIRE_THAT(futr::window_loss(far, 0.0, 0.2, 5, 2).item(),
               Catch::Matchers::WithinAbs(6.5, 1e-9));

  auto halfcover = Tensor<double>::from_rows({{0.0, 0.5}});
  REQUIRE_THAT(futr::window_loss(halfcover, 0.0, 1.0, 5, 2).item(),
               Catch::Matchers::WithinAbs(1.5, 1e-9));

  // inverted prediction counts as an empty window: IoU term vanishes
  auto degen = Tensor<double>::from_rows({{0.9, 0.1}});
  REQUIRE_THAT(futr::window_loss(degen, 0.0, 1.0, 5, 2).item(),
               Catch::Matchers::WithinAbs(5 * (0.9 + 0.9), 1e-9));

  futr::Rng rng(17);
  auto w = Tensor<double>::from_rows({{0.31, 0.77}});
  w.set_needs_grad(true);
  const double err = futr::grad_check(
      [&](Tape<double>* t) { return futr::window_loss(w, 0.2, 0.6, 5, 2, t); },
      {w}, 1e-6);
  REQUIRE(err < 1e-6);
}

TEST_CASE("assignment solver equals brute force", "[objectives]") {
  auto direct = futr::solve_assignment({{1, 2}, {3, 1}});
  REQUIRE(direct.row_to_col == std::vector<int>{0, 1});
  REQUIRE(direct.total == 2.0);

  // all-zero cost: lexicographic tie-break picks the identity
  auto zero = futr::solve_assignment_lexicographic(
      {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}});
  REQUIRE(zero.row_to_col == std::vector<int>{0, 1, 2});

  futr::Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 5;
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (auto& row : cost)
      for (auto& v : row) v = rng.uniform(-10, 10);
    const auto got = futr::solve_assignment(cost);
    const auto lex = futr::solve_assignment_lexicographic(cost);
    const double want = brute_force_total(cost);
    REQUIRE_THAT(got.total, Catch::Matchers::WithinAbs(want, 1e-9));
    REQUIRE_THAT(lex.total, Catch::Matchers::WithinAbs(want, 1e-9));
  }
}

TEST_CASE("hungarian_match on NONE-padded targets", "[objectives]") {
  TargetAssignment targets;
  targets.classes = {1, TargetAssignment::kNone, TargetAssignment::kNone};
  targets.durations = {1.0, 0, 0};
  targets.delta = 2;

  // slot 2 is the only one confident in class 1 and its window matches
  auto probs = probs_from_rows(
      {{0, 0, 0, 5}, {0, 0, 0, 5}, {0, 5, 0, 0}});
  auto windows = Tensor<double>::from_rows(
      {{0.4, 0.6}, {0.7, 0.9}, {0.0, 1.0}});
  auto perm = futr::hungarian_match(targets, probs, windows, 5, 2);
  REQUIRE(perm[0] == 2);
  // NONE rows cost zero everywhere; ties resolve lexicographically
  REQUIRE(perm[1] == 0);
  REQUIRE(perm[2] == 1);
}

TEST_CASE("hungarian_loss values and gradient", "[objectives]") {
  // single real target, perfect class prob, identical window: 0 + (-2)
  TargetAssignment one;
  one.classes = {2};
  one.durations = {1.0};
  one.delta = 1;
  auto perfect = Tensor<double>::from_rows({{0, 0, 1, 0}});
  auto window = Tensor<double>::from_rows({{0.0, 1.0}});
  const double v =
      futr::hungarian_loss(one, perfect, window, {0}, 5, 2).item();
  REQUIRE_THAT(v, Catch::Matchers::WithinAbs(-2.0, 1e-9));

  // every target NONE with perfect NONE probabilities: zero loss
  TargetAssignment nones;
  nones.classes = {TargetAssignment::kNone, TargetAssignment::kNone};
  nones.durations = {0, 0};
  nones.delta = 1;
  auto none_perfect =
      Tensor<double>::from_rows({{0, 0, 0, 1}, {0, 0, 0, 1}});
  auto w2 = Tensor<double>::from_rows({{0.1, 0.4}, {0.5, 0.9}});
  REQUIRE(futr::hungarian_loss(nones, none_perfect, w2, {0, 1}, 5, 2).item() ==
          0.0);

  // gradients through the matched loss with a frozen permutation
  futr::Rng rng(9);
  auto logits = testutil::random_tensor<double>({3, 4}, rng, -1, 1, true);
  auto wins = Tensor<double>::from_rows(
      {{0.12, 0.43}, {0.38, 0.71}, {0.66, 0.94}});
  wins.set_needs_grad(true);
  TargetAssignment three;
  three.classes = {0, 2, TargetAssignment::kNone};
  three.durations = {0.55, 0.45, 0};
  three.delta = 3;
  const std::vector<int> perm{1, 0, 2};
  const double err = futr::grad_check(
      [&](Tape<double>* t) {
        return futr::hungarian_loss(
            three, futr::softmax_lastdim(logits, nullptr, t), wins, perm, 5,
            2, t);
      },
      {logits, wins}, 1e-6);
  REQUIRE(err < 1e-5);
}

TEST_CASE("total_loss composition", "[objectives]") {
  futr::ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.input_dim = 4;
  cfg.hidden_dim = 8;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.query_count = 3;
  cfg.t_max = 6;
  auto params = futr::init_params<double>(cfg, 2);
  futr::Rng rng(10);
  auto features = testutil::random_tensor<double>({5, 4}, rng);
  auto fwd = futr::forward(features, params, cfg);

  futr::SegmentSequence gt{{0, 2}, {0.5, 0.5}};
  const std::vector<int> labels{1, 1, 0, 0, 2};

  futr::LossConfig lcfg;
  auto bd = futr::total_loss(fwd, labels, gt, cfg, lcfg);
  REQUIRE_THAT(bd.total_value(),
               Catch::Matchers::WithinAbs(
                   bd.seg_value() + bd.action_value() + bd.duration_value(),
                   1e-9));
  REQUIRE(bd.seg_value() > 0.0);

  // the ablation switch drops the segmentation term entirely
  lcfg.use_seg_loss = false;
  auto no_seg = futr::total_loss(fwd, labels, gt, cfg, lcfg);
  REQUIRE(no_seg.seg_value() == 0.0);
  REQUIRE_THAT(no_seg.total_value(),
               Catch::Matchers::WithinAbs(
                   no_seg.action_value() + no_seg.duration_value(), 1e-9));

  // start_end sequential path (window regression) stays consistent
  futr::ModelConfig se_cfg = cfg;
  se_cfg.head = futr::HeadMode::start_end;
  auto se_params = futr::init_params<double>(se_cfg, 2);
  auto se_fwd = futr::forward(features, se_params, se_cfg);
  futr::LossConfig se_loss;
  auto se_bd = futr::total_loss(se_fwd, labels, gt, se_cfg, se_loss);
  REQUIRE_THAT(se_bd.total_value(),
               Catch::Matchers::WithinAbs(se_bd.seg_value() +
                                              se_bd.action_value() +
                                              se_bd.duration_value(),
                                          1e-9));

  // hungarian path agrees with its standalone loss given the same match
  futr::LossConfig h_loss;
  h_loss.assignment = futr::AssignmentMode::hungarian;
  auto h_bd = futr::total_loss(se_fwd, labels, gt, se_cfg, h_loss);
  auto assignment = futr::assign_targets_sequential(gt, 3);
  auto perm = futr::hungarian_match(assignment, se_fwd.action_probs,
                                    se_fwd.durations, h_loss.lambda_l1,
                                    h_loss.lambda_tiou);
  const double standalone =
      futr::hungarian_loss(assignment, se_fwd.action_probs, se_fwd.durations,
                           perm, h_loss.lambda_l1, h_loss.lambda_tiou)
          .item();
  REQUIRE_THAT(h_bd.action_value() + h_bd.duration_value(),
               Catch::Matchers::WithinAbs(standalone, 1e-9));
}
