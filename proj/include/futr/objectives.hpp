#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "futr/config.hpp"
#include "futr/data.hpp"
#include "futr/hungarian.hpp"
#include "futr/model.hpp"
#include "futr/tensor.hpp"

// Training objectives: frame segmentation cross-entropy, query/target
// assignment (sequential or Hungarian), the action cross-entropy truncated
// at the first NONE slot, duration regression variants, and the start-end
// window loss (L1 + temporal IoU).

namespace futr {

struct TargetAssignment {
  static constexpr int kNone = -1;

  std::vector<int> classes;      // per slot; kNone marks no target
  std::vector<double> durations; // per slot duration fraction; 0 when kNone
  int delta = 0;  // 1-based index of the first NONE slot, capped at slot count

  int slots() const { return static_cast<int>(classes.size()); }

  int real_count() const {
    int n = 0;
    for (int c : classes) n += (c != kNone);
    return n;
  }

  // cumulative [start, end) fractions per real slot
  std::vector<std::pair<double, double>> windows() const {
    std::vector<std::pair<double, double>> out(classes.size(), {0.0, 0.0});
    double cum = 0.0;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i] == kNone) continue;
      out[i] = {cum, cum + durations[i]};
      cum += durations[i];
    }
    return out;
  }

  void validate() const {
    if (classes.size() != durations.size())
      throw ShapeError("target assignment: ragged");
    bool seen_none = false;
    double total = 0.0;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i] == kNone) {
        seen_none = true;
      } else {
        if (seen_none)
          throw DataError("target assignment: real target after NONE");
        total += durations[i];
      }
    }
    if (real_count() > 0 && std::abs(total - 1.0) > 1e-6)
      throw DataError("target assignment: durations sum to " +
                      std::to_string(total));
  }
};

// Segment i goes to slot i; overflow segments are dropped with the
// surviving durations renormalized; remaining slots carry NONE.
inline TargetAssignment assign_targets_sequential(const SegmentSequence& gt,
                                                  int slots) {
  if (slots < 1) throw ConfigError("assign_targets_sequential: slots < 1");
  gt.validate();
  const int n = static_cast<int>(gt.size());
  const int keep = std::min(n, slots);

  TargetAssignment a;
  a.classes.assign(static_cast<std::size_t>(slots), TargetAssignment::kNone);
  a.durations.assign(static_cast<std::size_t>(slots), 0.0);
  double kept_total = 0.0;
  for (int i = 0; i < keep; ++i) kept_total += gt.durations[i];
  for (int i = 0; i < keep; ++i) {
    a.classes[i] = gt.actions[i];
    a.durations[i] = gt.durations[i] / kept_total;
  }
  a.delta = std::min(keep + 1, slots);
  a.validate();
  return a;
}

// -sum_t log p_t[label_t] over all observed tokens
template <typename Real>
Tensor<Real> segmentation_loss(const Tensor<Real>& seg_probs,
                               const std::vector<int>& gt_labels,
                               Tape<Real>* tape = nullptr) {
  for (int l : gt_labels)
    if (l < 0 || static_cast<std::size_t>(l) >= seg_probs.cols())
      throw DataError("segmentation_loss: label " + std::to_string(l) +
                      " outside [0," + std::to_string(seg_probs.cols()) + ")");
  return nll_sum(seg_probs, gt_labels, tape);
}

namespace detail {

template <typename Real>
int argmax_row(const Tensor<Real>& t, std::size_t row) {
  int best = 0;
  Real best_v = t.at(row, 0);
  for (std::size_t j = 1; j < t.cols(); ++j)
    if (t.at(row, j) > best_v) {
      best_v = t.at(row, j);
      best = static_cast<int>(j);
    }
  return best;
}

// 1-based position of the first slot predicting NONE (class index K),
// capped at the slot count.
template <typename Real>
int predicted_first_none(const Tensor<Real>& action_probs, int none_class) {
  const int m = static_cast<int>(action_probs.rows());
  for (int i = 0; i < m; ++i)
    if (argmax_row(action_probs, static_cast<std::size_t>(i)) == none_class)
      return i + 1;
  return m;
}

}  // namespace detail

// Cross-entropy over slots 1..delta: the real-action prefix plus the first
// NONE slot. delta comes from the ground truth by default, or from the
// model's own first predicted NONE under the literal reading.
template <typename Real>
Tensor<Real> anticipation_loss(const Tensor<Real>& action_probs,
                               const TargetAssignment& assignment,
                               DeltaSource delta_source,
                               Tape<Real>* tape = nullptr) {
  const int m = assignment.slots();
  if (static_cast<int>(action_probs.rows()) != m)
    throw ShapeError("anticipation_loss: " +
                     std::to_string(action_probs.rows()) + " slots vs " +
                     std::to_string(m) + " targets");
  const int none_class = static_cast<int>(action_probs.cols()) - 1;
  const int delta =
      delta_source == DeltaSource::target_first_none
          ? assignment.delta
          : detail::predicted_first_none(action_probs, none_class);

  std::vector<int> targets;
  targets.reserve(static_cast<std::size_t>(delta));
  for (int i = 0; i < delta; ++i)
    targets.push_back(assignment.classes[static_cast<std::size_t>(i)] ==
                              TargetAssignment::kNone
                          ? none_class
                          : assignment.classes[static_cast<std::size_t>(i)]);
  return nll_sum(
      slice_rows(action_probs, 0, static_cast<std::size_t>(delta), tape),
      targets, tape);
}

// Per-slot regression on the duration scalar, gated either by the model's
// own non-NONE argmax or by the target being real.
template <typename Real>
Tensor<Real> duration_loss(const Tensor<Real>& durations,
                           const TargetAssignment& assignment,
                           const Tensor<Real>& action_probs,
                           DurationLossKind kind, DurationGate gate,
                           Tape<Real>* tape = nullptr) {
  const auto m = static_cast<std::size_t>(assignment.slots());
  if (durations.rank() != 2 || durations.rows() != m || durations.cols() != 1)
    throw ShapeError("duration_loss: expected " + std::to_string(m) +
                     "x1 durations, got " +
                     shape_to_string(durations.shape()));

  const int none_class = static_cast<int>(action_probs.cols()) - 1;
  auto target = Tensor<Real>::zeros({m, 1});
  auto gate_mask = Tensor<Real>::zeros({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    target.at(i, 0) = static_cast<Real>(assignment.durations[i]);
    const bool open =
        gate == DurationGate::predicted_non_none
            ? detail::argmax_row(action_probs, i) != none_class
            : assignment.classes[i] != TargetAssignment::kNone;
    gate_mask.at(i, 0) = open ? Real(1) : Real(0);
  }

  auto diff = sub(durations, target, tape);
  Tensor<Real> per_slot;
  switch (kind) {
    case DurationLossKind::l2:
      per_slot = mul(diff, diff, tape);
      break;
    case DurationLossKind::l1:
      per_slot = abs_val(diff, tape);
      break;
    case DurationLossKind::smooth_l1:
      per_slot = smooth_l1(diff, tape);
      break;
  }
  return sum(mul(per_slot, gate_mask, tape), tape);
}

// Inference-time projection onto the duration simplex: active raw values
// are clamped at epsilon and divided by their sum; inactive slots are 0.
inline std::vector<double> normalize_durations(
    const std::vector<double>& raw, const std::vector<char>& active) {
  if (raw.size() != active.size())
    throw ShapeError("normalize_durations: ragged inputs");
  constexpr double eps = 1e-6;
  double total = 0.0;
  bool any = false;
  std::vector<double> out(raw.size(), 0.0);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!active[i]) continue;
    any = true;
    out[i] = std::max(raw[i], eps);
    total += out[i];
  }
  if (!any) throw NumericError("normalize_durations: no active slot");
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] /= total;
  return out;
}

// lambda_l1 * ||t - t_hat||_1 - lambda_tiou * |overlap| / |union|, built
// from differentiable primitives. A degenerate prediction (start > end)
// has zero overlap by construction, leaving only the L1 pull.
template <typename Real>
Tensor<Real> window_loss(const Tensor<Real>& pred_window, double start,
                         double end, double lambda_l1, double lambda_tiou,
                         Tape<Real>* tape = nullptr) {
  if (pred_window.rank() != 2 || pred_window.rows() != 1 ||
      pred_window.cols() != 2)
    throw ShapeError("window_loss: predicted window must be 1x2, got " +
                     shape_to_string(pred_window.shape()));
  if (!(start <= end))
    throw DataError("window_loss: target window has start > end");

  auto target = Tensor<Real>::from({1, 2}, {static_cast<Real>(start),
                                            static_cast<Real>(end)});
  auto l1 = sum(abs_val(sub(pred_window, target, tape), tape), tape);

  auto s_hat = slice_cols(pred_window, 0, 1, tape);
  auto e_hat = slice_cols(pred_window, 1, 2, tape);
  auto s_t = Tensor<Real>::constant({1, 1}, static_cast<Real>(start));
  auto e_t = Tensor<Real>::constant({1, 1}, static_cast<Real>(end));

  // min(e, e_hat) = e - relu(e - e_hat); max(s, s_hat) = s + relu(s_hat - s)
  auto min_end = sub(e_t, relu(sub(e_t, e_hat, tape), tape), tape);
  auto max_start = add(s_t, relu(sub(s_hat, s_t, tape), tape), tape);
  auto overlap = relu(sub(min_end, max_start, tape), tape);

  auto len_hat = sub(e_hat, s_hat, tape);
  auto len_t = Tensor<Real>::constant({1, 1}, static_cast<Real>(end - start));
  auto uni = sub(add(len_t, len_hat, tape), overlap, tape);
  // clamp the union away from zero before dividing
  auto floor_c = Tensor<Real>::constant({1, 1}, Real(1e-9));
  auto uni_safe = add(relu(sub(uni, floor_c, tape), tape), floor_c, tape);
  auto tiou = sum(divide(overlap, uni_safe, tape), tape);

  return sub(scale(l1, static_cast<Real>(lambda_l1), tape),
             scale(tiou, static_cast<Real>(lambda_tiou), tape), tape);
}

namespace detail {

inline double window_loss_value(double s, double e, double s_hat, double e_hat,
                                double lambda_l1, double lambda_tiou) {
  const double l1 = std::abs(s - s_hat) + std::abs(e - e_hat);
  const double overlap =
      std::max(0.0, std::min(e, e_hat) - std::max(s, s_hat));
  const double uni = (e - s) + (e_hat - s_hat) - overlap;
  const double tiou = overlap > 0.0 ? overlap / std::max(uni, 1e-9) : 0.0;
  return lambda_l1 * l1 - lambda_tiou * tiou;
}

}  // namespace detail

// Optimal target->slot permutation under the matching cost
//   1_{c != NONE} * (-p[slot, c] + window_loss(t, t_hat)),
// solved exactly; ties resolve to the lexicographically smallest
// permutation. Probabilities and windows are read as plain values.
template <typename Real>
std::vector<int> hungarian_match(const TargetAssignment& targets,
                                 const Tensor<Real>& action_probs,
                                 const Tensor<Real>& windows,
                                 double lambda_l1, double lambda_tiou) {
  const int m = targets.slots();
  if (static_cast<int>(action_probs.rows()) != m ||
      static_cast<int>(windows.rows()) != m || windows.cols() != 2)
    throw ShapeError("hungarian_match: inconsistent prediction shapes");
  const auto target_windows = targets.windows();

  std::vector<std::vector<double>> cost(
      static_cast<std::size_t>(m), std::vector<double>(m, 0.0));
  for (int i = 0; i < m; ++i) {
    const int cls = targets.classes[static_cast<std::size_t>(i)];
    if (cls == TargetAssignment::kNone) continue;  // NONE targets cost 0
    for (int j = 0; j < m; ++j) {
      const double p = static_cast<double>(
          action_probs.at(static_cast<std::size_t>(j),
                          static_cast<std::size_t>(cls)));
      const double wl = detail::window_loss_value(
          target_windows[static_cast<std::size_t>(i)].first,
          target_windows[static_cast<std::size_t>(i)].second,
          static_cast<double>(windows.at(static_cast<std::size_t>(j), 0)),
          static_cast<double>(windows.at(static_cast<std::size_t>(j), 1)),
          lambda_l1, lambda_tiou);
      cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          -p + wl;
    }
  }
  return solve_assignment_lexicographic(cost).row_to_col;
}

// Cross-entropy over all M matched slots (NONE targets supervise the NONE
// class) plus the window loss on real targets; the permutation is a
// constant with respect to gradients.
template <typename Real>
Tensor<Real> hungarian_loss(const TargetAssignment& targets,
                            const Tensor<Real>& action_probs,
                            const Tensor<Real>& windows,
                            const std::vector<int>& perm, double lambda_l1,
                            double lambda_tiou, Tape<Real>* tape = nullptr) {
  const int m = targets.slots();
  if (static_cast<int>(perm.size()) != m)
    throw ShapeError("hungarian_loss: permutation size mismatch");
  const int none_class = static_cast<int>(action_probs.cols()) - 1;
  const auto target_windows = targets.windows();

  std::vector<Tensor<Real>> matched_rows;
  std::vector<int> matched_targets;
  for (int i = 0; i < m; ++i) {
    const auto slot = static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]);
    matched_rows.push_back(slice_rows(action_probs, slot, slot + 1, tape));
    const int cls = targets.classes[static_cast<std::size_t>(i)];
    matched_targets.push_back(cls == TargetAssignment::kNone ? none_class
                                                             : cls);
  }
  auto loss = nll_sum(concat_rows(matched_rows, tape), matched_targets, tape);

  for (int i = 0; i < m; ++i) {
    const int cls = targets.classes[static_cast<std::size_t>(i)];
    if (cls == TargetAssignment::kNone) continue;
    const auto slot = static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]);
    auto w = slice_rows(windows, slot, slot + 1, tape);
    loss = add(loss,
               window_loss(w, target_windows[static_cast<std::size_t>(i)].first,
                           target_windows[static_cast<std::size_t>(i)].second,
                           lambda_l1, lambda_tiou, tape),
               tape);
  }
  return loss;
}

template <typename Real>
struct LossBreakdown {
  Tensor<Real> seg, action, duration, total;
  double match_cost = 0.0;  // Hungarian mode only

  double seg_value() const { return static_cast<double>(seg.item()); }
  double action_value() const { return static_cast<double>(action.item()); }
  double duration_value() const {
    return static_cast<double>(duration.item());
  }
  double total_value() const { return static_cast<double>(total.item()); }
};

// Combines the per-sample objective for the configured output structuring:
//   sequential + duration head: seg + action CE + duration regression
//   sequential + start_end head: seg + action CE + window loss
//   hungarian  + start_end head: seg + matched CE + matched window loss
// The total is always one addition chain seg + action + duration.
template <typename Real>
LossBreakdown<Real> total_loss(const ForwardOutput<Real>& fwd,
                               const std::vector<int>& seg_labels,
                               const SegmentSequence& gt,
                               const ModelConfig& mcfg, const LossConfig& lcfg,
                               Tape<Real>* tape = nullptr) {
  LossBreakdown<Real> out;
  out.seg = lcfg.use_seg_loss
                ? segmentation_loss(fwd.seg_probs, seg_labels, tape)
                : Tensor<Real>::scalar(Real(0));

  const int slots = static_cast<int>(fwd.action_probs.rows());
  const TargetAssignment assignment = assign_targets_sequential(gt, slots);

  if (lcfg.assignment == AssignmentMode::hungarian) {
    const auto perm = hungarian_match(assignment, fwd.action_probs,
                                      fwd.durations, lcfg.lambda_l1,
                                      lcfg.lambda_tiou);
    // split CE and window parts so the breakdown stays comparable
    std::vector<Tensor<Real>> rows;
    std::vector<int> matched_targets;
    const int none_class = static_cast<int>(fwd.action_probs.cols()) - 1;
    for (int i = 0; i < slots; ++i) {
      const auto slot =
          static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]);
      rows.push_back(slice_rows(fwd.action_probs, slot, slot + 1, tape));
      const int cls = assignment.classes[static_cast<std::size_t>(i)];
      matched_targets.push_back(cls == TargetAssignment::kNone ? none_class
                                                               : cls);
    }
    out.action = nll_sum(concat_rows(rows, tape), matched_targets, tape);

    auto window_part = Tensor<Real>::scalar(Real(0));
    const auto target_windows = assignment.windows();
    for (int i = 0; i < slots; ++i) {
      const int cls = assignment.classes[static_cast<std::size_t>(i)];
      if (cls == TargetAssignment::kNone) continue;
      const auto slot =
          static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]);
      auto w = slice_rows(fwd.durations, slot, slot + 1, tape);
      window_part =
          add(window_part,
              window_loss(w, target_windows[static_cast<std::size_t>(i)].first,
                          target_windows[static_cast<std::size_t>(i)].second,
                          lcfg.lambda_l1, lcfg.lambda_tiou, tape),
              tape);
    }
    out.duration = window_part;

    double match_total = 0.0;
    const auto tw = assignment.windows();
    for (int i = 0; i < slots; ++i) {
      const int cls = assignment.classes[static_cast<std::size_t>(i)];
      if (cls == TargetAssignment::kNone) continue;
      const auto slot =
          static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]);
      match_total +=
          -static_cast<double>(fwd.action_probs.at(
              slot, static_cast<std::size_t>(cls))) +
          detail::window_loss_value(
              tw[static_cast<std::size_t>(i)].first,
              tw[static_cast<std::size_t>(i)].second,
              static_cast<double>(fwd.durations.at(slot, 0)),
              static_cast<double>(fwd.durations.at(slot, 1)), lcfg.lambda_l1,
              lcfg.lambda_tiou);
    }
    out.match_cost = match_total;
  } else {
    out.action = anticipation_loss(fwd.action_probs, assignment,
                                   lcfg.delta_source, tape);
    if (mcfg.head == HeadMode::start_end) {
      auto window_part = Tensor<Real>::scalar(Real(0));
      const auto target_windows = assignment.windows();
      for (int i = 0; i < slots; ++i) {
        const int cls = assignment.classes[static_cast<std::size_t>(i)];
        if (cls == TargetAssignment::kNone) continue;
        auto w = slice_rows(fwd.durations, static_cast<std::size_t>(i),
                            static_cast<std::size_t>(i) + 1, tape);
        window_part = add(
            window_part,
            window_loss(w, target_windows[static_cast<std::size_t>(i)].first,
                        target_windows[static_cast<std::size_t>(i)].second,
                        lcfg.lambda_l1, lcfg.lambda_tiou, tape),
            tape);
      }
      out.duration = window_part;
    } else {
      out.duration =
          duration_loss(fwd.durations, assignment, fwd.action_probs,
                        lcfg.duration_loss, lcfg.duration_gate, tape);
    }
  }

  out.total = add(add(out.seg, out.action, tape), out.duration, tape);
  return out;
}

}  // namespace futr
