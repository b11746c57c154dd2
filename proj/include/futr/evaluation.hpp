#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "futr/config.hpp"
#include "futr/data.hpp"
#include "futr/model.hpp"
#include "futr/objectives.hpp"

namespace futr {

struct Prediction {
  SegmentSequence segments;
  std::vector<int> frames;
  bool used_fallback = false;
};

namespace detail {

// drop adjacent duplicate actions so the result is a valid segment run
inline SegmentSequence merge_adjacent(std::vector<int> actions,
                                      std::vector<double> durations) {
  SegmentSequence out;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (!out.actions.empty() && out.actions.back() == actions[i]) {
      out.durations.back() += durations[i];
    } else {
      out.actions.push_back(actions[i]);
      out.durations.push_back(durations[i]);
    }
  }
  return out;
}

template <typename Real>
int best_real_class(const Tensor<Real>& action_probs, std::size_t row,
                    int none_class) {
  int best = 0;
  Real best_p = -std::numeric_limits<Real>::infinity();
  for (int j = 0; j < none_class; ++j) {
    const Real p = action_probs.at(row, static_cast<std::size_t>(j));
    if (p > best_p) {
      best_p = p;
      best = j;
    }
  }
  return best;
}

// start_end decoding: every frame takes the most confident covering
// window's class; frames no window covers fall back to the overall most
// confident slot.
template <typename Real>
std::vector<int> frames_from_windows(const ForwardOutput<Real>& fwd,
                                     int horizon, int none_class) {
  struct Slot {
    int cls;
    double prob, s, e;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < fwd.action_probs.rows(); ++i) {
    const int cls = argmax_row(fwd.action_probs, i);
    if (cls == none_class) continue;
    slots.push_back({cls,
                     static_cast<double>(
                         fwd.action_probs.at(i, static_cast<std::size_t>(cls))),
                     static_cast<double>(fwd.durations.at(i, 0)),
                     static_cast<double>(fwd.durations.at(i, 1))});
  }
  std::vector<int> frames(static_cast<std::size_t>(horizon), -1);
  if (slots.empty()) return frames;

  std::size_t global_best = 0;
  for (std::size_t k = 1; k < slots.size(); ++k)
    if (slots[k].prob > slots[global_best].prob) global_best = k;

  for (int t = 1; t <= horizon; ++t) {
    double best_p = -1.0;
    int label = slots[global_best].cls;
    for (const auto& slot : slots) {
      const double lo = slot.s * horizon, hi = slot.e * horizon;
      if (lo < static_cast<double>(t) && static_cast<double>(t) <= hi &&
          slot.prob > best_p) {
        best_p = slot.prob;
        label = slot.cls;
      }
    }
    frames[static_cast<std::size_t>(t - 1)] = label;
  }
  return frames;
}

}  // namespace detail

// Turns one forward pass into frame labels for the horizon. Queries are
// read up to the first NONE; surviving durations are normalized onto the
// simplex; an immediate NONE falls back to the first slot's most probable
// real class over the whole horizon.
template <typename Real>
Prediction decode_prediction(const ForwardOutput<Real>& fwd, int horizon,
                             const ModelConfig& cfg) {
  if (horizon < 1) throw DataError("decode_prediction: horizon < 1");
  const int none_class = cfg.none_class();
  Prediction pred;

  std::vector<int> actions;
  std::vector<double> raw;

  if (cfg.decoding == DecodingMode::autoregressive) {
    actions = fwd.emitted;
    raw.assign(fwd.emitted_durations.begin(), fwd.emitted_durations.end());
  } else if (cfg.head == HeadMode::start_end) {
    auto frames = detail::frames_from_windows(fwd, horizon, none_class);
    if (frames[0] >= 0) {
      pred.frames = std::move(frames);
      pred.segments = frames_to_segments(pred.frames);
      return pred;
    }
    // no real slot at all: same fallback as the duration path
    actions.clear();
  } else {
    for (std::size_t i = 0; i < fwd.action_probs.rows(); ++i) {
      const int cls = detail::argmax_row(fwd.action_probs, i);
      if (cls == none_class) break;
      actions.push_back(cls);
      raw.push_back(static_cast<double>(fwd.durations.at(i, 0)));
    }
  }

  if (actions.empty()) {
    pred.used_fallback = true;
    const int cls = detail::best_real_class(fwd.action_probs, 0, none_class);
    pred.segments = SegmentSequence{{cls}, {1.0}};
    pred.frames = segments_to_frames(pred.segments, horizon);
    return pred;
  }

  const auto fractions =
      normalize_durations(raw, std::vector<char>(raw.size(), 1));
  pred.segments = detail::merge_adjacent(actions, fractions);
  pred.frames = segments_to_frames(pred.segments, horizon);
  return pred;
}

// ---- mean over classes -----------------------------------------------------

struct MocResult {
  double moc = 0.0;
  int classes_present = 0;
  std::vector<long> correct, total;  // per class, pooled over videos
};

// Frames pool across videos; each class present in the ground truth
// contributes correct/total; MoC averages those ratios. Classes that only
// appear in predictions are ignored.
inline MocResult moc_accuracy(const std::vector<std::vector<int>>& pred,
                              const std::vector<std::vector<int>>& gt,
                              int num_classes) {
  if (pred.size() != gt.size())
    throw ShapeError("moc_accuracy: " + std::to_string(pred.size()) +
                     " predictions vs " + std::to_string(gt.size()) +
                     " ground truths");
  MocResult res;
  res.correct.assign(static_cast<std::size_t>(num_classes), 0);
  res.total.assign(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t v = 0; v < gt.size(); ++v) {
    if (pred[v].size() != gt[v].size())
      throw ShapeError("moc_accuracy: video " + std::to_string(v) +
                       " has " + std::to_string(pred[v].size()) +
                       " predicted frames vs " +
                       std::to_string(gt[v].size()));
    for (std::size_t t = 0; t < gt[v].size(); ++t) {
      const auto c = static_cast<std::size_t>(gt[v][t]);
      ++res.total[c];
      if (pred[v][t] == gt[v][t]) ++res.correct[c];
    }
  }
  double acc_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (res.total[static_cast<std::size_t>(c)] == 0) continue;
    ++res.classes_present;
    acc_sum += static_cast<double>(res.correct[static_cast<std::size_t>(c)]) /
               static_cast<double>(res.total[static_cast<std::size_t>(c)]);
  }
  res.moc = res.classes_present ? acc_sum / res.classes_present : 0.0;
  return res;
}

// ---- latency benchmark -----------------------------------------------------

struct LatencyStats {
  double mean_ms = 0.0, std_ms = 0.0;
  int repeats = 0;
};

struct BenchmarkReport {
  double encoder_ms = 0.0;
  int t_obs = 0, warmup = 0, repeats = 0;
  std::vector<std::pair<std::string, LatencyStats>> modes;

  json to_json() const {
    json j;
    j["encoder_ms"] = encoder_ms;
    j["t_obs"] = t_obs;
    j["warmup"] = warmup;
    j["repeats"] = repeats;
    json m;
    for (const auto& [name, stats] : modes)
      m[name] = {{"mean_ms", stats.mean_ms},
                 {"std_ms", stats.std_ms},
                 {"repeats", stats.repeats}};
    j["modes"] = std::move(m);
    return j;
  }
};

// Times the decoding stage per mode on a single thread: the encoder runs
// once up front (reported separately), then each mode decodes the shared
// encoder output `warmup + repeats` times. The stepwise mode is forced
// through all M emissions so it measures a full-length decode.
template <typename Real>
BenchmarkReport benchmark_decoding(const ModelParams<Real>& params,
                                   const ModelConfig& cfg,
                                   const Tensor<Real>& features, int repeats,
                                   int warmup,
                                   const std::vector<DecodingMode>& modes) {
  if (repeats < 1) throw ConfigError("benchmark: repeats must be >= 1");
  if (warmup < 0) throw ConfigError("benchmark: negative warmup");
  using clock = std::chrono::steady_clock;

  BenchmarkReport report;
  report.warmup = warmup;
  report.repeats = repeats;

  const auto enc_start = clock::now();
  auto [enc_out, seg_probs] = encoder_forward(features, params, cfg);
  report.encoder_ms =
      std::chrono::duration<double, std::milli>(clock::now() - enc_start)
          .count();
  report.t_obs = static_cast<int>(enc_out.rows());

  for (DecodingMode mode : modes) {
    ModelConfig mode_cfg = cfg;
    mode_cfg.decoding = mode;
    if (mode == DecodingMode::autoregressive && !params.label_embed.defined())
      throw ConfigError(
          "benchmark: autoregressive mode needs a label-embedding table; "
          "use a model built with decoding_mode=autoregressive");

    auto run_once = [&] {
      if (mode == DecodingMode::autoregressive)
        decode_autoregressive(enc_out, seg_probs, params, mode_cfg,
                              mode_cfg.query_count,
                              /*stop_at_end=*/false);
      else
        decoder_forward(enc_out, seg_probs, params, mode_cfg);
    };

    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(repeats));
    for (int i = 0; i < warmup + repeats; ++i) {
      const auto t0 = clock::now();
      run_once();
      const auto ms =
          std::chrono::duration<double, std::milli>(clock::now() - t0)
              .count();
      if (i >= warmup) samples.push_back(ms);
    }

    LatencyStats stats;
    stats.repeats = repeats;
    for (double s : samples) stats.mean_ms += s;
    stats.mean_ms /= static_cast<double>(samples.size());
    double var = 0.0;
    for (double s : samples)
      var += (s - stats.mean_ms) * (s - stats.mean_ms);
    stats.std_ms = std::sqrt(var / static_cast<double>(samples.size()));
    report.modes.emplace_back(
        detail::enum_to_string(mode, detail::kDecodingModes), stats);
  }
  return report;
}

// ---- attention export -----------------------------------------------------

// CSV of the final decoder layer's cross-attention (row = query, col =
// observed token) plus a JSON sidecar with shapes and per-query argmax
// labels.
template <typename Real>
void export_attention(const ForwardOutput<Real>& fwd,
                      const ModelConfig& cfg, const std::string& csv_path,
                      const std::string& json_path) {
  if (fwd.attention_maps.empty())
    throw DataError("export_attention: no attention maps captured");
  const auto& map = fwd.attention_maps.back();

  std::ofstream csv(csv_path);
  if (!csv) throw DataError("cannot write " + csv_path);
  csv.precision(10);
  for (std::size_t i = 0; i < map.rows; ++i) {
    for (std::size_t j = 0; j < map.cols; ++j) {
      if (j) csv << ",";
      csv << static_cast<double>(map.weights[i * map.cols + j]);
    }
    csv << "\n";
  }

  json side;
  side["queries"] = map.rows;
  side["observed_tokens"] = map.cols;
  side["decoder_layer"] = fwd.attention_maps.size() - 1;
  std::vector<int> labels;
  for (std::size_t i = 0; i < fwd.action_probs.rows(); ++i)
    labels.push_back(detail::argmax_row(fwd.action_probs, i));
  side["predicted_class_per_query"] = labels;
  side["none_class"] = cfg.none_class();
  std::ofstream js(json_path);
  if (!js) throw DataError("cannot write " + json_path);
  js << side.dump(2) << "\n";
}

// ---- full evaluation -----------------------------------------------------

struct EvalCell {
  double alpha = 0, beta = 0;
  double moc = 0;
  int videos = 0;
  int fallbacks = 0;
};

struct EvalVideoRecord {
  std::string id;
  double alpha = 0, beta = 0;
  std::vector<int> actions;
  std::vector<double> durations;
  bool used_fallback = false;
};

struct EvalReport {
  std::vector<EvalCell> grid;
  std::vector<EvalVideoRecord> videos;
  std::map<std::string, long> class_frequency;  // GT future frames, pooled
  double fallback_rate = 0.0;

  json to_json() const {
    json j;
    json cells = json::array();
    for (const auto& c : grid)
      cells.push_back({{"alpha", c.alpha},
                       {"beta", c.beta},
                       {"moc", c.moc},
                       {"videos", c.videos},
                       {"fallbacks", c.fallbacks}});
    j["grid"] = std::move(cells);
    j["fallback_rate"] = fallback_rate;
    j["class_frequency"] = class_frequency;
    json vids = json::array();
    for (const auto& v : videos)
      vids.push_back({{"id", v.id},
                      {"alpha", v.alpha},
                      {"beta", v.beta},
                      {"actions", v.actions},
                      {"durations", v.durations},
                      {"fallback", v.used_fallback}});
    j["videos"] = std::move(vids);
    return j;
  }
};

// MoC over the (alpha, beta) grid for the given split. Videos fan out over
// `jobs` worker threads (parameters are read-only); results land in video
// order so the report is identical at any thread count.
template <typename Real>
EvalReport evaluate(const Corpus<Real>& corpus,
                    const std::vector<std::size_t>& split_ids,
                    const ModelParams<Real>& params, const ModelConfig& cfg,
                    int stride, const std::vector<double>& alphas,
                    const std::vector<double>& betas, int jobs = 1) {
  if (split_ids.empty()) throw DataError("evaluate: empty split");
  if (jobs < 1) jobs = 1;

  EvalReport report;
  long fallback_count = 0, decode_count = 0;

  for (double alpha : alphas) {
    for (double beta : betas) {
      std::vector<std::vector<int>> preds(split_ids.size());
      std::vector<std::vector<int>> gts(split_ids.size());
      std::vector<Prediction> predictions(split_ids.size());

      auto eval_video = [&](std::size_t idx) {
        const auto& video = corpus.videos[split_ids[idx]];
        auto split = make_observation(video, alpha, beta, stride);
        auto fwd = forward(split.observed, params, cfg);
        auto pred = decode_prediction(fwd, split.horizon, cfg);
        gts[idx] = split.future_frames;
        preds[idx] = pred.frames;
        predictions[idx] = std::move(pred);
      };

      if (jobs == 1) {
        for (std::size_t i = 0; i < split_ids.size(); ++i) eval_video(i);
      } else {
        std::vector<std::thread> workers;
        std::size_t chunk =
            (split_ids.size() + static_cast<std::size_t>(jobs) - 1) /
            static_cast<std::size_t>(jobs);
        for (int w = 0; w < jobs; ++w) {
          const std::size_t lo = static_cast<std::size_t>(w) * chunk;
          const std::size_t hi =
              std::min(split_ids.size(), lo + chunk);
          if (lo >= hi) break;
          workers.emplace_back([&, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) eval_video(i);
          });
        }
        for (auto& t : workers) t.join();
      }

      EvalCell cell;
      cell.alpha = alpha;
      cell.beta = beta;
      cell.videos = static_cast<int>(split_ids.size());
      auto moc = moc_accuracy(preds, gts, cfg.num_classes);
      cell.moc = moc.moc;
      for (std::size_t i = 0; i < split_ids.size(); ++i) {
        cell.fallbacks += predictions[i].used_fallback ? 1 : 0;
        ++decode_count;
        fallback_count += predictions[i].used_fallback ? 1 : 0;

        EvalVideoRecord rec;
        rec.id = corpus.videos[split_ids[i]].id;
        rec.alpha = alpha;
        rec.beta = beta;
        rec.actions = predictions[i].segments.actions;
        rec.durations = predictions[i].segments.durations;
        rec.used_fallback = predictions[i].used_fallback;
        report.videos.push_back(std::move(rec));

        for (int f : gts[i])
          ++report.class_frequency[corpus.class_names[
              static_cast<std::size_t>(f)]];
      }
      report.grid.push_back(cell);
    }
  }
  report.fallback_rate =
      decode_count ? static_cast<double>(fallback_count) / decode_count : 0.0;
  return report;
}

}  // namespace futr
