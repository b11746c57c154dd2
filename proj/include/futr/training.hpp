#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "futr/config.hpp"
#include "futr/data.hpp"
#include "futr/model.hpp"
#include "futr/objectives.hpp"

namespace futr {

// Linear warm-up to the peak, then cosine annealing down to min_lr.
inline double lr_at(int epoch, const ScheduleConfig& s) {
  s.validate();
  if (epoch < 0 || epoch > s.total_epochs)
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) +
                      " outside [0," + std::to_string(s.total_epochs) + "]");
  if (epoch < s.warmup_epochs)
    return s.peak_lr * static_cast<double>(epoch) /
           static_cast<double>(s.warmup_epochs);
  if (s.total_epochs == s.warmup_epochs) return s.peak_lr;
  const double progress =
      static_cast<double>(epoch - s.warmup_epochs) /
      static_cast<double>(s.total_epochs - s.warmup_epochs);
  return s.min_lr + (s.peak_lr - s.min_lr) / 2.0 *
                        (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Adam with bias correction followed by decoupled weight decay.
template <typename Real>
class AdamW {
 public:
  AdamW(ModelParams<Real>& params, const TrainConfig& cfg)
      : beta1_(cfg.adam_beta1),
        beta2_(cfg.adam_beta2),
        eps_(cfg.adam_eps),
        weight_decay_(cfg.weight_decay) {
    params.for_each([&](const std::string& name, Tensor<Real>& t) {
      names_.push_back(name);
      m_.emplace_back(t.size(), Real(0));
      v_.emplace_back(t.size(), Real(0));
    });
  }

  void step(ModelParams<Real>& params, double lr) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, step_count_);
    const double bc2 = 1.0 - std::pow(beta2_, step_count_);
    std::size_t idx = 0;
    params.for_each([&](const std::string& name, Tensor<Real>& t) {
      if (idx >= names_.size() || names_[idx] != name)
        throw ShapeError("AdamW: parameter set changed ('" + name + "')");
      auto& m = m_[idx];
      auto& v = v_[idx];
      auto& p = t.values();
      t.ensure_grad();
      const auto& g = t.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        if (!std::isfinite(gi))
          throw NumericError("AdamW: non-finite gradient in parameter '" +
                             name + "'");
        const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
        const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        m[i] = static_cast<Real>(mi);
        v[i] = static_cast<Real>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        double pv = static_cast<double>(p[i]);
        pv -= lr * mhat / (std::sqrt(vhat) + eps_);
        pv -= lr * weight_decay_ * pv;
        p[i] = static_cast<Real>(pv);
      }
      ++idx;
    });
  }

  int step_count() const { return step_count_; }
  void set_step_count(int n) { step_count_ = n; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<std::vector<Real>>& first_moments() { return m_; }
  std::vector<std::vector<Real>>& second_moments() { return v_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  int step_count_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<Real>> m_, v_;
};

// global-norm gradient clipping; no-op when max_norm <= 0
template <typename Real>
void clip_grad_norm(ModelParams<Real>& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0.0;
  params.for_each([&](const std::string&, Tensor<Real>& t) {
    t.ensure_grad();
    for (Real g : t.grad()) sq += static_cast<double>(g) * g;
  });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const Real scale_by = static_cast<Real>(max_norm / norm);
  params.for_each([&](const std::string&, Tensor<Real>& t) {
    for (Real& g : t.grad()) g *= scale_by;
  });
}

// ---- data wiring -------------------------------------------------------------

// K and C come from the corpus; the positional table is sized to cover any
// observation of any corpus video at the configured stride.
template <typename Real>
void resolve_config_from_data(ModelConfig& cfg, const Corpus<Real>& corpus,
                              int stride) {
  if (cfg.num_classes == 0) cfg.num_classes = corpus.num_classes();
  if (cfg.input_dim == 0) cfg.input_dim = corpus.feature_dim;
  if (cfg.num_classes != corpus.num_classes())
    throw ConfigError("config num_classes=" + std::to_string(cfg.num_classes) +
                      " but the corpus has " +
                      std::to_string(corpus.num_classes()) + " classes");
  if (cfg.input_dim != corpus.feature_dim)
    throw ConfigError("config input_dim=" + std::to_string(cfg.input_dim) +
                      " but the corpus features have " +
                      std::to_string(corpus.feature_dim) + " columns");
  if (cfg.t_max == 0) {
    int longest = 1;
    for (const auto& v : corpus.videos)
      longest = std::max(longest, v.frames() / stride + 1);
    cfg.t_max = longest;
  }
}

template <typename Real>
std::vector<ObservationSplit<Real>> build_observations(
    const Corpus<Real>& corpus, const std::vector<std::size_t>& split_ids,
    const std::vector<double>& alphas, double beta, int stride) {
  std::vector<ObservationSplit<Real>> out;
  for (std::size_t vid : split_ids)
    for (double a : alphas)
      out.push_back(make_observation(corpus.videos[vid], a, beta, stride));
  return out;
}

// ---- training loop -------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double lr = 0, seg = 0, action = 0, duration = 0, total = 0;

  json to_json() const {
    return {{"epoch", epoch}, {"lr", lr},       {"seg", seg},
            {"action", action}, {"duration", duration}, {"total", total}};
  }
};

template <typename Real>
LossBreakdown<Real> sample_loss(const ObservationSplit<Real>& split,
                                ModelParams<Real>& params,
                                const ModelConfig& mcfg,
                                const LossConfig& lcfg,
                                const ForwardCtx<Real>& ctx) {
  if (mcfg.decoding == DecodingMode::autoregressive) {
    // the prefix plus SOS must fit the query/position budget
    auto gt = truncate_segments(split.target, mcfg.query_count - 1);
    auto [enc, seg] = encoder_forward(split.observed, params, mcfg, ctx);
    auto fwd = ar_teacher_forward(enc, seg, gt.actions, params, mcfg, ctx);
    return total_loss(fwd, split.seg_labels, gt, mcfg, lcfg, ctx.tape);
  }
  auto fwd = forward(split.observed, params, mcfg, ctx);
  return total_loss(fwd, split.seg_labels, split.target, mcfg, lcfg,
                    ctx.tape);
}

// One epoch-at-a-time trainer. Every video appears once per configured
// alpha each epoch; batches average per-sample losses; shuffling derives a
// fresh seed from (train seed, epoch) so a resumed run replays the exact
// stream.
template <typename Real>
std::vector<EpochLog> train(
    const Corpus<Real>& corpus, const RunConfig& cfg,
    ModelParams<Real>& params, AdamW<Real>& opt, int start_epoch = 0,
    const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
  cfg.validate();
  if (corpus.train_split.empty()) throw DataError("train: empty train split");

  auto observations = build_observations(corpus, corpus.train_split,
                                         cfg.train.alphas, cfg.train.beta,
                                         cfg.train.stride);
  std::vector<std::size_t> order(observations.size());

  std::vector<EpochLog> logs;
  for (int epoch = start_epoch; epoch < cfg.schedule.total_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.schedule);
    Rng shuffle_rng(mix_seed(cfg.train.seed, 0x5000 + epoch));
    Rng dropout_rng(mix_seed(cfg.train.seed, 0xd000 + epoch));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;

    std::size_t cursor = 0;
    int batch_index = 0;
    while (cursor < order.size()) {
      const std::size_t batch_end = std::min(
          order.size(), cursor + static_cast<std::size_t>(cfg.train.batch_size));
      const auto batch_n = static_cast<Real>(batch_end - cursor);

      for (std::size_t s = cursor; s < batch_end; ++s) {
        Tape<Real> tape;
        ForwardCtx<Real> ctx{&tape,
                             cfg.model.dropout > 0 ? &dropout_rng : nullptr};
        auto bd = sample_loss(observations[order[s]], params, cfg.model,
                              cfg.loss, ctx);
        const double total = bd.total_value();
        if (!std::isfinite(total))
          throw NumericError("train: loss diverged at epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) + " (total=" +
                             std::to_string(total) + ")");
        log.seg += bd.seg_value();
        log.action += bd.action_value();
        log.duration += bd.duration_value();
        log.total += total;
        tape.backward(scale(bd.total, Real(1) / batch_n, &tape));
      }

      clip_grad_norm(params, cfg.train.grad_clip);
      opt.step(params, lr);
      params.zero_grad();
      cursor = batch_end;
      ++batch_index;
    }

    const double inv = 1.0 / static_cast<double>(order.size());
    log.seg *= inv;
    log.action *= inv;
    log.duration *= inv;
    log.total *= inv;
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

// ---- checkpointing -------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "FUTRCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Real>
struct Checkpoint {
  RunConfig config;
  int epoch = 0;
  std::string rng_state;
  ModelParams<Real> params;
  bool has_optimizer = false;
  int opt_step = 0;
  std::vector<std::vector<Real>> opt_m, opt_v;
};

namespace detail {

template <typename Real>
void write_named_tensor(std::ostream& out, const std::string& name,
                        const Shape& shape, const std::vector<Real>& vals) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(Real)));
}

template <typename Real>
std::pair<std::string, std::pair<Shape, std::vector<Real>>> read_named_tensor(
    std::istream& in, const std::string& path) {
  const std::uint32_t name_len = read_u32(in, path, "tensor name length");
  std::string name(name_len, '\0');
  if (!in.read(name.data(), name_len))
    throw DataError(path + ": truncated tensor name");
  const std::uint32_t rank = read_u32(in, path, "tensor rank");
  Shape shape(rank);
  std::size_t numel = 1;
  for (auto& d : shape) {
    d = read_u32(in, path, "tensor dim");
    numel *= d;
  }
  std::vector<Real> vals(numel);
  if (!in.read(reinterpret_cast<char*>(vals.data()),
               static_cast<std::streamsize>(numel * sizeof(Real))))
    throw DataError(path + ": truncated payload for tensor '" + name + "'");
  return {name, {std::move(shape), std::move(vals)}};
}

}  // namespace detail

template <typename Real>
void save_checkpoint(const std::string& path, Checkpoint<Real>& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 8);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(sizeof(Real)));

  json meta;
  meta["config"] = ckpt.config.to_json();
  meta["epoch"] = ckpt.epoch;
  meta["rng_state"] = ckpt.rng_state;
  meta["has_optimizer"] = ckpt.has_optimizer;
  meta["opt_step"] = ckpt.opt_step;
  const std::string meta_text = meta.dump();
  detail::write_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out.write(meta_text.data(),
            static_cast<std::streamsize>(meta_text.size()));

  std::uint32_t count = 0;
  ckpt.params.for_each([&](const std::string&, Tensor<Real>&) { ++count; });
  if (ckpt.has_optimizer) count = count * 3;
  detail::write_u32(out, count);

  std::size_t idx = 0;
  ckpt.params.for_each([&](const std::string& name, Tensor<Real>& t) {
    detail::write_named_tensor(out, "param." + name, t.shape(), t.values());
    if (ckpt.has_optimizer) {
      detail::write_named_tensor(out, "opt.m." + name, t.shape(),
                                 ckpt.opt_m[idx]);
      detail::write_named_tensor(out, "opt.v." + name, t.shape(),
                                 ckpt.opt_v[idx]);
    }
    ++idx;
  });
  if (!out) throw DataError("short write to checkpoint: " + path);
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError(path + ": not a checkpoint (bad magic)");
  const std::uint32_t version = detail::read_u32(in, path, "version");
  if (version != kCheckpointVersion)
    throw DataError(path + ": checkpoint version " + std::to_string(version) +
                    " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t width = detail::read_u32(in, path, "element width");
  if (width != sizeof(Real))
    throw DataError(path + ": element width " + std::to_string(width) +
                    " does not match this build (" +
                    std::to_string(sizeof(Real)) + ")");

  const std::uint32_t meta_len = detail::read_u32(in, path, "meta length");
  std::string meta_text(meta_len, '\0');
  if (!in.read(meta_text.data(), meta_len))
    throw DataError(path + ": truncated metadata");
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    throw DataError(path + ": bad metadata: " + e.what());
  }

  Checkpoint<Real> ckpt;
  ckpt.config = RunConfig::from_json(meta.at("config"));
  ckpt.epoch = meta.at("epoch").get<int>();
  ckpt.rng_state = meta.value("rng_state", "");
  ckpt.has_optimizer = meta.value("has_optimizer", false);
  ckpt.opt_step = meta.value("opt_step", 0);

  const std::uint32_t count = detail::read_u32(in, path, "tensor count");
  std::map<std::string, std::pair<Shape, std::vector<Real>>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, payload] = detail::read_named_tensor<Real>(in, path);
    tensors[name] = std::move(payload);
  }

  ckpt.params = init_params<Real>(ckpt.config.model, 0);
  ckpt.params.for_each([&](const std::string& name, Tensor<Real>& t) {
    auto it = tensors.find("param." + name);
    if (it == tensors.end())
      throw DataError(path + ": missing tensor 'param." + name + "'");
    if (it->second.first != t.shape())
      throw DataError(path + ": shape mismatch for '" + name + "'");
    t.values() = it->second.second;
    if (ckpt.has_optimizer) {
      auto m = tensors.find("opt.m." + name);
      auto v = tensors.find("opt.v." + name);
      if (m == tensors.end() || v == tensors.end())
        throw DataError(path + ": missing optimizer state for '" + name + "'");
      ckpt.opt_m.push_back(m->second.second);
      ckpt.opt_v.push_back(v->second.second);
    }
  });
  return ckpt;
}

template <typename Real>
Checkpoint<Real> make_checkpoint(const RunConfig& cfg,
                                 ModelParams<Real>& params, AdamW<Real>& opt,
                                 int epoch) {
  Checkpoint<Real> ckpt;
  ckpt.config = cfg;
  ckpt.epoch = epoch;
  ckpt.rng_state = std::to_string(cfg.train.seed);
  ckpt.params = params;
  ckpt.has_optimizer = true;
  ckpt.opt_step = opt.step_count();
  ckpt.opt_m = opt.first_moments();
  ckpt.opt_v = opt.second_moments();
  return ckpt;
}

// rebuilds the optimizer from checkpointed moments
template <typename Real>
AdamW<Real> restore_optimizer(Checkpoint<Real>& ckpt) {
  AdamW<Real> opt(ckpt.params, ckpt.config.train);
  if (ckpt.has_optimizer) {
    opt.set_step_count(ckpt.opt_step);
    opt.first_moments() = ckpt.opt_m;
    opt.second_moments() = ckpt.opt_v;
  }
  return opt;
}

}  // namespace futr
