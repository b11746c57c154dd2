#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "futr/common.hpp"
#include "futr/jsonio.hpp"

namespace futr {

enum class AttentionKind { global, local };
enum class DecodingMode { parallel, masked_parallel, autoregressive };
enum class HeadMode { duration, start_end };
enum class PosEmbedMode {
  none,
  sinusoidal_input,
  learnable_input,
  learnable_per_attention
};
enum class DurationLossKind { l2, l1, smooth_l1 };
enum class DurationGate { predicted_non_none, target_non_none };
enum class DeltaSource { target_first_none, predicted_first_none };
enum class AssignmentMode { sequential, hungarian };

namespace detail {

template <typename Enum>
struct EnumName {
  Enum value;
  const char* name;
};

template <typename Enum, std::size_t N>
std::string enum_to_string(Enum v, const EnumName<Enum> (&table)[N]) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  throw ConfigError("unknown enum value");
}

template <typename Enum, std::size_t N>
Enum enum_from_string(const std::string& s, const EnumName<Enum> (&table)[N],
                      const char* what) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string opts;
  for (const auto& e : table) opts += std::string(" ") + e.name;
  throw ConfigError(std::string(what) + ": unknown value '" + s +
                    "', expected one of" + opts);
}

inline constexpr EnumName<AttentionKind> kAttentionKinds[] = {
    {AttentionKind::global, "global"}, {AttentionKind::local, "local"}};
inline constexpr EnumName<DecodingMode> kDecodingModes[] = {
    {DecodingMode::parallel, "parallel"},
    {DecodingMode::masked_parallel, "masked_parallel"},
    {DecodingMode::autoregressive, "autoregressive"}};
inline constexpr EnumName<HeadMode> kHeadModes[] = {
    {HeadMode::duration, "duration"}, {HeadMode::start_end, "start_end"}};
inline constexpr EnumName<PosEmbedMode> kPosEmbedModes[] = {
    {PosEmbedMode::none, "none"},
    {PosEmbedMode::sinusoidal_input, "sinusoidal_input"},
    {PosEmbedMode::learnable_input, "learnable_input"},
    {PosEmbedMode::learnable_per_attention, "learnable_per_attention"}};
inline constexpr EnumName<DurationLossKind> kDurationLossKinds[] = {
    {DurationLossKind::l2, "l2"},
    {DurationLossKind::l1, "l1"},
    {DurationLossKind::smooth_l1, "smooth_l1"}};
inline constexpr EnumName<DurationGate> kDurationGates[] = {
    {DurationGate::predicted_non_none, "predicted_non_none"},
    {DurationGate::target_non_none, "target_non_none"}};
inline constexpr EnumName<DeltaSource> kDeltaSources[] = {
    {DeltaSource::target_first_none, "target_first_none"},
    {DeltaSource::predicted_first_none, "predicted_first_none"}};
inline constexpr EnumName<AssignmentMode> kAssignmentModes[] = {
    {AssignmentMode::sequential, "sequential"},
    {AssignmentMode::hungarian, "hungarian"}};

}  // namespace detail

struct AttentionMode {
  AttentionKind kind = AttentionKind::global;
  int window = 0;  // odd, used when kind == local
};

struct ModelConfig {
  int num_classes = 0;  // K; filled from the data mapping
  int input_dim = 0;    // C; filled from the data features
  int hidden_dim = 128;
  int query_count = 8;
  int heads = 8;
  int enc_layers = 2;
  int dec_layers = 1;
  int t_max = 0;  // positional table length; 0 = size from data
  int ffn_expansion = 4;
  AttentionMode enc_attention{AttentionKind::global, 201};
  AttentionMode dec_attention{AttentionKind::global, 3};
  DecodingMode decoding = DecodingMode::parallel;
  HeadMode head = HeadMode::duration;
  PosEmbedMode posembed = PosEmbedMode::learnable_per_attention;
  double cross_attend_ratio = 1.0;
  double dropout = 0.0;

  int head_dim() const { return hidden_dim / heads; }
  int none_class() const { return num_classes; }
  // label-embedding table rows: K classes + NONE + SOS + EOS
  int sos_token() const { return num_classes + 1; }
  int eos_token() const { return num_classes + 2; }

  void validate() const {
    if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
    if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
    if (hidden_dim < 1 || heads < 1 || hidden_dim % heads != 0)
      throw ConfigError("model: hidden_dim (" + std::to_string(hidden_dim) +
                        ") must be a positive multiple of heads (" +
                        std::to_string(heads) + ")");
    if (query_count < 1) throw ConfigError("model: query_count must be >= 1");
    if (enc_layers < 0 || dec_layers < 0)
      throw ConfigError("model: negative layer count");
    if (t_max < 0) throw ConfigError("model: negative t_max");
    if (ffn_expansion < 1) throw ConfigError("model: ffn_expansion < 1");
    for (const auto* a : {&enc_attention, &dec_attention})
      if (a->kind == AttentionKind::local &&
          (a->window < 1 || a->window % 2 == 0))
        throw ConfigError("model: local attention window must be odd >= 1");
    if (!(cross_attend_ratio > 0.0) || cross_attend_ratio > 1.0)
      throw ConfigError("model: cross_attend_ratio must lie in (0,1]");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("model: dropout must lie in [0,1)");
    if (decoding == DecodingMode::autoregressive && head == HeadMode::start_end)
      throw ConfigError(
          "model: autoregressive decoding supports the duration head only");
  }

  json to_json() const {
    json j;
    j["num_classes"] = num_classes;
    j["input_dim"] = input_dim;
    j["hidden_dim"] = hidden_dim;
    j["query_count"] = query_count;
    j["heads"] = heads;
    j["enc_layers"] = enc_layers;
    j["dec_layers"] = dec_layers;
    j["t_max"] = t_max;
    j["ffn_expansion"] = ffn_expansion;
    j["enc_attention"] = {
        {"mode", detail::enum_to_string(enc_attention.kind,
                                        detail::kAttentionKinds)},
        {"window", enc_attention.window}};
    j["dec_attention"] = {
        {"mode", detail::enum_to_string(dec_attention.kind,
                                        detail::kAttentionKinds)},
        {"window", dec_attention.window}};
    j["decoding_mode"] = detail::enum_to_string(decoding,
                                                detail::kDecodingModes);
    j["head_mode"] = detail::enum_to_string(head, detail::kHeadModes);
    j["posembed_mode"] = detail::enum_to_string(posembed,
                                                detail::kPosEmbedModes);
    j["cross_attend_ratio"] = cross_attend_ratio;
    j["dropout"] = dropout;
    return j;
  }

  static ModelConfig from_json(const json& j) {
    reject_unknown_keys(
        j, "model",
        {"num_classes", "input_dim", "hidden_dim", "query_count", "heads",
         "enc_layers", "dec_layers", "t_max", "ffn_expansion", "enc_attention",
         "dec_attention", "decoding_mode", "head_mode", "posembed_mode",
         "cross_attend_ratio", "dropout"});
    ModelConfig c;
    c.num_classes = json_get(j, "model", "num_classes", c.num_classes);
    c.input_dim = json_get(j, "model", "input_dim", c.input_dim);
    c.hidden_dim = json_get(j, "model", "hidden_dim", c.hidden_dim);
    c.query_count = json_get(j, "model", "query_count", c.query_count);
    c.heads = json_get(j, "model", "heads", c.heads);
    c.enc_layers = json_get(j, "model", "enc_layers", c.enc_layers);
    c.dec_layers = json_get(j, "model", "dec_layers", c.dec_layers);
    c.t_max = json_get(j, "model", "t_max", c.t_max);
    c.ffn_expansion = json_get(j, "model", "ffn_expansion", c.ffn_expansion);
    auto parse_attn = [&](const char* key, AttentionMode def) {
      if (!j.contains(key)) return def;
      const json& aj = j.at(key);
      reject_unknown_keys(aj, key, {"mode", "window"});
      AttentionMode m = def;
      m.kind = detail::enum_from_string(
          json_get<std::string>(aj, key, "mode", "global"),
          detail::kAttentionKinds, key);
      m.window = json_get(aj, key, "window", def.window);
      return m;
    };
    c.enc_attention = parse_attn("enc_attention", c.enc_attention);
    c.dec_attention = parse_attn("dec_attention", c.dec_attention);
    if (j.contains("decoding_mode"))
      c.decoding = detail::enum_from_string(
          j.at("decoding_mode").get<std::string>(), detail::kDecodingModes,
          "model.decoding_mode");
    if (j.contains("head_mode"))
      c.head = detail::enum_from_string(j.at("head_mode").get<std::string>(),
                                        detail::kHeadModes, "model.head_mode");
    if (j.contains("posembed_mode"))
      c.posembed = detail::enum_from_string(
          j.at("posembed_mode").get<std::string>(), detail::kPosEmbedModes,
          "model.posembed_mode");
    c.cross_attend_ratio =
        json_get(j, "model", "cross_attend_ratio", c.cross_attend_ratio);
    c.dropout = json_get(j, "model", "dropout", c.dropout);
    return c;
  }
};

struct LossConfig {
  bool use_seg_loss = true;
  DurationLossKind duration_loss = DurationLossKind::l2;
  DurationGate duration_gate = DurationGate::predicted_non_none;
  DeltaSource delta_source = DeltaSource::target_first_none;
  AssignmentMode assignment = AssignmentMode::sequential;
  double lambda_l1 = 5.0;
  double lambda_tiou = 2.0;

  void validate(const ModelConfig& model) const {
    if (assignment == AssignmentMode::hungarian &&
        model.head != HeadMode::start_end)
      throw ConfigError("loss: hungarian assignment requires the start_end "
                        "head");
    if (lambda_l1 < 0 || lambda_tiou < 0)
      throw ConfigError("loss: negative window-loss weight");
  }

  json to_json() const {
    json j;
    j["use_seg_loss"] = use_seg_loss;
    j["duration_loss"] =
        detail::enum_to_string(duration_loss, detail::kDurationLossKinds);
    j["duration_gate"] =
        detail::enum_to_string(duration_gate, detail::kDurationGates);
    j["delta_source"] =
        detail::enum_to_string(delta_source, detail::kDeltaSources);
    j["assignment"] =
        detail::enum_to_string(assignment, detail::kAssignmentModes);
    j["lambda_l1"] = lambda_l1;
    j["lambda_tiou"] = lambda_tiou;
    return j;
  }

  static LossConfig from_json(const json& j) {
    reject_unknown_keys(j, "loss",
                        {"use_seg_loss", "duration_loss", "duration_gate",
                         "delta_source", "assignment", "lambda_l1",
                         "lambda_tiou"});
    LossConfig c;
    c.use_seg_loss = json_get(j, "loss", "use_seg_loss", c.use_seg_loss);
    if (j.contains("duration_loss"))
      c.duration_loss = detail::enum_from_string(
          j.at("duration_loss").get<std::string>(),
          detail::kDurationLossKinds, "loss.duration_loss");
    if (j.contains("duration_gate"))
      c.duration_gate = detail::enum_from_string(
          j.at("duration_gate").get<std::string>(), detail::kDurationGates,
          "loss.duration_gate");
    if (j.contains("delta_source"))
      c.delta_source = detail::enum_from_string(
          j.at("delta_source").get<std::string>(), detail::kDeltaSources,
          "loss.delta_source");
    if (j.contains("assignment"))
      c.assignment = detail::enum_from_string(
          j.at("assignment").get<std::string>(), detail::kAssignmentModes,
          "loss.assignment");
    c.lambda_l1 = json_get(j, "loss", "lambda_l1", c.lambda_l1);
    c.lambda_tiou = json_get(j, "loss", "lambda_tiou", c.lambda_tiou);
    return c;
  }
};

struct ScheduleConfig {
  double peak_lr = 1e-3;
  int warmup_epochs = 10;
  int total_epochs = 60;
  double min_lr = 0.0;

  void validate() const {
    if (warmup_epochs < 0 || warmup_epochs > total_epochs)
      throw ConfigError("schedule: need 0 <= warmup <= total");
    if (peak_lr < 0 || min_lr < 0 || min_lr > peak_lr)
      throw ConfigError("schedule: need 0 <= min_lr <= peak_lr");
  }

  json to_json() const {
    return {{"peak_lr", peak_lr},
            {"warmup_epochs", warmup_epochs},
            {"total_epochs", total_epochs},
            {"min_lr", min_lr}};
  }

  static ScheduleConfig from_json(const json& j) {
    reject_unknown_keys(
        j, "schedule", {"peak_lr", "warmup_epochs", "total_epochs", "min_lr"});
    ScheduleConfig c;
    c.peak_lr = json_get(j, "schedule", "peak_lr", c.peak_lr);
    c.warmup_epochs = json_get(j, "schedule", "warmup_epochs", c.warmup_epochs);
    c.total_epochs = json_get(j, "schedule", "total_epochs", c.total_epochs);
    c.min_lr = json_get(j, "schedule", "min_lr", c.min_lr);
    return c;
  }
};

struct TrainConfig {
  int batch_size = 16;
  std::vector<double> alphas{0.2, 0.3, 0.5};
  double beta = 0.5;
  int stride = 3;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size < 1");
    if (alphas.empty()) throw ConfigError("train: empty alpha set");
    for (double a : alphas)
      if (!(a > 0.0 && a < 1.0))
        throw ConfigError("train: alpha out of (0,1)");
    if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("train: bad beta");
    if (stride < 1) throw ConfigError("train: stride < 1");
    if (grad_clip < 0) throw ConfigError("train: negative grad_clip");
  }

  json to_json() const {
    return {{"batch_size", batch_size}, {"alphas", alphas},
            {"beta", beta},             {"stride", stride},
            {"grad_clip", grad_clip},   {"weight_decay", weight_decay},
            {"adam_beta1", adam_beta1}, {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},     {"seed", seed}};
  }

  static TrainConfig from_json(const json& j) {
    reject_unknown_keys(j, "train",
                        {"batch_size", "alphas", "beta", "stride", "grad_clip",
                         "weight_decay", "adam_beta1", "adam_beta2",
                         "adam_eps", "seed"});
    TrainConfig c;
    c.batch_size = json_get(j, "train", "batch_size", c.batch_size);
    c.alphas = json_get(j, "train", "alphas", c.alphas);
    c.beta = json_get(j, "train", "beta", c.beta);
    c.stride = json_get(j, "train", "stride", c.stride);
    c.grad_clip = json_get(j, "train", "grad_clip", c.grad_clip);
    c.weight_decay = json_get(j, "train", "weight_decay", c.weight_decay);
    c.adam_beta1 = json_get(j, "train", "adam_beta1", c.adam_beta1);
    c.adam_beta2 = json_get(j, "train", "adam_beta2", c.adam_beta2);
    c.adam_eps = json_get(j, "train", "adam_eps", c.adam_eps);
    c.seed = json_get(j, "train", "seed", c.seed);
    return c;
  }
};

// Everything a run needs; mirrors the JSON config file.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  ScheduleConfig schedule;
  TrainConfig train;

  void validate() const {
    model.validate();
    loss.validate(model);
    schedule.validate();
    train.validate();
  }

  json to_json() const {
    return {{"model", model.to_json()},
            {"loss", loss.to_json()},
            {"schedule", schedule.to_json()},
            {"train", train.to_json()}};
  }

  static RunConfig from_json(const json& j) {
    reject_unknown_keys(j, "config", {"model", "loss", "schedule", "train"});
    RunConfig c;
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
    if (j.contains("schedule"))
      c.schedule = ScheduleConfig::from_json(j.at("schedule"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    return c;
  }

  // "schedule.peak_lr=0.01" -> sets that path; value text parsed as JSON
  // when possible, else taken as a string.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + kv + "' is not key=value");
    const std::string path = kv.substr(0, eq);
    const std::string text = kv.substr(eq + 1);

    json root = to_json();
    json* node = &root;
    std::size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
      const auto dot = path.find('.', start);
      parts.push_back(path.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i]))
        throw ConfigError("override: unknown path '" + path + "'");
      node = &(*node)[parts[i]];
    }
    if (!node->contains(parts.back()))
      throw ConfigError("override: unknown key '" + path + "'");
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    (*node)[parts.back()] = value;
    *this = from_json(root);
  }
};

}  // namespace futr
