#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "futr/config.hpp"
#include "futr/data.hpp"
#include "futr/evaluation.hpp"
#include "futr/training.hpp"

// Desk-scale ablation sweeps over a stochastic synthetic corpus. Each
// table id selects a family of configs, trains each, and reports MoC at
// alpha = 0.3 over the beta grid (plus decode latency where relevant).

namespace futr {

struct ReproResult {
  std::string markdown;
  json raw = json::array();
};

namespace repro_detail {

inline CorpusSpec stochastic_spec(bool quick) {
  CorpusSpec spec;
  spec.feature_dim = 12;
  spec.t_min = quick ? 60 : 80;
  spec.t_max = quick ? 90 : 120;
  spec.noise_std = 0.2;

  ActivityGrammar a;
  a.name = "routine_a";
  a.slots = {{{"boot", 1.0}},
             {{"fetch", 0.7}, {"probe", 0.3}},
             {{"mix", 1.0}},
             {{"heat", 0.7}, {"chill", 0.3}},
             {{"serve", 1.0}}};
  a.durations = {{"boot", {8, 14}},  {"fetch", {10, 16}}, {"probe", {10, 16}},
                 {"mix", {12, 18}},  {"heat", {10, 16}},  {"chill", {10, 16}},
                 {"serve", {8, 14}}};

  ActivityGrammar b;
  b.name = "routine_b";
  b.slots = {{{"probe", 1.0}},
             {{"grind", 0.7}, {"mix", 0.3}},
             {{"pour", 1.0}},
             {{"serve", 0.7}, {"pack", 0.3}}};
  b.durations = {{"probe", {10, 16}}, {"grind", {12, 18}}, {"mix", {12, 18}},
                 {"pour", {10, 16}},  {"serve", {8, 14}},  {"pack", {8, 14}}};

  ActivityGrammar c;
  c.name = "routine_c";
  c.slots = {{{"pack", 1.0}},
             {{"heat", 0.7}, {"pour", 0.3}},
             {{"fetch", 1.0}},
             {{"grind", 1.0}},
             {{"chill", 0.7}, {"boot", 0.3}}};
  c.durations = {{"pack", {8, 14}},  {"heat", {10, 16}}, {"pour", {10, 16}},
                 {"fetch", {10, 16}}, {"grind", {12, 18}}, {"chill", {10, 16}},
                 {"boot", {8, 14}}};

  spec.grammars = {a, b, c};
  return spec;
}

inline RunConfig base_config(bool quick) {
  RunConfig cfg;
  cfg.model.hidden_dim = quick ? 16 : 32;
  cfg.model.heads = 4;
  cfg.model.enc_layers = 2;
  cfg.model.dec_layers = 1;
  cfg.model.query_count = 8;
  cfg.schedule.peak_lr = 1e-3;
  cfg.schedule.warmup_epochs = quick ? 1 : 3;
  cfg.schedule.total_epochs = quick ? 4 : 16;
  cfg.train.batch_size = 8;
  cfg.train.alphas = {0.2, 0.3, 0.5};
  cfg.train.beta = 0.5;
  cfg.train.stride = 2;
  return cfg;
}

struct RowResult {
  std::string label;
  std::vector<double> moc;  // over the beta grid at alpha = 0.3
  double decode_ms = -1.0;
};

template <typename Real>
RowResult run_row(const std::string& label, const Corpus<Real>& corpus,
                  RunConfig cfg, std::uint64_t seed, bool bench) {
  futr::resolve_config_from_data(cfg.model, corpus, cfg.train.stride);
  cfg.train.seed = seed;
  cfg.validate();

  auto params = init_params<Real>(cfg.model, seed);
  params.set_requires_grad(true);
  AdamW<Real> opt(params, cfg.train);
  train(corpus, cfg, params, opt);
  params.set_requires_grad(false);

  const std::vector<double> betas{0.1, 0.2, 0.3, 0.5};
  auto report = evaluate(corpus, corpus.test_split, params, cfg.model,
                         cfg.train.stride, {0.3}, betas);
  RowResult row;
  row.label = label;
  for (const auto& cell : report.grid) row.moc.push_back(cell.moc);

  if (bench) {
    Rng rng(mix_seed(seed, 0xbe));
    const auto t_obs = static_cast<std::size_t>(cfg.model.t_max);
    auto features = Tensor<Real>::zeros(
        {t_obs, static_cast<std::size_t>(cfg.model.input_dim)});
    for (auto& v : features.values())
      v = static_cast<Real>(rng.uniform(-1, 1));
    auto bench_report = benchmark_decoding(params, cfg.model, features, 20, 5,
                                           {cfg.model.decoding});
    row.decode_ms = bench_report.modes[0].second.mean_ms;
  }
  return row;
}

inline std::string render(const std::string& title,
                          const std::vector<std::string>& extra_cols,
                          const std::vector<std::vector<std::string>>& extras,
                          const std::vector<RowResult>& rows) {
  std::ostringstream md;
  md << "# " << title << "\n\n";
  md << "Synthetic desk-scale corpus; values are internal comparisons, not "
        "the published numbers.\n\n";
  md << "| config |";
  for (const auto& c : extra_cols) md << " " << c << " |";
  md << " b=0.1 | b=0.2 | b=0.3 | b=0.5 |";
  const bool timed = !rows.empty() && rows[0].decode_ms >= 0;
  if (timed) md << " decode ms |";
  md << "\n|---|";
  for (std::size_t i = 0; i < extra_cols.size(); ++i) md << "---|";
  md << "---|---|---|---|";
  if (timed) md << "---|";
  md << "\n";
  md << std::fixed << std::setprecision(4);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    md << "| " << rows[r].label << " |";
    if (!extras.empty())
      for (const auto& cell : extras[r]) md << " " << cell << " |";
    for (double m : rows[r].moc) md << " " << m << " |";
    if (timed)
      md << " " << std::setprecision(3) << rows[r].decode_ms
         << std::setprecision(4) << " |";
    md << "\n";
  }
  return md.str();
}

inline json row_json(const RowResult& row) {
  json j;
  j["config"] = row.label;
  j["moc_beta_grid"] = row.moc;
  if (row.decode_ms >= 0) j["decode_ms"] = row.decode_ms;
  return j;
}

}  // namespace repro_detail

template <typename Real>
ReproResult run_repro_table(const std::string& table, std::uint64_t seed,
                            bool quick = false) {
  using namespace repro_detail;
  const auto spec = stochastic_spec(quick);
  const auto corpus =
      generate_corpus<Real>(spec, quick ? 24 : 60, mix_seed(seed, 0xc0));

  ReproResult result;
  std::vector<RowResult> rows;

  if (table == "2") {
    std::vector<std::pair<std::string, DecodingMode>> variants{
        {"FUTR-A", DecodingMode::autoregressive},
        {"FUTR-M", DecodingMode::masked_parallel},
        {"FUTR", DecodingMode::parallel}};
    std::vector<std::vector<std::string>> extras{
        {"yes", "yes"}, {"no", "yes"}, {"no", "no"}};
    for (const auto& [label, mode] : variants) {
      auto cfg = base_config(quick);
      cfg.model.decoding = mode;
      rows.push_back(run_row(label, corpus, cfg, seed, /*bench=*/true));
    }
    result.markdown = render("repro 2: decoding strategy", {"AR", "causal"},
                             extras, rows);
  } else if (table == "3") {
    // local windows scale with the desk-size token count; 201 would be
    // global at these lengths
    const int enc_window = 9, dec_window = 3;
    std::vector<std::vector<std::string>> extras;
    for (const auto& [enc_local, dec_local] :
         std::vector<std::pair<bool, bool>>{
             {true, true}, {false, true}, {true, false}, {false, false}}) {
      auto cfg = base_config(quick);
      cfg.model.enc_attention =
          enc_local ? AttentionMode{AttentionKind::local, enc_window}
                    : AttentionMode{AttentionKind::global, 0};
      cfg.model.dec_attention =
          dec_local ? AttentionMode{AttentionKind::local, dec_window}
                    : AttentionMode{AttentionKind::global, 0};
      const std::string label = std::string(enc_local ? "LSA" : "GSA") + "/" +
                                (dec_local ? "LSA" : "GSA");
      extras.push_back({enc_local ? "local(9)" : "global",
                        dec_local ? "local(3)" : "global"});
      rows.push_back(run_row(label, corpus, cfg, seed, false));
    }
    result.markdown = render("repro 3: attention locality",
                             {"encoder", "decoder"}, extras, rows);
  } else if (table == "4") {
    std::vector<std::vector<std::string>> extras;
    {
      auto cfg = base_config(quick);
      cfg.model.head = HeadMode::start_end;
      extras.push_back({"sequential", "start-end"});
      rows.push_back(run_row("FUTR-S", corpus, cfg, seed, false));
    }
    {
      auto cfg = base_config(quick);
      cfg.model.head = HeadMode::start_end;
      cfg.loss.assignment = AssignmentMode::hungarian;
      extras.push_back({"hungarian", "start-end"});
      rows.push_back(run_row("FUTR-H", corpus, cfg, seed, false));
    }
    {
      auto cfg = base_config(quick);
      extras.push_back({"sequential", "duration"});
      rows.push_back(run_row("FUTR", corpus, cfg, seed, false));
    }
    result.markdown = render("repro 4: output structuring",
                             {"assignment", "regression"}, extras, rows);
  } else if (table == "5") {
    std::vector<std::vector<std::string>> extras;
    for (bool seg : {false, true}) {
      auto cfg = base_config(quick);
      cfg.loss.use_seg_loss = seg;
      extras.push_back({seg ? "yes" : "no"});
      rows.push_back(run_row(seg ? "with seg loss" : "without seg loss",
                             corpus, cfg, seed, false));
    }
    result.markdown =
        render("repro 5: segmentation loss ablation", {"seg loss"}, extras,
               rows);
  } else if (table == "6") {
    for (int m : {6, 7, 8, 9, 10}) {
      auto cfg = base_config(quick);
      cfg.model.query_count = m;
      rows.push_back(run_row("M=" + std::to_string(m), corpus, cfg, seed,
                             false));
    }
    result.markdown = render("repro 6: action query count", {}, {}, rows);
  } else if (table == "S3") {
    std::vector<std::pair<std::string, PosEmbedMode>> modes{
        {"none", PosEmbedMode::none},
        {"sine @ input", PosEmbedMode::sinusoidal_input},
        {"learned @ input", PosEmbedMode::learnable_input},
        {"learned @ attention", PosEmbedMode::learnable_per_attention}};
    for (const auto& [label, mode] : modes) {
      auto cfg = base_config(quick);
      cfg.model.posembed = mode;
      rows.push_back(run_row(label, corpus, cfg, seed, false));
    }
    result.markdown = render("repro S3: positional embedding placement", {},
                             {}, rows);
  } else if (table == "S5") {
    std::vector<std::pair<std::string, DurationLossKind>> kinds{
        {"L1", DurationLossKind::l1},
        {"smooth L1", DurationLossKind::smooth_l1},
        {"L2", DurationLossKind::l2}};
    for (const auto& [label, kind] : kinds) {
      auto cfg = base_config(quick);
      cfg.loss.duration_loss = kind;
      rows.push_back(run_row(label, corpus, cfg, seed, false));
    }
    result.markdown = render("repro S5: duration loss variant", {}, {}, rows);
  } else {
    throw ConfigError("unknown repro table '" + table +
                      "'; expected one of 2 3 4 5 6 S3 S5");
  }

  for (const auto& row : rows) result.raw.push_back(row_json(row));
  return result;
}

}  // namespace futr
