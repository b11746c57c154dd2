// futr: corpus generation, training, evaluation, decode-latency
// benchmarks, attention export, and desk-scale ablation sweeps.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "futr/futr.hpp"
#include "futr/repro.hpp"

namespace fs = std::filesystem;
using Real = float;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("FUTR_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw futr::ConfigError("FUTR_SEED is not an integer: " +
                              std::string(env));
    }
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw futr::DataError("cannot write " + path.string());
  out << text;
}

void echo_config(const fs::path& out_dir, const futr::RunConfig& cfg) {
  write_text(out_dir / "effective_config.json", cfg.to_json().dump(2) + "\n");
}

void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        futr::json args,
                        const std::vector<std::string>& outputs) {
  futr::json j;
  j["command"] = command;
  j["args"] = std::move(args);
  j["outputs"] = outputs;
  write_text(out_dir / "run_manifest.json", j.dump(2) + "\n");
}

futr::RunConfig load_run_config(const std::string& config_path,
                                const std::vector<std::string>& overrides,
                                std::uint64_t seed_fallback) {
  futr::RunConfig cfg;
  cfg.train.seed = seed_fallback;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in)
      throw futr::ConfigError("cannot open config file: " + config_path);
    futr::json j;
    try {
      in >> j;
    } catch (const futr::json::exception& e) {
      throw futr::ConfigError(config_path + ": " + std::string(e.what()));
    }
    const std::uint64_t keep_seed = cfg.train.seed;
    cfg = futr::RunConfig::from_json(j);
    if (!(j.contains("train") && j.at("train").contains("seed")))
      cfg.train.seed = keep_seed;
  }
  for (const auto& kv : overrides) cfg.apply_override(kv);
  return cfg;
}

int cmd_gen(const std::string& grammars, int count, std::uint64_t seed,
            const std::string& out) {
  auto spec = futr::CorpusSpec::load(grammars);
  auto corpus = futr::generate_corpus<Real>(spec, count, seed);
  futr::save_corpus(out, corpus);
  write_run_manifest(out, "gen",
                     {{"grammars", grammars}, {"count", count},
                      {"seed", seed}},
                     {"manifest.json", "mapping.txt", "features/",
                      "groundTruth/"});
  std::cout << "wrote " << corpus.videos.size() << " videos ("
            << corpus.num_classes() << " classes) to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out,
              const std::vector<std::string>& overrides,
              const std::string& resume) {
  auto corpus = futr::load_corpus<Real>(data);

  futr::RunConfig cfg;
  futr::ModelParams<Real> params;
  int start_epoch = 0;

  const bool resuming = !resume.empty();
  futr::AdamW<Real>* opt_ptr = nullptr;
  futr::Checkpoint<Real> ckpt;

  if (resuming) {
    ckpt = futr::load_checkpoint<Real>(resume);
    cfg = ckpt.config;
    for (const auto& kv : overrides) cfg.apply_override(kv);
    params = ckpt.params;
    start_epoch = ckpt.epoch;
  } else {
    cfg = load_run_config(config_path, overrides, default_seed());
  }

  futr::resolve_config_from_data(cfg.model, corpus, cfg.train.stride);
  cfg.validate();
  echo_config(out, cfg);

  if (!resuming) params = futr::init_params<Real>(cfg.model, cfg.train.seed);
  params.set_requires_grad(true);

  futr::AdamW<Real> opt =
      resuming ? futr::restore_optimizer(ckpt)
               : futr::AdamW<Real>(params, cfg.train);
  opt_ptr = &opt;

  if (!resuming) {
    auto init_ckpt = futr::make_checkpoint(cfg, params, opt, 0);
    futr::save_checkpoint((fs::path(out) / "ckpt_init.ckpt").string(),
                          init_ckpt);
  }

  std::ofstream log(fs::path(out) / "train_log.jsonl",
                    resuming ? std::ios::app : std::ios::out);
  futr::train<Real>(corpus, cfg, params, *opt_ptr, start_epoch,
                    [&](const futr::EpochLog& el) {
                      log << el.to_json().dump() << "\n";
                      log.flush();
                      auto snap = futr::make_checkpoint(cfg, params, *opt_ptr,
                                                        el.epoch + 1);
                      futr::save_checkpoint(
                          (fs::path(out) /
                           ("ckpt_epoch_" + std::to_string(el.epoch) +
                            ".ckpt")).string(),
                          snap);
                    });

  auto final_ckpt =
      futr::make_checkpoint(cfg, params, *opt_ptr, cfg.schedule.total_epochs);
  futr::save_checkpoint((fs::path(out) / "ckpt_final.ckpt").string(),
                        final_ckpt);

  write_run_manifest(out, "train",
                     {{"config", config_path}, {"data", data},
                      {"resume", resume}, {"overrides", overrides}},
                     {"effective_config.json", "train_log.jsonl",
                      "ckpt_final.ckpt"});
  std::cout << "training complete; final checkpoint at "
            << (fs::path(out) / "ckpt_final.ckpt").string() << "\n";
  return 0;
}

std::vector<double> parse_ratio_list(const std::string& csv,
                                     const char* what) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw futr::ConfigError(std::string(what) + ": bad value '" + item +
                              "'");
    }
  }
  if (out.empty())
    throw futr::ConfigError(std::string(what) + ": empty list");
  return out;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data,
             const std::string& alphas_csv, const std::string& betas_csv,
             const std::string& split, int jobs, const std::string& out) {
  auto ckpt = futr::load_checkpoint<Real>(ckpt_path);
  auto corpus = futr::load_corpus<Real>(data);
  futr::resolve_config_from_data(ckpt.config.model, corpus,
                                 ckpt.config.train.stride);

  std::vector<std::size_t> ids;
  if (split == "train") {
    ids = corpus.train_split;
  } else if (split == "test") {
    ids = corpus.test_split;
  } else if (split == "all") {
    for (std::size_t i = 0; i < corpus.videos.size(); ++i) ids.push_back(i);
  } else {
    throw futr::ConfigError("--split must be train, test or all");
  }

  auto report = futr::evaluate(
      corpus, ids, ckpt.params, ckpt.config.model, ckpt.config.train.stride,
      parse_ratio_list(alphas_csv, "--alphas"),
      parse_ratio_list(betas_csv, "--betas"), jobs);

  echo_config(out, ckpt.config);
  write_text(fs::path(out) / "eval_report.json",
             report.to_json().dump(2) + "\n");
  write_run_manifest(out, "eval",
                     {{"ckpt", ckpt_path}, {"data", data},
                      {"alphas", alphas_csv}, {"betas", betas_csv},
                      {"split", split}, {"jobs", jobs}},
                     {"eval_report.json", "effective_config.json"});
  for (const auto& cell : report.grid)
    std::cout << "alpha=" << cell.alpha << " beta=" << cell.beta
              << " moc=" << cell.moc << "\n";
  return 0;
}

int cmd_bench(const std::string& ckpt_path, const std::string& modes_csv,
              int repeats, int warmup, int t_obs, std::uint64_t seed,
              const std::string& out) {
  auto ckpt = futr::load_checkpoint<Real>(ckpt_path);
  const auto& cfg = ckpt.config.model;

  std::vector<futr::DecodingMode> modes;
  if (modes_csv == "all") {
    modes = {futr::DecodingMode::parallel,
             futr::DecodingMode::masked_parallel};
    if (ckpt.params.label_embed.defined())
      modes.push_back(futr::DecodingMode::autoregressive);
  } else {
    std::stringstream ss(modes_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      modes.push_back(futr::detail::enum_from_string(
          item, futr::detail::kDecodingModes, "--modes"));
  }

  if (t_obs < 1) throw futr::ConfigError("--t-obs must be >= 1");
  if (t_obs > cfg.t_max)
    throw futr::ConfigError("--t-obs exceeds the checkpoint's t_max (" +
                            std::to_string(cfg.t_max) + ")");
  futr::Rng rng(futr::mix_seed(seed, 0xbe9c4));
  auto features = futr::Tensor<Real>::zeros(
      {static_cast<std::size_t>(t_obs),
       static_cast<std::size_t>(cfg.input_dim)});
  for (auto& v : features.values()) v = static_cast<Real>(rng.uniform(-1, 1));

  auto report = futr::benchmark_decoding(ckpt.params, cfg, features, repeats,
                                         warmup, modes);
  write_text(fs::path(out) / "bench.json", report.to_json().dump(2) + "\n");
  write_run_manifest(out, "bench",
                     {{"ckpt", ckpt_path}, {"modes", modes_csv},
                      {"repeats", repeats}, {"warmup", warmup},
                      {"t_obs", t_obs}},
                     {"bench.json"});
  for (const auto& [name, stats] : report.modes)
    std::cout << name << ": mean " << stats.mean_ms << " ms, std "
              << stats.std_ms << " ms over " << stats.repeats << " repeats\n";
  return 0;
}

int cmd_attn(const std::string& ckpt_path, const std::string& data,
             const std::string& video_id, double alpha, double beta,
             const std::string& out) {
  auto ckpt = futr::load_checkpoint<Real>(ckpt_path);
  auto corpus = futr::load_corpus<Real>(data);
  futr::resolve_config_from_data(ckpt.config.model, corpus,
                                 ckpt.config.train.stride);

  const futr::VideoSample<Real>* video = nullptr;
  for (const auto& v : corpus.videos)
    if (v.id == video_id) video = &v;
  if (!video)
    throw futr::DataError("video '" + video_id + "' is not in " + data);

  auto split = futr::make_observation(*video, alpha, beta,
                                      ckpt.config.train.stride);
  auto fwd = futr::forward(split.observed, ckpt.params, ckpt.config.model);
  const std::string csv =
      (fs::path(out) / ("attention_" + video_id + ".csv")).string();
  const std::string side =
      (fs::path(out) / ("attention_" + video_id + ".json")).string();
  fs::create_directories(out);
  futr::export_attention(fwd, ckpt.config.model, csv, side);
  write_run_manifest(out, "attn",
                     {{"ckpt", ckpt_path}, {"data", data},
                      {"video", video_id}, {"alpha", alpha}, {"beta", beta}},
                     {csv, side});
  std::cout << "wrote " << csv << "\n";
  return 0;
}

int cmd_repro(const std::string& table, std::uint64_t seed, bool quick,
              const std::string& out) {
  auto result = futr::run_repro_table<Real>(table, seed, quick);
  write_text(fs::path(out) / ("table_" + table + ".md"), result.markdown);
  write_text(fs::path(out) / ("table_" + table + ".json"),
             result.raw.dump(2) + "\n");
  write_run_manifest(out, "repro",
                     {{"table", table}, {"seed", seed}, {"quick", quick}},
                     {"table_" + table + ".md", "table_" + table + ".json"});
  std::cout << result.markdown;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FUTR: parallel-decoding action anticipation at desk scale"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  std::string gen_grammars, gen_out;
  int gen_count = 100;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  gen->add_option("--grammars", gen_grammars, "grammar spec JSON")->required();
  gen->add_option("--count", gen_count, "number of videos");
  gen->add_option("--seed", gen_seed, "corpus seed")
      ->each([&](const std::string&) { gen_seed_set = true; });
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model on a corpus");
  std::string train_config, train_data, train_out, train_resume;
  std::vector<std::string> train_overrides;
  train->add_option("--config", train_config, "run config JSON");
  train->add_option("--data", train_data, "corpus directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--override", train_overrides,
                    "dotted config override key=value");
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_out, eval_split = "test";
  std::string eval_alphas = "0.2,0.3", eval_betas = "0.1,0.2,0.3,0.5";
  int eval_jobs = 1;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "corpus directory")->required();
  eval->add_option("--alphas", eval_alphas, "observation ratios");
  eval->add_option("--betas", eval_betas, "prediction ratios");
  eval->add_option("--split", eval_split, "train|test|all");
  eval->add_option("--jobs", eval_jobs, "worker threads");
  eval->add_option("--out", eval_out, "output directory")->required();

  auto* bench = app.add_subcommand("bench", "decode latency benchmark");
  std::string bench_ckpt, bench_modes = "all", bench_out;
  int bench_repeats = 100, bench_warmup = 10, bench_tobs = 150;
  std::uint64_t bench_seed = 0;
  bool bench_seed_set = false;
  bench->add_option("--ckpt", bench_ckpt, "checkpoint file")->required();
  bench->add_option("--modes", bench_modes,
                    "all or csv of parallel,masked_parallel,autoregressive");
  bench->add_option("--repeats", bench_repeats, "timed repeats");
  bench->add_option("--warmup", bench_warmup, "discarded warmup runs");
  bench->add_option("--t-obs", bench_tobs, "observed token count");
  bench->add_option("--seed", bench_seed, "input seed")
      ->each([&](const std::string&) { bench_seed_set = true; });
  bench->add_option("--out", bench_out, "output directory")->required();

  auto* attn = app.add_subcommand("attn", "export cross-attention maps");
  std::string attn_ckpt, attn_data, attn_video, attn_out;
  double attn_alpha = 0.3, attn_beta = 0.5;
  attn->add_option("--ckpt", attn_ckpt, "checkpoint file")->required();
  attn->add_option("--data", attn_data, "corpus directory")->required();
  attn->add_option("--video", attn_video, "video id")->required();
  attn->add_option("--alpha", attn_alpha, "observation ratio");
  attn->add_option("--beta", attn_beta, "prediction ratio");
  attn->add_option("--out", attn_out, "output directory")->required();

  auto* repro = app.add_subcommand("repro", "desk-scale ablation sweep");
  std::string repro_table, repro_out;
  std::uint64_t repro_seed = 0;
  bool repro_seed_set = false, repro_quick = false;
  repro->add_option("--table", repro_table, "one of 2 3 4 5 6 S3 S5")
      ->required();
  repro->add_option("--seed", repro_seed, "sweep seed")
      ->each([&](const std::string&) { repro_seed_set = true; });
  repro->add_flag("--quick", repro_quick, "smaller corpus and fewer epochs");
  repro->add_option("--out", repro_out, "output directory")->required();

  try {
    app.parse(argc, argv);

    if (gen->parsed())
      return cmd_gen(gen_grammars, gen_count,
                     gen_seed_set ? gen_seed : default_seed(), gen_out);
    if (train->parsed())
      return cmd_train(train_config, train_data, train_out, train_overrides,
                       train_resume);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_alphas, eval_betas,
                      eval_split, eval_jobs, eval_out);
    if (bench->parsed())
      return cmd_bench(bench_ckpt, bench_modes, bench_repeats, bench_warmup,
                       bench_tobs,
                       bench_seed_set ? bench_seed : default_seed(),
                       bench_out);
    if (attn->parsed())
      return cmd_attn(attn_ckpt, attn_data, attn_video, attn_alpha, attn_beta,
                      attn_out);
    if (repro->parsed())
      return cmd_repro(repro_table,
                       repro_seed_set ? repro_seed : default_seed(),
                       repro_quick, repro_out);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const futr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const futr::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const futr::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
