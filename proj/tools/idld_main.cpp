// Command-line front end: train, eval, sweep, threshold-sweep, gen-data.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "idld/checkpoint.hpp"
#include "idld/config.hpp"
#include "idld/errors.hpp"
#include "idld/evaluate.hpp"
#include "idld/metrics.hpp"
#include "idld/trainer.hpp"

namespace fs = std::filesystem;
using namespace idld;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig config_from_globals(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig cfg = load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

LoadedModel load_model(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const ExperimentConfig cfg = checkpoint_config(ckpt);
  Model model(cfg.model, cfg.seed);
  restore_params(model, ckpt);
  return {std::move(model), to_string(cfg.mode), ckpt.config_hash};
}

// Evaluation samples: an explicit manifest, else the checkpoint's own split.
std::vector<Sample> eval_samples(const std::string& ckpt_path, const std::string& manifest,
                                 const std::string& split) {
  const ExperimentConfig cfg = checkpoint_config(load_checkpoint(ckpt_path));
  if (!manifest.empty()) return read_manifest(manifest, cfg.data.task, cfg.mel);
  Dataset d = load_dataset(cfg);
  auto& chosen = split == "dev" ? d.dev : split == "train" ? d.train : d.test;
  if (chosen.empty()) throw ConfigError("split '" + split + "' is empty for this checkpoint");
  return std::move(chosen);
}

// Writes to --out when given, stdout otherwise.
template <typename Fn>
void emit(const std::string& out, Fn write) {
  if (out.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + out);
  write(os);
}

int cmd_train(const Globals& g) {
  const ExperimentConfig cfg = config_from_globals(g);
  const fs::path out = g.out.empty() ? fs::path("run") : fs::path(g.out);
  const Dataset data = load_dataset(cfg);
  TrainOptions opt;
  opt.out_dir = out;
  opt.progress = &std::cerr;
  const TrainOutcome result = train(cfg, data, opt);
  std::cerr << "trained " << result.steps << " steps; checkpoints in " << out.string() << '\n';
  return 0;
}

int cmd_gen_data(const Globals& g) {
  const ExperimentConfig cfg = config_from_globals(g);
  const fs::path out = g.out.empty() ? fs::path("data") : fs::path(g.out);
  fs::create_directories(out);
  SynthTaskConfig data_cfg = cfg.data;
  if (g.seed) data_cfg.seed = *g.seed;
  const Dataset d = gen_task(data_cfg);
  write_manifest(out / "train.jsonl", d.train, data_cfg.task);
  write_manifest(out / "dev.jsonl", d.dev, data_cfg.task);
  write_manifest(out / "test.jsonl", d.test, data_cfg.task);
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  bool full = false;
  std::vector<std::size_t> drop_n, topk, rd_exact;
  std::vector<double> gamma, tau;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const int chosen = (a.full ? 1 : 0) + !a.drop_n.empty() + !a.topk.empty() +
                     !a.rd_exact.empty() + !a.gamma.empty() + !a.tau.empty();
  if (chosen != 1) {
    throw ConfigError(
        "give exactly one of --full, --drop-n, --topk, --gate-threshold, --rd-exact, "
        "--ee-entropy");
  }
  const LoadedModel lm = load_model(a.ckpt);
  const auto samples = eval_samples(a.ckpt, a.data, a.split);
  const std::uint64_t seed = g.seed.value_or(0);
  const ModelConfig& mc = lm.model.config();
  const std::size_t n_layers = mc.num_layers;

  std::vector<RunReport> rows;
  auto run = [&](const DropPolicy& p, std::optional<std::size_t> n) {
    const EvalOutcome ev = evaluate(lm.model, samples, p, seed);
    rows.push_back(report_row(ev.traces, ev.metric, mc, describe(p), seed,
                              lm.config_hash, n));
  };
  auto check_n = [&](std::size_t n) {
    if (n >= n_layers) {
      throw ConfigError("n = " + std::to_string(n) + " must be < N = " +
                        std::to_string(n_layers));
    }
  };
  if (a.full) run(FullPolicy{}, std::nullopt);
  for (std::size_t k : a.topk) {
    if (k < 1 || k > n_layers) throw ConfigError("--topk must be in 1..N");
    run(InputDrivenTopK{k}, n_layers - k);
  }
  for (std::size_t n : a.rd_exact) {
    check_n(n);
    run(RandomExactN{n}, n);
  }
  for (double gamma : a.gamma) run(InputDrivenThreshold{gamma}, std::nullopt);
  for (double tau : a.tau) {
    if (!mc.ee_enabled) throw ConfigError("--ee-entropy needs a checkpoint trained in ee mode");
    run(EarlyExitEntropy{tau}, std::nullopt);
  }
  // --drop-n follows the checkpoint's own training mode.
  for (std::size_t n : a.drop_n) {
    check_n(n);
    if (lm.mode == "idld") {
      run(InputDrivenTopK{n_layers - n}, n);
    } else if (lm.mode == "ee") {
      const EvalOutcome ev = evaluate_forced_exit(lm.model, samples, n_layers - n);
      rows.push_back(report_row(ev.traces, ev.metric, mc,
                                "ee-exit(" + std::to_string(n_layers - n) + ")", seed,
                                lm.config_hash, n));
    } else {
      run(RandomExactN{n}, n);
    }
  }
  emit(g.out, [&](std::ostream& os) { write_report_csv(os, rows); });
  return 0;
}

struct SweepArgs {
  std::vector<std::string> ckpts;
  std::vector<std::size_t> n_list;
  std::size_t rd_seeds = 1;
  std::string data;
  std::string split = "test";
};

int cmd_sweep(const Globals& g, const SweepArgs& a) {
  std::vector<LoadedModel> models;
  for (const auto& p : a.ckpts) models.push_back(load_model(p));
  const auto samples = eval_samples(a.ckpts.front(), a.data, a.split);
  const auto rows = run_sweep(models, samples, a.n_list, a.rd_seeds, g.seed.value_or(0));
  emit(g.out, [&](std::ostream& os) { write_report_csv(os, rows); });
  return 0;
}

struct ThresholdArgs {
  std::string ckpt;
  std::vector<double> gamma, tau;
  std::string data;
  std::string split = "test";
};

int cmd_threshold_sweep(const Globals& g, const ThresholdArgs& a) {
  if (a.gamma.empty() == a.tau.empty()) {
    throw ConfigError("give exactly one of --gamma-list or --tau-list");
  }
  const LoadedModel lm = load_model(a.ckpt);
  if (!a.tau.empty() && !lm.model.config().ee_enabled) {
    throw ConfigError("--tau-list needs a checkpoint trained in ee mode");
  }
  const auto samples = eval_samples(a.ckpt, a.data, a.split);
  const auto rows = a.gamma.empty()
                        ? run_threshold_sweep(lm, samples, "tau", a.tau, g.seed.value_or(0))
                        : run_threshold_sweep(lm, samples, "gamma", a.gamma, g.seed.value_or(0));
  emit(g.out, [&](std::ostream& os) { write_threshold_csv(os, rows); });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Input-driven layer dropping for transformer encoders"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--out", g.out, "Output directory (train, gen-data) or CSV file");

  auto* train_cmd = app.add_subcommand("train", "Train a model from a config");
  auto* gen_cmd = app.add_subcommand("gen-data", "Write synthetic train/dev/test manifests");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint under a policy");
  eval_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", ea.data, "Manifest to evaluate on");
  eval_cmd->add_option("--split", ea.split, "Split of the checkpoint's dataset")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd->add_flag("--full", ea.full, "Run every layer");
  eval_cmd->add_option("--drop-n", ea.drop_n, "Drop n layers with the checkpoint's native policy")
      ->delimiter(',');
  eval_cmd->add_option("--topk", ea.topk, "Input-driven top-k")->delimiter(',');
  eval_cmd->add_option("--gate-threshold", ea.gamma, "Input-driven gate threshold")
      ->delimiter(',');
  eval_cmd->add_option("--rd-exact", ea.rd_exact, "Drop exactly n random layers")
      ->delimiter(',');
  eval_cmd->add_option("--ee-entropy", ea.tau, "Early exit entropy threshold (nats)")
      ->delimiter(',');

  SweepArgs sa;
  auto* sweep_cmd = app.add_subcommand("sweep", "Metric versus number of dropped layers");
  sweep_cmd->add_option("--ckpt", sa.ckpts, "Checkpoints (repeatable)")->required();
  sweep_cmd->add_option("--n-list", sa.n_list, "Dropped-layer counts")
      ->delimiter(',')
      ->required();
  sweep_cmd->add_option("--rd-seeds", sa.rd_seeds, "Random draws per checkpoint");
  sweep_cmd->add_option("--data", sa.data, "Manifest to evaluate on");
  sweep_cmd->add_option("--split", sa.split, "Split of the checkpoint's dataset")
      ->check(CLI::IsMember({"train", "dev", "test"}));

  ThresholdArgs ta;
  auto* thr_cmd = app.add_subcommand("threshold-sweep", "Metric versus gate or entropy threshold");
  thr_cmd->add_option("--ckpt", ta.ckpt, "Checkpoint")->required();
  thr_cmd->add_option("--gamma-list", ta.gamma, "Gate thresholds")->delimiter(',');
  thr_cmd->add_option("--tau-list", ta.tau, "Entropy thresholds")->delimiter(',');
  thr_cmd->add_option("--data", ta.data, "Manifest to evaluate on");
  thr_cmd->add_option("--split", ta.split, "Split of the checkpoint's dataset")
      ->check(CLI::IsMember({"train", "dev", "test"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(g);
    if (gen_cmd->parsed()) return cmd_gen_data(g);
    if (eval_cmd->parsed()) return cmd_eval(g, ea);
    if (sweep_cmd->parsed()) return cmd_sweep(g, sa);
    if (thr_cmd->parsed()) return cmd_threshold_sweep(g, ta);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
