// Command-line front end: pretrain, finetune, eval, branch-stats, export-metrics.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "b2diff/config.hpp"
#include "b2diff/metrics.hpp"
#include "b2diff/rng.hpp"
#include "b2diff/trainer.hpp"

namespace fs = std::filesystem;
using namespace b2diff;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitProvider = 3;

struct Invocation {
  std::string config;
  std::optional<std::string> algo;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<std::string> resume;
  std::optional<std::string> reward;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ExperimentConfig resolve_config(const Invocation& inv) {
  ExperimentConfig cfg;
  try {
    cfg = inv.config.empty() ? ExperimentConfig{} : load_config(inv.config);
    if (inv.algo) {
      cfg.recipe = recipe_from_string(*inv.algo);
      cfg.objective.algo = objective_algo(cfg.recipe);
    }
    if (inv.seed) cfg.seed = *inv.seed;
    if (inv.reward) cfg.reward = *inv.reward;
    cfg.network.input_dim = cfg.world.dim();
    cfg.network.cond_count = cfg.world.condition_count();
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

Checkpoint load_model(const Invocation& inv, const ExperimentConfig& cfg) {
  const std::string path = inv.resume ? *inv.resume : cfg.base_checkpoint;
  if (path.empty()) throw UsageError("no checkpoint given (use --resume or base_checkpoint)");
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  Checkpoint ck;
  try {
    ck = load_checkpoint(path);
  } catch (const std::runtime_error& e) {
    throw UsageError(std::string("cannot load checkpoint: ") + e.what());
  }
  if (ck.params.arch != cfg.resolved_arch()) {
    throw UsageError("checkpoint architecture does not match the config");
  }
  return ck;
}

fs::path ensure_out(const Invocation& inv) {
  fs::path out(inv.out);
  fs::create_directories(out);
  return out;
}

int cmd_pretrain(const Invocation& inv) {
  const ExperimentConfig cfg = resolve_config(inv);
  const fs::path out = ensure_out(inv);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> losses;
  Checkpoint ck;
  ck.params = pretrain(cfg.world, cfg, cfg.pretrain.steps, cfg.seed, &losses);
  ck.normalizer = NormalizerState(cfg.normalizer);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(ck, out / "pretrained.ckpt");
  const double hit = pretrain_hit_rate(ck.params, cfg.world, cfg, 1000, cfg.seed + 1);
  nlohmann::ordered_json j;
  j["checkpoint"] = (out / "pretrained.ckpt").string();
  j["steps"] = cfg.pretrain.steps;
  j["final_loss"] = losses.empty() ? 0.0 : losses.back();
  j["hit_rate"] = hit;
  j["seconds"] = secs;
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_finetune(const Invocation& inv) {
  const ExperimentConfig cfg = resolve_config(inv);
  Checkpoint ck = load_model(inv, cfg);
  const fs::path out = ensure_out(inv);
  const fs::path metrics = out / "metrics.jsonl";
  if (!inv.resume && fs::exists(metrics)) fs::remove(metrics);
  {
    std::ofstream cfg_out(out / "config.resolved.json");
    cfg_out << config_to_json(cfg).dump(2) << '\n';
  }

  auto provider = make_reward_provider(cfg);
  Trainer trainer(cfg, std::move(ck), *provider);
  while (trainer.state().round < cfg.rounds) {
    RoundOutcome r;
    try {
      r = trainer.run_round();
    } catch (const RewardProviderError& e) {
      std::cerr << "reward provider failed in round " << trainer.state().round << ": " << e.what() << '\n';
      save_checkpoint(trainer.state(), out / "last.ckpt");
      return kExitProvider;
    }
    emit_metrics(std::span<const RoundReport>(&r.report, 1), metrics);
    std::cerr << "round " << r.report.round << " tau=" << r.report.tau << " reward=" << r.report.mean_reward
              << " pairs=" << r.report.pair_fraction << '\n';
  }
  save_checkpoint(trainer.state(), out / "final.ckpt");
  return kExitOk;
}

int cmd_eval(const Invocation& inv) {
  const ExperimentConfig cfg = resolve_config(inv);
  const Checkpoint ck = load_model(inv, cfg);
  const auto conds = cfg.world.conditions();
  std::vector<Condition> drawn;
  const auto xs = sample_final(ck.params, conds, cfg.eval_samples, cfg.schedule(), cfg.sampler,
                               derive_seed(cfg.seed, {stream::kEval}), ExecPolicy::Parallel, &drawn);
  auto provider = make_reward_provider(cfg);
  std::map<int, std::vector<Point>> by_condition;
  for (std::size_t i = 0; i < xs.size(); ++i) by_condition[drawn[i].id].push_back(xs[i]);
  double total = 0.0;
  try {
    for (const auto& [cid, group] : by_condition) {
      for (double s : provider->score(Condition{cid}, group)) total += s;
    }
  } catch (const RewardProviderError& e) {
    std::cerr << "reward provider failed: " << e.what() << '\n';
    return kExitProvider;
  }
  nlohmann::ordered_json j;
  j["samples"] = xs.size();
  j["mean_reward"] = total / static_cast<double>(xs.size());
  j["inception_score"] = inception_score(xs, cfg.world);
  std::cout << j.dump() << '\n';
  if (!inv.out.empty() && inv.out != ".") {
    std::ofstream(ensure_out(inv) / "eval.json") << j.dump() << '\n';
  }
  return kExitOk;
}

int cmd_branch_stats(const Invocation& inv) {
  const ExperimentConfig cfg = resolve_config(inv);
  const Checkpoint ck = load_model(inv, cfg);
  const NoiseSchedule sched = cfg.schedule();
  const SamplingContext ctx{sched, cfg.sampler, kTrainSigmaFloor};
  ToyRewardProvider provider(cfg.world);
  const auto conds = cfg.world.conditions();
  const auto props = branch_mix_stats(ck.params, conds, ctx, cfg.branch_stats, provider, cfg.normalizer, cfg.seed);
  std::vector<double> ts(cfg.branch_stats.timesteps.begin(), cfg.branch_stats.timesteps.end());
  nlohmann::ordered_json j;
  j["timesteps"] = cfg.branch_stats.timesteps;
  j["proportions"] = props;
  if (ts.size() >= 2) {
    j["spearman"] = spearman(ts, props);
    if (ts.size() <= 10) j["p_value"] = spearman_permutation_pvalue(ts, props);
  }
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_export(const Invocation& inv) {
  const fs::path out(inv.out);
  const auto reports = read_metrics(out / "metrics.jsonl");
  export_metrics_csv(reports, out / "metrics.csv");
  std::cout << (out / "metrics.csv").string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Branch-based, backward-progressive RL fine-tuning of a toy diffusion model"};
  app.require_subcommand(1);
  Invocation inv;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", inv.config, "Experiment config (JSON)");
    sub->add_option("--algo", inv.algo, "bs-ppo | bpt-ppo | ddpo-baseline | pg | dpok | dpo");
    sub->add_option("--seed", inv.seed, "Master seed override");
    sub->add_option("--out", inv.out, "Output directory");
    sub->add_option("--resume", inv.resume, "Checkpoint to load");
    sub->add_option("--reward", inv.reward, "toy | remote:URL");
  };
  auto* pre = app.add_subcommand("pretrain", "Train the toy denoiser from scratch");
  auto* fine = app.add_subcommand("finetune", "RL fine-tuning rounds");
  auto* eval = app.add_subcommand("eval", "Mean reward and inception score of fresh samples");
  auto* stats = app.add_subcommand("branch-stats", "Mixed-sign branch proportions per branching timestep");
  auto* exp = app.add_subcommand("export-metrics", "Convert <out>/metrics.jsonl to CSV");
  for (auto* s : {pre, fine, eval, stats, exp}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(inv);
    if (fine->parsed()) return cmd_finetune(inv);
    if (eval->parsed()) return cmd_eval(inv);
    if (stats->parsed()) return cmd_branch_stats(inv);
    if (exp->parsed()) return cmd_export(inv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitUsage;
}
