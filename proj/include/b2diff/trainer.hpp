#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "b2diff/branch_sampler.hpp"
#include "b2diff/diffusion.hpp"
#include "b2diff/metrics.hpp"
#include "b2diff/nnet.hpp"
#include "b2diff/objectives.hpp"
#include "b2diff/parallel.hpp"
#include "b2diff/rewards.hpp"

namespace b2diff {

/// Backward-progressive interval: round n trains timesteps [tau_n, 1].
struct IntervalSchedule {
  int tau0 = 14;
  int T = 20;
  std::size_t N = 1;

  void validate() const;
};

/// tau_n = min(T, tau0 + round(n (T - tau0) / N)), halves rounded up.
int interval_for_round(std::size_t n, const IntervalSchedule& sched);

struct AdamWHyper {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  AdamWHyper hyper;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamWState() = default;
  AdamWState(AdamWHyper h, std::size_t n) : hyper(h), m(n, 0.0), v(n, 0.0) {}
};

/// Decoupled weight decay followed by the bias-corrected Adam update.
/// A non-finite gradient leaves state and params untouched; returns false.
bool adamw_step(AdamWState& state, std::span<double> params, std::span<const double> grad);

struct PretrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 128;
  double lr = 2e-3;
  double cond_dropout = 0.1;
};

/// Which sampling/training recipe a run uses. Resolved from the algo name.
enum class Recipe {
  BsPpo,          // backward-progressive interval + branches + PPO (default)
  BptPpo,         // backward-progressive interval, no branching
  DdpoBaseline,   // full interval, no branching, per-trajectory PPO
  Pg,
  Dpok,
  Dpo,
};

std::string to_string(Recipe r);
Recipe recipe_from_string(const std::string& s);
Algo objective_algo(Recipe r);
/// All knobs of an experiment.
struct ExperimentConfig {
  // sampling
  int T = 20;
  double beta_start = 1e-4;
  double beta_end = 0.2;
  SamplerConfig sampler{1.0, 5.0};
  std::size_t batch_size = 8;
  std::size_t batch_count = 32;
  std::size_t num_branches = 3;
  // optimizer
  AdamWHyper adam{};
  // training
  std::size_t train_batch_size = 2;
  std::size_t grad_accum_steps = 32;
  std::size_t baseline_grad_accum_steps = 128;
  int initial_interval = 14;
  double score_threshold = 0.5;
  std::size_t inner_epochs = 1;
  std::size_t rounds = 20;
  NormalizerConfig normalizer{};
  Recipe recipe = Recipe::BsPpo;
  ObjectiveConfig objective{};
  std::uint64_t seed = 0;
  // model, world, reward
  NetworkArch network{};
  ToyWorld world = ToyWorld::ring(8, 2.0, 0.5);
  PretrainConfig pretrain{};
  std::string reward = "toy";  // or remote:URL
  int remote_timeout_ms = 10000;
  int remote_retries = 2;
  std::size_t eval_samples = 1000;
  BranchMixConfig branch_stats{};
  std::string base_checkpoint;

  /// Throws std::invalid_argument with a diagnostic on any violated invariant.
  void validate() const;

  NoiseSchedule schedule() const { return build_schedule(T, beta_start, beta_end); }
  IntervalSchedule interval() const { return IntervalSchedule{initial_interval, T, rounds}; }
  /// Reward queries per round: batch_size * batch_count * num_branches,
  /// held fixed across recipes.
  std::size_t queries_per_round() const { return batch_size * batch_count * num_branches; }
  std::size_t branches_per_round() const;
  std::size_t trajectories_per_branch() const;
  std::size_t samples_per_optimizer_step() const;
  int tau_for_round(std::size_t n) const;
  NetworkArch resolved_arch() const;
};

/// Pretraining on the toy world with the standard denoising loss
/// E |eps - eps_theta(x_t, t, c)|^2 and condition dropout to the null token.
/// `losses`, when given, receives the mean batch loss of each step.
/// Throws std::runtime_error if the loss diverges.
DenoiserParams pretrain(const ToyWorld& world, const ExperimentConfig& cfg, std::size_t steps,
                        std::uint64_t seed, std::vector<double>* losses = nullptr,
                        ExecPolicy policy = ExecPolicy::Parallel);

/// Mean denoising loss on a fixed, seed-addressed batch.
double denoising_loss(const DenoiserParams& params, const ToyWorld& world, const NoiseSchedule& sched,
                      std::size_t batch, std::uint64_t seed);

/// Fraction of eta = 0 guided samples within 3 * scale of their target mode.
double pretrain_hit_rate(const DenoiserParams& params, const ToyWorld& world, const ExperimentConfig& cfg,
                         std::size_t samples, std::uint64_t seed);

/// Everything needed to resume a run.
struct Checkpoint {
  DenoiserParams params;
  AdamWState adam;
  NormalizerState normalizer;
  std::uint64_t round = 0;  // next round to run
};

/// Little-endian binary: magic "B2DR", u32 version, arch, u64 count,
/// f64 params, optimizer moments, normalizer buffers, u64 round.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws std::runtime_error on bad magic/version, truncation or trailing data.
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct RoundOutcome {
  RoundReport report;
  std::size_t optimizer_steps = 0;
  std::size_t training_samples = 0;
  std::size_t skipped_updates = 0;
};

/// Fine-tuning rounds: snapshot, sample, score, normalize,
/// select, then inner epochs of accumulated AdamW updates.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, Checkpoint start, RewardProvider& provider,
          ExecPolicy policy = ExecPolicy::Parallel);

  /// Runs round `state().round` and advances it. If the reward provider
  /// throws, the exception propagates and the model is unchanged.
  RoundOutcome run_round();

  const Checkpoint& state() const { return state_; }
  const ExperimentConfig& config() const { return cfg_; }

 private:
  ExperimentConfig cfg_;
  NoiseSchedule sched_;
  Checkpoint state_;
  RewardProvider& provider_;
  ExecPolicy policy_;
};

/// Builds the configured reward provider ("toy" or "remote:URL").
std::unique_ptr<RewardProvider> make_reward_provider(const ExperimentConfig& cfg);

}  // namespace b2diff
