#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "b2diff/branch_sampler.hpp"
#include "b2diff/diffusion.hpp"
#include "b2diff/nnet.hpp"
#include "b2diff/rewards.hpp"

namespace b2diff {

enum class Algo { BptPpo, BsPpo, Pg, Dpok, Dpo };

std::string to_string(Algo a);
Algo algo_from_string(const std::string& s);

struct ObjectiveConfig {
  Algo algo = Algo::BsPpo;
  double clip_range = 1e-4;  // +inf disables clipping
  double dpok_alpha = 1.0;
  double dpok_beta = 0.1;

  void validate() const;
  bool clipped() const { return algo == Algo::BptPpo || algo == Algo::BsPpo; }
};

/// The live policy being differentiated. Old-policy quantities come from
/// the trajectory caches recorded under theta_old at sampling time.
struct PolicyContext {
  const DenoiserParams& live;
  const NoiseSchedule& sched;
  SamplerConfig cfg;
  double sigma_floor = kTrainSigmaFloor;
};

/// Importance ratios whose log exceeds this are capped and flagged.
inline constexpr double kMaxLogRatio = 18.420680743952367;  // ln(1e8)

struct Ratio {
  double value = 1.0;
  bool capped = false;
};

/// exp(live - old), capped at exp(kMaxLogRatio).
Ratio ratio(double live_log_prob, double old_log_prob);

/// PPO surrogate weight min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv).
double ppo_clip_factor(double ratio, double advantage, double clip_range);

/// True when the unclipped term is the minimum, i.e. the surrogate still
/// depends on theta and the step contributes gradient.
bool ppo_unclipped(double ratio, double advantage, double clip_range);

/// Descent-direction gradient plus diagnostics. Diagnostics are kept as
/// sums so per-sample results merge exactly.
struct StepGradient {
  std::vector<double> param_grad;
  std::size_t steps = 0;
  std::size_t clipped_steps = 0;
  double ratio_sum = 0.0;
  bool ratio_capped = false;

  explicit StepGradient(std::size_t n = 0) : param_grad(n, 0.0) {}
  double mean_ratio() const { return steps ? ratio_sum / static_cast<double>(steps) : 1.0; }
  double clip_fraction() const {
    return steps ? static_cast<double>(clipped_steps) / static_cast<double>(steps) : 0.0;
  }
  void merge_stats(const StepGradient& other);
};

/// Timestep visiting order as indices into Trajectory::steps; empty means
/// natural order. The order only changes summation order.
using StepOrder = std::span<const std::size_t>;

/// -sum_t w_t * grad log p_theta(x_{t-1} | x_t, c) with w_t = ratio * r-hat
/// (zero for clipped steps under PPO).
StepGradient bpt_grad(const Trajectory& traj, const PolicyContext& ctx, const ObjectiveConfig& cfg,
                      StepOrder order = {});

/// bpt_grad(pos) + bpt_grad(neg) in one accumulation buffer.
StepGradient bs_pair_grad(const ContrastivePair& pair, const PolicyContext& ctx,
                          const ObjectiveConfig& cfg, StepOrder order = {});

/// sum_t [ -alpha r-hat grad log p + beta grad KL(p_theta || p_old) ] over the
/// trajectories of the sample. KL is the closed form for two Gaussians with
/// a shared sigma: |mu_live - mu_old|^2 / (2 sigma^2).
StepGradient dpok_grad(const TrainingSample& sample, const PolicyContext& ctx,
                       const ObjectiveConfig& cfg, StepOrder order = {});

/// -sum_t [ ratio+ grad log p+ - ratio- grad log p- ]. Reward-free.
StepGradient dpo_grad(const ContrastivePair& pair, const PolicyContext& ctx,
                      const ObjectiveConfig& cfg, StepOrder order = {});

/// Dispatches on cfg.algo and the sample kind. DPO has no gradient for a
/// simple sample (returns zeros with steps == 0).
StepGradient sample_grad(const TrainingSample& sample, const PolicyContext& ctx,
                         const ObjectiveConfig& cfg, StepOrder order = {});

// Accumulating forms used by the trainer's gradient kernel.
void accumulate_sample_grad(const TrainingSample& sample, const PolicyContext& ctx,
                            const ObjectiveConfig& cfg, StepOrder order, StepGradient& acc);

}  // namespace b2diff
