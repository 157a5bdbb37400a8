#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "b2diff/diffusion.hpp"
#include "b2diff/nnet.hpp"
#include "b2diff/parallel.hpp"
#include "b2diff/types.hpp"

namespace b2diff {

/// One recorded denoising action x_t -> x_{t-1} under theta_old.
struct TrajectoryStep {
  Point x_t;
  Point x_prev;
  double old_log_prob = 0.0;
  GaussianPolicyStep policy;  // cached mean/sigma under theta_old; policy.t is the timestep
};

/// Steps ordered t = tau .. 1, so steps.back().x_prev is the final sample x_0.
struct Trajectory {
  std::vector<TrajectoryStep> steps;
  Condition condition;
  std::optional<double> raw_reward;
  std::optional<double> normalized_reward;

  std::size_t length() const { return steps.size(); }
  const Point& final_sample() const { return steps.back().x_prev; }
};

/// Shared trunk x_T .. x_tau and K trajectories forked from x_tau.
struct Branch {
  std::vector<Point> prefix;
  Condition condition;
  std::vector<Trajectory> trajectories;

  const Point& fork_point() const { return prefix.back(); }
};

/// Addresses the noise streams of one branch: (master, round, branch).
struct BranchSeed {
  std::uint64_t master = 0;
  std::uint64_t round = 0;
  std::uint64_t branch = 0;
};

/// Everything the sampler needs besides the parameters.
struct SamplingContext {
  const NoiseSchedule& sched;
  SamplerConfig cfg;
  double sigma_floor = kTrainSigmaFloor;
};

/// x_T ~ N(0, I), then T - tau guided DDIM steps. Returns x_T .. x_tau.
std::vector<Point> sample_trunk(const DenoiserParams& params, Condition c,
                                const SamplingContext& ctx, int tau, const BranchSeed& seed);

/// K trajectories from the prefix's last state, each over t = tau .. 1 with
/// its own noise stream, recording old log-probs under `params`.
Branch fork_branches(const DenoiserParams& params, std::vector<Point> prefix, Condition c,
                     std::size_t K, const SamplingContext& ctx, const BranchSeed& seed);

struct RoundSamplingConfig {
  std::size_t branch_count = 256;  // batch_size * batch_count
  std::size_t K = 3;
  int tau = 14;
};

/// Condition of branch `branch` in a round, drawn uniformly from `conditions`.
Condition draw_condition(std::span<const Condition> conditions, const BranchSeed& seed);

/// All branches of one round, in branch-index order. Branches are
/// independent jobs; Serial and Parallel yield identical output.
std::vector<Branch> sample_round(const DenoiserParams& params, std::span<const Condition> conditions,
                                 const RoundSamplingConfig& round_cfg, const SamplingContext& ctx,
                                 std::uint64_t master_seed, std::uint64_t round,
                                 ExecPolicy policy = ExecPolicy::Parallel);

/// Plain sampling of final points x_0 (no recording), e.g. for evaluation.
std::vector<Point> sample_final(const DenoiserParams& params, std::span<const Condition> conditions,
                                std::size_t count, const NoiseSchedule& sched,
                                const SamplerConfig& cfg, std::uint64_t seed,
                                ExecPolicy policy = ExecPolicy::Parallel,
                                std::vector<Condition>* drawn = nullptr);

}  // namespace b2diff
