#include "b2diff/branch_sampler.hpp"

#include <stdexcept>

#include "b2diff/rng.hpp"

namespace b2diff {

namespace {

Point normal_point(Rng rng, std::size_t dim) {
  Point z(dim);
  for (double& v : z) v = rng.normal();
  return z;
}

}  // namespace

std::vector<Point> sample_trunk(const DenoiserParams& params, Condition c,
                                const SamplingContext& ctx, int tau, const BranchSeed& seed) {
  const int T = ctx.sched.T;
  if (tau < 1 || tau > T) throw std::out_of_range("tau outside [1, T]");
  const std::size_t dim = params.arch.input_dim;

  std::vector<Point> prefix;
  prefix.reserve(static_cast<std::size_t>(T - tau) + 1);
  prefix.push_back(normal_point(substream(seed.master, {stream::kTrunk, seed.round, seed.branch, 0}), dim));
  GuidedCache cache;
  for (int t = T; t > tau; --t) {
    const auto policy = policy_at(params, prefix.back(), t, c, ctx.sched, ctx.cfg, ctx.sigma_floor, cache);
    const Point z = normal_point(
        substream(seed.master, {stream::kTrunk, seed.round, seed.branch, static_cast<std::uint64_t>(t)}), dim);
    prefix.push_back(step(policy, z));
  }
  return prefix;
}

Branch fork_branches(const DenoiserParams& params, std::vector<Point> prefix, Condition c,
                     std::size_t K, const SamplingContext& ctx, const BranchSeed& seed) {
  if (K < 1) throw std::invalid_argument("need at least one branch");
  if (prefix.empty()) throw std::invalid_argument("empty prefix");
  const int tau = ctx.sched.T - static_cast<int>(prefix.size()) + 1;
  const std::size_t dim = params.arch.input_dim;

  Branch branch{std::move(prefix), c, {}};
  branch.trajectories.resize(K);
  GuidedCache cache;
  for (std::size_t k = 0; k < K; ++k) {
    Trajectory& traj = branch.trajectories[k];
    traj.condition = c;
    traj.steps.reserve(static_cast<std::size_t>(tau));
    Point x = branch.fork_point();
    for (int t = tau; t >= 1; --t) {
      TrajectoryStep s;
      s.policy = policy_at(params, x, t, c, ctx.sched, ctx.cfg, ctx.sigma_floor, cache);
      const Point z = normal_point(substream(seed.master, {stream::kFork, seed.round, seed.branch, k,
                                                           static_cast<std::uint64_t>(t)}),
                                   dim);
      s.x_prev = step(s.policy, z);
      s.old_log_prob = log_prob(s.x_prev, s.policy);
      s.x_t = std::move(x);
      x = s.x_prev;
      traj.steps.push_back(std::move(s));
    }
  }
  return branch;
}

Condition draw_condition(std::span<const Condition> conditions, const BranchSeed& seed) {
  if (conditions.empty()) throw std::invalid_argument("condition set is empty");
  Rng rng = substream(seed.master, {stream::kCondition, seed.round, seed.branch});
  return conditions[rng.index(conditions.size())];
}

std::vector<Branch> sample_round(const DenoiserParams& params, std::span<const Condition> conditions,
                                 const RoundSamplingConfig& round_cfg, const SamplingContext& ctx,
                                 std::uint64_t master_seed, std::uint64_t round, ExecPolicy policy) {
  if (conditions.empty()) throw std::invalid_argument("condition set is empty");
  std::vector<Branch> branches(round_cfg.branch_count);
  parallel_for(policy, branches.size(), [&](std::size_t b) {
    const BranchSeed seed{master_seed, round, b};
    const Condition c = draw_condition(conditions, seed);
    auto prefix = sample_trunk(params, c, ctx, round_cfg.tau, seed);
    branches[b] = fork_branches(params, std::move(prefix), c, round_cfg.K, ctx, seed);
  });
  return branches;
}

std::vector<Point> sample_final(const DenoiserParams& params, std::span<const Condition> conditions,
                                std::size_t count, const NoiseSchedule& sched,
                                const SamplerConfig& cfg, std::uint64_t seed, ExecPolicy policy,
                                std::vector<Condition>* drawn) {
  std::vector<Point> out(count);
  std::vector<Condition> conds(count);
  const SamplingContext ctx{sched, cfg, 0.0};
  parallel_for(policy, count, [&](std::size_t i) {
    const BranchSeed bs{seed, stream::kEval, i};
    conds[i] = draw_condition(conditions, bs);
    out[i] = sample_trunk(params, conds[i], ctx, 1, bs).back();
    GuidedCache cache;
    const auto p = policy_at(params, out[i], 1, conds[i], sched, cfg, 0.0, cache);
    const Point z = normal_point(substream(seed, {stream::kEval, i, 1}), params.arch.input_dim);
    out[i] = step(p, z);
  });
  if (drawn) *drawn = std::move(conds);
  return out;
}

}  // namespace b2diff
