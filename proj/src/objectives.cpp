#include "b2diff/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <type_traits>

namespace b2diff {

std::string to_string(Algo a) {
  switch (a) {
    case Algo::BptPpo: return "bpt-ppo";
    case Algo::BsPpo: return "bs-ppo";
    case Algo::Pg: return "pg";
    case Algo::Dpok: return "dpok";
    case Algo::Dpo: return "dpo";
  }
  return "?";
}

Algo algo_from_string(const std::string& s) {
  if (s == "bpt-ppo") return Algo::BptPpo;
  if (s == "bs-ppo") return Algo::BsPpo;
  if (s == "pg") return Algo::Pg;
  if (s == "dpok") return Algo::Dpok;
  if (s == "dpo") return Algo::Dpo;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

void ObjectiveConfig::validate() const {
  if (clipped() && !(clip_range > 0.0)) throw std::invalid_argument("clip_range must be > 0");
  if (!(dpok_alpha >= 0.0) || !(dpok_beta >= 0.0)) {
    throw std::invalid_argument("dpok alpha and beta must be >= 0");
  }
}

Ratio ratio(double live_log_prob, double old_log_prob) {
  const double d = live_log_prob - old_log_prob;
  if (!std::isfinite(live_log_prob) || !std::isfinite(old_log_prob)) {
    throw std::domain_error("log-probabilities must be finite");
  }
  if (d > kMaxLogRatio) return Ratio{std::exp(kMaxLogRatio), true};
  return Ratio{std::exp(d), false};
}

double ppo_clip_factor(double ratio, double advantage, double clip_range) {
  const double clipped = std::clamp(ratio, 1.0 - clip_range, 1.0 + clip_range);
  return std::min(ratio * advantage, clipped * advantage);
}

bool ppo_unclipped(double ratio, double advantage, double clip_range) {
  const double clipped = std::clamp(ratio, 1.0 - clip_range, 1.0 + clip_range);
  return ratio * advantage <= clipped * advantage;
}

void StepGradient::merge_stats(const StepGradient& other) {
  steps += other.steps;
  clipped_steps += other.clipped_steps;
  ratio_sum += other.ratio_sum;
  ratio_capped = ratio_capped || other.ratio_capped;
}

namespace {

// Coefficients of one step's descent gradient:
//   logp * grad log p  +  kl * grad KL
struct StepWeights {
  double logp = 0.0;
  double kl = 0.0;
  bool clipped = false;
};

template <typename WeightFn>
void accumulate_trajectory(const Trajectory& traj, const PolicyContext& ctx, StepOrder order,
                           StepGradient& acc, WeightFn&& weights) {
  const std::size_t n = traj.steps.size();
  if (!order.empty() && order.size() != n) {
    throw std::invalid_argument("step order length does not match trajectory");
  }
  GuidedCache cache;
  Point upstream;
  for (std::size_t j = 0; j < n; ++j) {
    const TrajectoryStep& s = traj.steps[order.empty() ? j : order[j]];
    const int t = s.policy.t;
    const GaussianPolicyStep live =
        policy_at(ctx.live, s.x_t, t, traj.condition, ctx.sched, ctx.cfg, ctx.sigma_floor, cache);
    const double live_lp = log_prob(s.x_prev, live);
    const Ratio r = ratio(live_lp, s.old_log_prob);
    const StepWeights w = weights(s, r.value);

    acc.steps += 1;
    acc.ratio_sum += r.value;
    acc.ratio_capped = acc.ratio_capped || r.capped;
    if (w.clipped) acc.clipped_steps += 1;
    if (w.logp == 0.0 && w.kl == 0.0) continue;

    // grad log p = (x - mu)/sigma^2 . dmu;  grad KL = (mu - mu_old)/sigma^2 . dmu
    const double inv_var = 1.0 / (live.sigma * live.sigma);
    upstream.resize(live.mu.size());
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      upstream[i] = inv_var * (w.logp * (s.x_prev[i] - live.mu[i]) + w.kl * (live.mu[i] - s.policy.mu[i]));
    }
    accumulate_mean_vjp(ctx.live, cache, t, ctx.sched, ctx.cfg, upstream, 1.0, acc.param_grad);
  }
}

double require_reward(const Trajectory& traj) {
  if (!traj.normalized_reward) throw std::invalid_argument("trajectory has no normalized reward");
  return *traj.normalized_reward;
}

void accumulate_policy_gradient(const Trajectory& traj, const PolicyContext& ctx,
                                const ObjectiveConfig& cfg, StepOrder order, StepGradient& acc) {
  const double adv = require_reward(traj);
  const bool clip = cfg.clipped();
  accumulate_trajectory(traj, ctx, order, acc, [&](const TrajectoryStep&, double rho) {
    StepWeights w;
    if (clip && !ppo_unclipped(rho, adv, cfg.clip_range)) {
      w.clipped = true;
      return w;
    }
    w.logp = -adv * rho;
    return w;
  });
}

void accumulate_dpok(const Trajectory& traj, const PolicyContext& ctx, const ObjectiveConfig& cfg,
                     StepOrder order, StepGradient& acc) {
  const double adv = require_reward(traj);
  accumulate_trajectory(traj, ctx, order, acc, [&](const TrajectoryStep& s, double) {
    if (!(s.policy.sigma >= kTrainSigmaFloor)) {
      throw std::domain_error("DPOK KL needs sigma at or above the training floor");
    }
    return StepWeights{-cfg.dpok_alpha * adv, cfg.dpok_beta, false};
  });
}

void accumulate_dpo(const Trajectory& traj, double sign, const PolicyContext& ctx, StepOrder order,
                    StepGradient& acc) {
  accumulate_trajectory(traj, ctx, order, acc, [&](const TrajectoryStep&, double rho) {
    return StepWeights{-sign * rho, 0.0, false};
  });
}

void check_pair(const ContrastivePair& pair) {
  const double pos = require_reward(pair.pos);
  const double neg = require_reward(pair.neg);
  if (!(pos >= 0.0 && neg <= 0.0 && pos > neg)) {
    throw std::invalid_argument("contrastive pair needs r+ >= 0 >= r- with r+ > r-");
  }
  if (pair.pos.length() != pair.neg.length()) {
    throw std::invalid_argument("contrastive pair trajectories differ in length");
  }
}

}  // namespace

StepGradient bpt_grad(const Trajectory& traj, const PolicyContext& ctx, const ObjectiveConfig& cfg,
                      StepOrder order) {
  StepGradient g(ctx.live.size());
  accumulate_policy_gradient(traj, ctx, cfg, order, g);
  return g;
}

StepGradient bs_pair_grad(const ContrastivePair& pair, const PolicyContext& ctx,
                          const ObjectiveConfig& cfg, StepOrder order) {
  check_pair(pair);
  StepGradient g(ctx.live.size());
  accumulate_policy_gradient(pair.pos, ctx, cfg, order, g);
  accumulate_policy_gradient(pair.neg, ctx, cfg, order, g);
  return g;
}

StepGradient dpok_grad(const TrainingSample& sample, const PolicyContext& ctx,
                       const ObjectiveConfig& cfg, StepOrder order) {
  StepGradient g(ctx.live.size());
  if (const auto* pair = std::get_if<ContrastivePair>(&sample)) {
    check_pair(*pair);
    accumulate_dpok(pair->pos, ctx, cfg, order, g);
    accumulate_dpok(pair->neg, ctx, cfg, order, g);
  } else {
    accumulate_dpok(std::get<SimpleSample>(sample).traj, ctx, cfg, order, g);
  }
  return g;
}

StepGradient dpo_grad(const ContrastivePair& pair, const PolicyContext& ctx,
                      const ObjectiveConfig&, StepOrder order) {
  if (pair.pos.length() != pair.neg.length()) {
    throw std::invalid_argument("contrastive pair trajectories differ in length");
  }
  if (pair.pos.normalized_reward && pair.neg.normalized_reward &&
      !(*pair.pos.normalized_reward > *pair.neg.normalized_reward)) {
    throw std::invalid_argument("DPO pair needs the preferred trajectory first");
  }
  StepGradient g(ctx.live.size());
  accumulate_dpo(pair.pos, +1.0, ctx, order, g);
  accumulate_dpo(pair.neg, -1.0, ctx, order, g);
  return g;
}

void accumulate_sample_grad(const TrainingSample& sample, const PolicyContext& ctx,
                            const ObjectiveConfig& cfg, StepOrder order, StepGradient& acc) {
  const auto* pair = std::get_if<ContrastivePair>(&sample);
  switch (cfg.algo) {
    case Algo::BptPpo:
    case Algo::BsPpo:
    case Algo::Pg:
      if (pair) {
        check_pair(*pair);
        accumulate_policy_gradient(pair->pos, ctx, cfg, order, acc);
        accumulate_policy_gradient(pair->neg, ctx, cfg, order, acc);
      } else {
        accumulate_policy_gradient(std::get<SimpleSample>(sample).traj, ctx, cfg, order, acc);
      }
      return;
    case Algo::Dpok:
      if (pair) {
        check_pair(*pair);
        accumulate_dpok(pair->pos, ctx, cfg, order, acc);
        accumulate_dpok(pair->neg, ctx, cfg, order, acc);
      } else {
        accumulate_dpok(std::get<SimpleSample>(sample).traj, ctx, cfg, order, acc);
      }
      return;
    case Algo::Dpo:
      if (pair) {
        accumulate_dpo(pair->pos, +1.0, ctx, order, acc);
        accumulate_dpo(pair->neg, -1.0, ctx, order, acc);
      }
      return;
  }
}

StepGradient sample_grad(const TrainingSample& sample, const PolicyContext& ctx,
                         const ObjectiveConfig& cfg, StepOrder order) {
  StepGradient g(ctx.live.size());
  accumulate_sample_grad(sample, ctx, cfg, order, g);
  return g;
}

}  // namespace b2diff
