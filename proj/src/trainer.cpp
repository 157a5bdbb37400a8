#include "b2diff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "b2diff/rng.hpp"

namespace b2diff {

void IntervalSchedule::validate() const {
  if (tau0 < 1 || tau0 > T) throw std::invalid_argument("initial interval must satisfy 1 <= tau0 <= T");
  if (N < 1) throw std::invalid_argument("schedule needs N >= 1 rounds");
}

int interval_for_round(std::size_t n, const IntervalSchedule& sched) {
  sched.validate();
  const std::size_t span = static_cast<std::size_t>(sched.T - sched.tau0);
  const std::size_t step = (2 * n * span + sched.N) / (2 * sched.N);
  return std::min(sched.T, sched.tau0 + static_cast<int>(step));
}

bool adamw_step(AdamWState& state, std::span<double> params, std::span<const double> grad) {
  if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adamw: shape mismatch");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) return false;
  }
  const AdamWHyper& h = state.hyper;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - h.lr * h.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grad[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] = params[i] * decay - h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
  return true;
}

std::string to_string(Recipe r) {
  switch (r) {
    case Recipe::BsPpo: return "bs-ppo";
    case Recipe::BptPpo: return "bpt-ppo";
    case Recipe::DdpoBaseline: return "ddpo-baseline";
    case Recipe::Pg: return "pg";
    case Recipe::Dpok: return "dpok";
    case Recipe::Dpo: return "dpo";
  }
  return "?";
}

Recipe recipe_from_string(const std::string& s) {
  if (s == "bs-ppo") return Recipe::BsPpo;
  if (s == "bpt-ppo") return Recipe::BptPpo;
  if (s == "ddpo-baseline") return Recipe::DdpoBaseline;
  if (s == "pg") return Recipe::Pg;
  if (s == "dpok") return Recipe::Dpok;
  if (s == "dpo") return Recipe::Dpo;
  throw std::invalid_argument("unknown algo '" + s + "'");
}

Algo objective_algo(Recipe r) {
  switch (r) {
    case Recipe::BsPpo: return Algo::BsPpo;
    case Recipe::BptPpo:
    case Recipe::DdpoBaseline: return Algo::BptPpo;
    case Recipe::Pg: return Algo::Pg;
    case Recipe::Dpok: return Algo::Dpok;
    case Recipe::Dpo: return Algo::Dpo;
  }
  return Algo::BsPpo;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(T >= 2, "T must be >= 2");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "need 0 < beta_start <= beta_end < 1");
  sampler.validate();
  require(sampler.eta > 0.0, "training needs eta > 0 (log-probabilities are undefined at eta = 0)");
  require(batch_size >= 1 && batch_count >= 1 && num_branches >= 1, "sampling counts must be >= 1");
  require(adam.lr > 0.0 && adam.weight_decay >= 0.0 && adam.eps > 0.0, "invalid AdamW hyperparameters");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
          "AdamW betas must lie in [0, 1)");
  require(train_batch_size >= 1 && grad_accum_steps >= 1 && baseline_grad_accum_steps >= 1,
          "training counts must be >= 1");
  require(initial_interval >= 1 && initial_interval <= T, "initial interval must satisfy 1 <= tau0 <= T");
  require(score_threshold >= 0.0, "score_threshold must be >= 0");
  require(inner_epochs >= 1 && rounds >= 1, "inner_epochs and rounds must be >= 1");
  require(normalizer.window >= 1 && normalizer.variance_floor > 0.0, "invalid normalizer settings");
  objective.validate();
  network.validate();
  world.validate();
  require(pretrain.batch_size >= 1 && pretrain.lr > 0.0 && pretrain.cond_dropout >= 0.0 &&
              pretrain.cond_dropout <= 1.0,
          "invalid pretrain settings");
  require(reward == "toy" || reward.rfind("remote:", 0) == 0, "reward must be 'toy' or 'remote:URL'");
  require(remote_timeout_ms > 0 && remote_retries >= 0, "invalid remote scorer settings");
  require(eval_samples >= 2, "eval_samples must be >= 2");
  require(branch_stats.branches >= 1 && branch_stats.K >= 1, "branch_stats counts must be >= 1");
  for (int tb : branch_stats.timesteps) require(tb >= 1 && tb <= T, "branch_stats timesteps must lie in [1, T]");
}

std::size_t ExperimentConfig::branches_per_round() const {
  return trajectories_per_branch() == 1 ? queries_per_round() : batch_size * batch_count;
}

std::size_t ExperimentConfig::trajectories_per_branch() const {
  return (recipe == Recipe::BptPpo || recipe == Recipe::DdpoBaseline) ? 1 : num_branches;
}

std::size_t ExperimentConfig::samples_per_optimizer_step() const {
  const std::size_t accum = recipe == Recipe::DdpoBaseline ? baseline_grad_accum_steps : grad_accum_steps;
  return train_batch_size * accum;
}

int ExperimentConfig::tau_for_round(std::size_t n) const {
  if (recipe == Recipe::DdpoBaseline) return T;
  return interval_for_round(n, interval());
}

NetworkArch ExperimentConfig::resolved_arch() const {
  NetworkArch a = network;
  a.input_dim = world.dim();
  a.cond_count = world.condition_count();
  return a;
}

// ---------------------------------------------------------------------------
// Pretraining

namespace {

struct DenoisingExample {
  Point x_t;
  Point eps;
  int t = 1;
  Condition c;
};

DenoisingExample make_example(const ToyWorld& world, const NoiseSchedule& sched, double dropout,
                              std::uint64_t seed, std::uint64_t step, std::uint64_t i) {
  Rng rng = substream(seed, {stream::kPretrain, step, i});
  const std::size_t cid = rng.index(world.condition_count());
  const Mode& m = world.modes[world.condition_map[cid]];
  Point x0(m.center.size());
  for (std::size_t d = 0; d < x0.size(); ++d) x0[d] = m.center[d] + m.scale * rng.normal();
  DenoisingExample ex;
  ex.t = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(sched.T)));
  ex.eps.resize(x0.size());
  for (double& e : ex.eps) e = rng.normal();
  ex.x_t = forward_noise(x0, ex.t, ex.eps, sched);
  ex.c = (rng.uniform() < dropout) ? Condition::null() : Condition{static_cast<int>(cid)};
  return ex;
}

}  // namespace

DenoiserParams pretrain(const ToyWorld& world, const ExperimentConfig& cfg, std::size_t steps,
                        std::uint64_t seed, std::vector<double>* losses, ExecPolicy policy) {
  world.validate();
  NetworkArch arch = cfg.network;
  arch.input_dim = world.dim();
  arch.cond_count = world.condition_count();
  DenoiserParams params = init_params(arch, seed);
  if (steps == 0) return params;

  const NoiseSchedule sched = cfg.schedule();
  AdamWState opt(AdamWHyper{cfg.pretrain.lr, 0.0, 0.9, 0.999, 1e-8}, params.size());
  const std::size_t B = cfg.pretrain.batch_size;
  constexpr std::size_t kChunks = 16;
  std::vector<double> grad(params.size());
  std::vector<double> sample_loss(B);

  for (std::size_t s = 0; s < steps; ++s) {
    // cosine decay to 10% of the base rate
    const double progress = static_cast<double>(s) / static_cast<double>(steps);
    opt.hyper.lr = cfg.pretrain.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * progress)));

    parallel_accumulate(policy, B, kChunks, grad, [&](std::size_t i, std::span<double> acc) {
      const DenoisingExample ex = make_example(world, sched, cfg.pretrain.cond_dropout, seed, s, i);
      ForwardCache cache;
      auto out = forward(params, ex.x_t, ex.t, ex.c, cache);
      Point up(out.size());
      double l = 0.0;
      for (std::size_t d = 0; d < out.size(); ++d) {
        const double r = out[d] - ex.eps[d];
        l += r * r;
        up[d] = 2.0 * r / static_cast<double>(B);
      }
      sample_loss[i] = l;
      accumulate_backward(params, cache, up, 1.0, acc);
    });
    const double loss = std::accumulate(sample_loss.begin(), sample_loss.end(), 0.0) / static_cast<double>(B);
    if (!std::isfinite(loss)) throw std::runtime_error("pretraining diverged (non-finite loss)");
    if (losses) losses->push_back(loss);
    adamw_step(opt, params.values, grad);
  }
  return params;
}

double denoising_loss(const DenoiserParams& params, const ToyWorld& world, const NoiseSchedule& sched,
                      std::size_t batch, std::uint64_t seed) {
  double total = 0.0;
  ForwardCache cache;
  for (std::size_t i = 0; i < batch; ++i) {
    const DenoisingExample ex = make_example(world, sched, 0.0, seed, 0, i);
    auto out = forward(params, ex.x_t, ex.t, ex.c, cache);
    for (std::size_t d = 0; d < out.size(); ++d) total += (out[d] - ex.eps[d]) * (out[d] - ex.eps[d]);
  }
  return total / static_cast<double>(batch);
}

double pretrain_hit_rate(const DenoiserParams& params, const ToyWorld& world, const ExperimentConfig& cfg,
                         std::size_t samples, std::uint64_t seed) {
  const NoiseSchedule sched = cfg.schedule();
  const SamplerConfig det{0.0, cfg.sampler.guidance};
  std::vector<Condition> conds;
  const auto cs = world.conditions();
  const auto xs = sample_final(params, cs, samples, sched, det, seed, ExecPolicy::Parallel, &conds);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Mode& m = world.target(conds[i]);
    if (std::sqrt(squared_distance(xs[i], m.center)) <= 3.0 * m.scale) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(ExperimentConfig cfg, Checkpoint start, RewardProvider& provider, ExecPolicy policy)
    : cfg_(std::move(cfg)), sched_(cfg_.schedule()), state_(std::move(start)), provider_(provider),
      policy_(policy) {
  cfg_.validate();
  if (state_.params.arch != cfg_.resolved_arch()) {
    throw std::invalid_argument("checkpoint architecture does not match the configured network");
  }
  cfg_.objective.algo = objective_algo(cfg_.recipe);
  if (state_.adam.m.size() != state_.params.size()) {
    state_.adam = AdamWState(cfg_.adam, state_.params.size());
  }
  state_.adam.hyper = cfg_.adam;
  NormalizerState normalizer(cfg_.normalizer);
  normalizer.buffers() = std::move(state_.normalizer.buffers());
  state_.normalizer = std::move(normalizer);
}

RoundOutcome Trainer::run_round() {
  const std::uint64_t n = state_.round;
  const int tau = cfg_.tau_for_round(static_cast<std::size_t>(n));
  const auto conditions = cfg_.world.conditions();

  // theta_old: sampling runs before any update, so the live parameters are
  // the snapshot for every cached log-probability below.
  const FrozenPolicySnapshot snapshot(state_.params);
  const SamplingContext sctx{sched_, cfg_.sampler, kTrainSigmaFloor};
  const RoundSamplingConfig rcfg{cfg_.branches_per_round(), cfg_.trajectories_per_branch(), tau};
  std::vector<Branch> branches = sample_round(snapshot.params(), conditions, rcfg, sctx, cfg_.seed, n, policy_);

  // Scoring: one provider call per condition, in branch order.
  std::map<int, std::vector<std::pair<std::size_t, std::size_t>>> slots;
  for (std::size_t b = 0; b < branches.size(); ++b) {
    for (std::size_t k = 0; k < branches[b].trajectories.size(); ++k) slots[branches[b].condition.id].push_back({b, k});
  }
  std::vector<ConditionScores> groups;
  std::vector<Point> finals;
  for (const auto& [cid, list] : slots) {
    std::vector<Point> xs;
    xs.reserve(list.size());
    for (auto [b, k] : list) xs.push_back(branches[b].trajectories[k].final_sample());
    auto scores = provider_.score(Condition{cid}, xs);
    if (scores.size() != xs.size()) throw RewardProviderError("reward provider returned the wrong count");
    for (double s : scores) {
      if (!std::isfinite(s)) throw RewardProviderError("reward provider returned a non-finite score");
    }
    groups.push_back(ConditionScores{Condition{cid}, std::move(scores)});
    finals.insert(finals.end(), std::make_move_iterator(xs.begin()), std::make_move_iterator(xs.end()));
  }

  // Past this point nothing can fail on the provider's account.
  const auto rhat = update_and_normalize(state_.normalizer, n, groups);
  double raw_sum = 0.0, norm_sum = 0.0;
  std::size_t gi = 0, queries = 0;
  for (const auto& [cid, list] : slots) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      Trajectory& tr = branches[list[i].first].trajectories[list[i].second];
      tr.raw_reward = groups[gi].scores[i];
      tr.normalized_reward = rhat[gi][i];
      raw_sum += groups[gi].scores[i];
      norm_sum += rhat[gi][i];
      ++queries;
    }
    ++gi;
  }

  std::vector<TrainingSample> samples;
  samples.reserve(branches.size());
  std::size_t pairs = 0;
  for (const Branch& br : branches) {
    samples.push_back(select_training_samples(br, cfg_.score_threshold));
    if (std::holds_alternative<ContrastivePair>(samples.back())) ++pairs;
  }
  branches.clear();

  // Training phase: single writer on the parameters.
  RoundOutcome out;
  out.training_samples = samples.size();
  StepGradient stats(0);
  const std::size_t per_step = cfg_.samples_per_optimizer_step();
  std::vector<double> grad(state_.params.size());
  for (std::size_t e = 0; e < cfg_.inner_epochs; ++e) {
    std::vector<std::size_t> perm(samples.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle_rng = substream(cfg_.seed, {stream::kShuffle, n, e});
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    for (std::size_t begin = 0; begin < perm.size(); begin += per_step) {
      const std::size_t count = std::min(per_step, perm.size() - begin);
      const PolicyContext pctx{state_.params, sched_, cfg_.sampler, kTrainSigmaFloor};
      std::vector<StepGradient> partial(count);
      parallel_for(policy_, count, [&](std::size_t j) {
        const std::size_t idx = perm[begin + j];
        const TrainingSample& sample = samples[idx];
        const std::size_t len = std::visit(
            [](const auto& s) {
              if constexpr (std::is_same_v<std::decay_t<decltype(s)>, ContrastivePair>) {
                return s.pos.length();
              } else {
                return s.traj.length();
              }
            },
            sample);
        std::vector<std::size_t> order(len);
        std::iota(order.begin(), order.end(), 0);
        Rng step_rng = substream(cfg_.seed, {stream::kShuffle, n, e, idx + 1});
        std::shuffle(order.begin(), order.end(), step_rng);
        partial[j] = StepGradient(state_.params.size());
        accumulate_sample_grad(sample, pctx, cfg_.objective, order, partial[j]);
      });

      std::fill(grad.begin(), grad.end(), 0.0);
      for (const StepGradient& p : partial) {
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += p.param_grad[k];
        stats.merge_stats(p);
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (double& g : grad) g *= inv;
      if (adamw_step(state_.adam, state_.params.values, grad)) {
        ++out.optimizer_steps;
      } else {
        ++out.skipped_updates;
      }
    }
  }

  RoundReport& rep = out.report;
  rep.round = n;
  rep.tau = tau;
  rep.reward_queries = queries;
  rep.mean_reward = queries ? raw_sum / static_cast<double>(queries) : 0.0;
  rep.mean_norm_reward = queries ? norm_sum / static_cast<double>(queries) : 0.0;
  rep.pair_fraction = samples.empty() ? 0.0 : static_cast<double>(pairs) / static_cast<double>(samples.size());
  rep.clip_fraction = stats.clip_fraction();
  if (finals.size() >= 2) rep.inception_score = inception_score(finals, cfg_.world, policy_);

  state_.round = n + 1;
  return out;
}

std::unique_ptr<RewardProvider> make_reward_provider(const ExperimentConfig& cfg) {
  if (cfg.reward == "toy") return std::make_unique<ToyRewardProvider>(cfg.world);
  if (cfg.reward.rfind("remote:", 0) == 0) {
    RemoteScorerConfig rc{cfg.reward.substr(7), cfg.remote_timeout_ms, cfg.remote_retries};
    return std::make_unique<RemoteRewardProvider>(std::move(rc), cfg.world);
  }
  throw std::invalid_argument("unknown reward provider '" + cfg.reward + "'");
}

}  // namespace b2diff
