#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "b2diff/branch_sampler.hpp"
#include "b2diff/nnet.hpp"
#include "b2diff/parallel.hpp"
#include "b2diff/rewards.hpp"

namespace b2diff {

struct ClassifierPosterior {
  std::vector<double> probs;
};

/// Exact Bayes posterior over the world's modes (equal priors, isotropic
/// Gaussians with the mode scales).
ClassifierPosterior posterior(std::span<const double> x, const ToyWorld& world);

/// exp(mean_x KL(p(y|x) || p(y))) with p(y) the empirical mean posterior.
double inception_score(std::span<const ClassifierPosterior> posteriors);
double inception_score(std::span<const Point> samples, const ToyWorld& world,
                       ExecPolicy policy = ExecPolicy::Parallel);

/// One line of the metrics log.
struct RoundReport {
  std::uint64_t round = 0;
  int tau = 0;
  double mean_reward = 0.0;
  double mean_norm_reward = 0.0;
  double pair_fraction = 0.0;
  double clip_fraction = 0.0;
  std::uint64_t reward_queries = 0;
  std::optional<double> inception_score;

  friend bool operator==(const RoundReport&, const RoundReport&) = default;
};

std::string to_json_line(const RoundReport& r);
RoundReport report_from_json_line(const std::string& line);

/// Appends one JSON line per report. Throws std::runtime_error on I/O failure.
void emit_metrics(std::span<const RoundReport> reports, const std::filesystem::path& path);
std::vector<RoundReport> read_metrics(const std::filesystem::path& path);
/// CSV with header round,tau,mean_reward,inception_score.
void export_metrics_csv(std::span<const RoundReport> reports, const std::filesystem::path& path);

struct BranchMixConfig {
  std::vector<int> timesteps{2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  std::size_t branches = 256;
  std::size_t K = 3;
  double threshold = 0.0;
};

/// For each branching timestep t_b: fork `branches` branches at x_{t_b},
/// score, normalize per condition over that set, and report the fraction
/// of branches holding both r-hat > threshold and r-hat < -threshold.
std::vector<double> branch_mix_stats(const DenoiserParams& params, std::span<const Condition> conditions,
                                     const SamplingContext& ctx, const BranchMixConfig& cfg,
                                     RewardProvider& provider, const NormalizerConfig& norm,
                                     std::uint64_t seed, ExecPolicy policy = ExecPolicy::Parallel);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

/// One-sided exact permutation p-value P(rho_perm >= rho_obs). n <= 10.
double spearman_permutation_pvalue(std::span<const double> a, std::span<const double> b);

}  // namespace b2diff
