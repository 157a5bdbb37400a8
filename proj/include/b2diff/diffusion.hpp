#pragma once

#include <span>
#include <vector>

#include "b2diff/nnet.hpp"
#include "b2diff/types.hpp"

namespace b2diff {

/// Linear-beta noise schedule. Vectors are indexed by timestep with
/// slot 0 holding the boundary values beta_0 = 0, alpha_bar_0 = 1.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
};

NoiseSchedule build_schedule(int T, double beta_start, double beta_end);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Point forward_noise(std::span<const double> x0, int t, std::span<const double> eps,
                    const NoiseSchedule& sched);

struct SamplerConfig {
  double eta = 1.0;
  double guidance = 5.0;

  void validate() const;
};

/// Lower bound on sigma used wherever a log-density is needed. The DDIM
/// variance vanishes at t = 1 because abar_0 = 1.
inline constexpr double kTrainSigmaFloor = 1e-4;

/// Gaussian policy N(mu, sigma^2 I) over x_{t-1}.
struct GaussianPolicyStep {
  Point mu;
  double sigma = 0.0;
  int t = 0;
};

/// Per-call network evaluations of the two CFG branches, kept for
/// backpropagating through the guided eps.
struct GuidedCache {
  ForwardCache cond;
  ForwardCache uncond;
};

/// eps(null) + g * (eps(c) - eps(null)). Throws when c is the null token.
Point guided_eps(const DenoiserParams& params, std::span<const double> x, int t, Condition c,
                 const SamplerConfig& cfg);
Point guided_eps(const DenoiserParams& params, std::span<const double> x, int t, Condition c,
                 const SamplerConfig& cfg, GuidedCache& cache);

/// Unfloored DDIM standard deviation
/// eta * sqrt((1 - abar_{t-1}) / (1 - abar_t)) * sqrt(1 - abar_t / abar_{t-1}).
double ddim_sigma(int t, const NoiseSchedule& sched, double eta);

/// d mu / d eps for the DDIM mean at timestep t (a scalar: the mean is
/// affine in eps with the same coefficient on every coordinate).
double ddim_mean_eps_coefficient(int t, const NoiseSchedule& sched, double eta);

/// DDIM reverse step as a Gaussian policy. The mean is computed with the
/// unfloored sigma; the returned sigma is max(sigma, sigma_floor).
GaussianPolicyStep ddim_policy(std::span<const double> x_t, std::span<const double> eps, int t,
                               const NoiseSchedule& sched, const SamplerConfig& cfg,
                               double sigma_floor = 0.0);

/// x_{t-1} = mu + sigma z
Point step(const GaussianPolicyStep& policy, std::span<const double> z);

/// Diagonal Gaussian log density. Throws std::domain_error when sigma == 0.
double log_prob(std::span<const double> x_prev, const GaussianPolicyStep& policy);

/// Guided policy of `params` at (x_t, t, c): the composition
/// guided_eps -> ddim_policy, with sigma floored for training.
GaussianPolicyStep policy_at(const DenoiserParams& params, std::span<const double> x_t, int t,
                             Condition c, const NoiseSchedule& sched, const SamplerConfig& cfg,
                             double sigma_floor, GuidedCache& cache);

/// Adds scale * d/dtheta of  dot(mu_theta(x_t, t, c), mu_upstream)  to
/// `param_grad`, using the network caches filled by policy_at. Every
/// per-step gradient reduces to this: the policy depends on theta only
/// through its mean.
void accumulate_mean_vjp(const DenoiserParams& params, const GuidedCache& cache, int t,
                         const NoiseSchedule& sched, const SamplerConfig& cfg,
                         std::span<const double> mu_upstream, double scale,
                         std::span<double> param_grad);

}  // namespace b2diff
