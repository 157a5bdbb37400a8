#include "b2diff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace b2diff {

namespace {

void check_timestep(int t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T) throw std::out_of_range("timestep outside [1, T]");
}

}  // namespace

NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw std::invalid_argument("schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

Point forward_noise(std::span<const double> x0, int t, std::span<const double> eps,
                    const NoiseSchedule& sched) {
  check_timestep(t, sched);
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double s = std::sqrt(1.0 - sched.alpha_bar[t]);
  Point xt(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) xt[i] = a * x0[i] + s * eps[i];
  return xt;
}

void SamplerConfig::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1]");
  if (!(guidance >= 0.0)) throw std::invalid_argument("guidance scale must be >= 0");
}

Point guided_eps(const DenoiserParams& params, std::span<const double> x, int t, Condition c,
                 const SamplerConfig& cfg, GuidedCache& cache) {
  if (c.is_null()) throw std::invalid_argument("guided_eps needs a real condition");
  auto ec = forward(params, x, t, c, cache.cond);
  auto eu = forward(params, x, t, Condition::null(), cache.uncond);
  Point eps(ec.size());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = eu[i] + cfg.guidance * (ec[i] - eu[i]);
  return eps;
}

Point guided_eps(const DenoiserParams& params, std::span<const double> x, int t, Condition c,
                 const SamplerConfig& cfg) {
  GuidedCache cache;
  return guided_eps(params, x, t, c, cfg, cache);
}

double ddim_sigma(int t, const NoiseSchedule& sched, double eta) {
  check_timestep(t, sched);
  const double ab_t = sched.alpha_bar[t];
  const double ab_prev = sched.alpha_bar[t - 1];
  const double var = (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev);
  return eta * std::sqrt(std::max(var, 0.0));
}

double ddim_mean_eps_coefficient(int t, const NoiseSchedule& sched, double eta) {
  const double sigma = ddim_sigma(t, sched, eta);
  const double ab_t = sched.alpha_bar[t];
  const double ab_prev = sched.alpha_bar[t - 1];
  const double dir = std::sqrt(std::max(1.0 - ab_prev - sigma * sigma, 0.0));
  return dir - std::sqrt(ab_prev) * std::sqrt(1.0 - ab_t) / std::sqrt(ab_t);
}

GaussianPolicyStep ddim_policy(std::span<const double> x_t, std::span<const double> eps, int t,
                               const NoiseSchedule& sched, const SamplerConfig& cfg,
                               double sigma_floor) {
  check_timestep(t, sched);
  const double ab_t = sched.alpha_bar[t];
  if (!(ab_t > 0.0)) throw std::domain_error("alpha_bar_t must be positive");
  const double ab_prev = sched.alpha_bar[t - 1];
  const double sigma = ddim_sigma(t, sched, cfg.eta);
  const double dir = std::sqrt(std::max(1.0 - ab_prev - sigma * sigma, 0.0));
  const double sqrt_ab_t = std::sqrt(ab_t);
  const double sqrt_one_minus = std::sqrt(1.0 - ab_t);
  const double sqrt_ab_prev = std::sqrt(ab_prev);

  GaussianPolicyStep p;
  p.t = t;
  p.sigma = std::max(sigma, sigma_floor);
  p.mu.resize(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double x0_hat = (x_t[i] - sqrt_one_minus * eps[i]) / sqrt_ab_t;
    p.mu[i] = sqrt_ab_prev * x0_hat + dir * eps[i];
  }
  return p;
}

Point step(const GaussianPolicyStep& policy, std::span<const double> z) {
  Point x(policy.mu.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = policy.mu[i] + policy.sigma * z[i];
  return x;
}

double log_prob(std::span<const double> x_prev, const GaussianPolicyStep& policy) {
  if (!(policy.sigma > 0.0)) throw std::domain_error("log_prob undefined for sigma = 0");
  const double var = policy.sigma * policy.sigma;
  const double d = static_cast<double>(x_prev.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) -
         squared_distance(x_prev, policy.mu) / (2.0 * var);
}

GaussianPolicyStep policy_at(const DenoiserParams& params, std::span<const double> x_t, int t,
                             Condition c, const NoiseSchedule& sched, const SamplerConfig& cfg,
                             double sigma_floor, GuidedCache& cache) {
  const Point eps = guided_eps(params, x_t, t, c, cfg, cache);
  return ddim_policy(x_t, eps, t, sched, cfg, sigma_floor);
}

void accumulate_mean_vjp(const DenoiserParams& params, const GuidedCache& cache, int t,
                         const NoiseSchedule& sched, const SamplerConfig& cfg,
                         std::span<const double> mu_upstream, double scale,
                         std::span<double> param_grad) {
  const double k = ddim_mean_eps_coefficient(t, sched, cfg.eta);
  const double g = cfg.guidance;
  if (g != 0.0) accumulate_backward(params, cache.cond, mu_upstream, scale * k * g, param_grad);
  if (g != 1.0) {
    accumulate_backward(params, cache.uncond, mu_upstream, scale * k * (1.0 - g), param_grad);
  }
}

}  // namespace b2diff
