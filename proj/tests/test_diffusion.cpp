#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "b2diff/diffusion.hpp"
#include "support/fixtures.hpp"
#include "support/reference.hpp"

using namespace b2diff;

TEST_CASE("schedule length and boundary") {
  const auto s = build_schedule(20, 1e-4, 0.2);
  CHECK(s.T == 20);
  CHECK(s.alpha_bar.size() == 21);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.beta[1] == doctest::Approx(1e-4));
  CHECK(s.beta[20] == doctest::Approx(0.2));
}

TEST_CASE("constant beta gives a geometric alpha bar") {
  const auto s = build_schedule(10, 0.05, 0.05);
  for (int t = 0; t <= 10; ++t) CHECK(s.alpha_bar[t] == doctest::Approx(std::pow(0.95, t)).epsilon(1e-14));
}

TEST_CASE("default schedule matches an independent running product") {
  const auto s = build_schedule(20, 1e-4, 0.2);
  const auto want = ref::alpha_bars(20, 1e-4, 0.2);
  for (int t = 0; t <= 20; ++t) CHECK(s.alpha_bar[t] == doctest::Approx(want[t]).epsilon(1e-13));
  for (int t = 1; t <= 20; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
}

TEST_CASE("schedule rejects bad arguments") {
  CHECK_THROWS_AS(build_schedule(1, 1e-4, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(20, 0.0, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(20, 1e-4, 1.0), std::invalid_argument);
}

TEST_CASE("forward noise") {
  NoiseSchedule s{2, {0.0, 0.75, 0.0}, {1.0, 0.25, 0.25}};
  const auto x = forward_noise(Point{1.0, 0.0}, 1, Point{0.0, 1.0}, s);
  CHECK(x[0] == doctest::Approx(0.5));
  CHECK(x[1] == doctest::Approx(std::sqrt(0.75)));
  CHECK(x[1] == doctest::Approx(0.8660).epsilon(1e-4));

  NoiseSchedule id{1, {0.0, 0.0}, {1.0, 1.0}};
  CHECK(forward_noise(Point{0.3, -0.2}, 1, Point{0.0, 0.0}, id) == Point{0.3, -0.2});

  const auto d = build_schedule(20, 1e-4, 0.2);
  const auto z = forward_noise(Point{0.0, 0.0}, 7, Point{1.0, -2.0}, d);
  CHECK(z[0] == doctest::Approx(std::sqrt(1 - d.alpha_bar[7])));
  CHECK(z[1] == doctest::Approx(-2 * std::sqrt(1 - d.alpha_bar[7])));
}

namespace {

// Network whose output is exactly the bias of the last layer plus a
// condition-dependent shift routed through the embedding table.
DenoiserParams hand_set_network() {
  NetworkArch a;
  a.hidden_dims = {1};
  a.cond_count = 1;
  a.t_embed_dim = 2;
  a.c_embed_dim = 1;
  auto p = zero_params(a);
  // embeddings: row 0 (condition 0) = 1, row 1 (null) = 0
  p.values[0] = 1.0;
  p.values[1] = 0.0;
  // hidden layer: in = 2 + 2 + 1 = 5; weight on the embedding input = 1
  const std::size_t hw = 2;
  p.values[hw + 4] = 1.0;
  // output layer W (2x1) then b; silu(1) routes a constant through row 0
  const std::size_t ow = hw + 5 + 1;
  const double s1 = 1.0 / (1.0 + std::exp(-1.0));
  p.values[ow + 0] = 1.0 / s1;
  return p;
}

}  // namespace

TEST_CASE("classifier-free guidance interpolates") {
  const auto p = hand_set_network();
  const Point x{0.2, 0.1};
  const auto ec = forward(p, x, 3, Condition{0});
  const auto eu = forward(p, x, 3, Condition::null());
  CHECK(ec[0] == doctest::Approx(1.0));
  CHECK(ec[1] == doctest::Approx(0.0));
  CHECK(eu == Point{0.0, 0.0});

  const auto g5 = guided_eps(p, x, 3, Condition{0}, SamplerConfig{1.0, 5.0});
  CHECK(g5[0] == doctest::Approx(5.0));
  CHECK(g5[1] == doctest::Approx(0.0));
  CHECK(guided_eps(p, x, 3, Condition{0}, SamplerConfig{1.0, 1.0}) == ec);
  CHECK(guided_eps(p, x, 3, Condition{0}, SamplerConfig{1.0, 0.0}) == eu);
  CHECK_THROWS_AS(guided_eps(p, x, 3, Condition::null(), SamplerConfig{}), std::invalid_argument);
}

TEST_CASE("ddim sigma") {
  const auto s = build_schedule(20, 1e-4, 0.2);
  for (int t = 1; t <= 20; ++t) CHECK(ddim_sigma(t, s, 0.0) == 0.0);

  const double a10 = s.alpha_bar[10], a9 = s.alpha_bar[9];
  const double want = std::sqrt((1 - a9) / (1 - a10)) * std::sqrt(1 - a10 / a9);
  CHECK(ddim_sigma(10, s, 1.0) == doctest::Approx(want).epsilon(1e-14));
  CHECK(ddim_sigma(1, s, 1.0) == 0.0);
}

TEST_CASE("ddim policy agrees with the x0-hat formulation") {
  const auto s = build_schedule(20, 1e-4, 0.2);
  const auto ab = ref::alpha_bars(20, 1e-4, 0.2);
  Rng rng(2);
  for (int t = 1; t <= 20; ++t) {
    const Point xt{rng.normal(), rng.normal()}, eps{rng.normal(), rng.normal()};
    for (double eta : {0.0, 0.5, 1.0}) {
      const auto got = ddim_policy(xt, eps, t, s, SamplerConfig{eta, 5.0}, kTrainSigmaFloor);
      const auto want = ref::ddim(xt, eps, t, ab, eta, kTrainSigmaFloor);
      CHECK(got.sigma == doctest::Approx(want.sigma).epsilon(1e-12));
      CHECK(got.mu[0] == doctest::Approx(want.mu[0]).epsilon(1e-12));
      CHECK(got.mu[1] == doctest::Approx(want.mu[1]).epsilon(1e-12));
      CHECK(got.t == t);
    }
  }
}

TEST_CASE("mean is continuous with x_t when x0-hat equals x_t") {
  // abar_t = abar_{t-1} = 1 and eps = 0: x0-hat = x_t, mu = x_t.
  NoiseSchedule s{2, {0.0, 0.0, 0.0}, {1.0, 1.0 - 1e-15, 1.0 - 1e-15}};
  const auto p = ddim_policy(Point{0.7, -0.4}, Point{0.0, 0.0}, 2, s, SamplerConfig{0.0, 1.0});
  CHECK(p.mu[0] == doctest::Approx(0.7));
  CHECK(p.mu[1] == doctest::Approx(-0.4));
}

TEST_CASE("step is affine in the noise") {
  GaussianPolicyStep p{{0.0, 0.0}, 2.0, 1};
  CHECK(step(p, Point{1.0, -1.0}) == Point{2.0, -2.0});
  CHECK(step(p, Point{1.0, -1.0}) == step(p, Point{1.0, -1.0}));
  GaussianPolicyStep d{{0.3, 0.4}, 0.0, 1};
  CHECK(step(d, Point{5.0, 5.0}) == Point{0.3, 0.4});
}

TEST_CASE("log density closed forms") {
  GaussianPolicyStep p{{0.5, -1.0}, 1.0, 1};
  CHECK(log_prob(Point{0.5, -1.0}, p) == doctest::Approx(-std::log(2 * std::numbers::pi)));
  CHECK(log_prob(Point{0.5, -1.0}, p) == doctest::Approx(-1.837877).epsilon(1e-6));

  GaussianPolicyStep shifted{{3.5, 2.0}, 1.0, 1};
  CHECK(log_prob(Point{3.8, 1.1}, shifted) == doctest::Approx(log_prob(Point{0.8, -1.9}, p)));

  GaussianPolicyStep wide{{0.5, -1.0}, 2.0, 1};
  CHECK(log_prob(Point{0.5, -1.0}, p) - log_prob(Point{0.5, -1.0}, wide) ==
        doctest::Approx(2 * std::log(2.0)));

  GaussianPolicyStep zero{{0.0, 0.0}, 0.0, 1};
  CHECK_THROWS_AS(log_prob(Point{0.0, 0.0}, zero), std::domain_error);
}

TEST_CASE("1-D density integrates to one") {
  GaussianPolicyStep p{{0.3}, 0.7, 1};
  const double lo = -8.0, hi = 8.0;
  const int n = 20000;
  const double h = (hi - lo) / n;
  double total = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    total += w * std::exp(log_prob(Point{lo + i * h}, p));
  }
  CHECK(std::abs(total * h - 1.0) < 1e-3);
}

TEST_CASE("step samples have the policy's moments") {
  GaussianPolicyStep p{{1.0, -2.0}, 0.5, 1};
  Rng rng(9);
  const int n = 40000;
  double m = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto x = step(p, Point{rng.normal(), rng.normal()});
    m += x[0];
    sq += (x[0] - 1.0) * (x[0] - 1.0);
  }
  CHECK(m / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(sq / n == doctest::Approx(0.25).epsilon(0.03));
}

TEST_CASE("log-prob gradient through guidance and DDIM matches finite differences") {
  const auto arch = fx::small_arch();
  const auto sched = build_schedule(20, 1e-4, 0.2);
  const auto ab = ref::alpha_bars(20, 1e-4, 0.2);
  const SamplerConfig cfg{1.0, 5.0};
  Rng rng(21);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = fx::random_params(arch, 300 + s);
    const int t = 1 + static_cast<int>(rng.index(20));
    const int c = static_cast<int>(rng.index(4));
    const Point xt{rng.normal(), rng.normal()};

    GuidedCache cache;
    const auto pol = policy_at(p, xt, t, Condition{c}, sched, cfg, kTrainSigmaFloor, cache);
    const Point x_prev{pol.mu[0] + pol.sigma * rng.normal(), pol.mu[1] + pol.sigma * rng.normal()};

    // d log p / d mu = (x - mu) / sigma^2; sigma does not depend on theta.
    const double iv = 1.0 / (pol.sigma * pol.sigma);
    const Point up{(x_prev[0] - pol.mu[0]) * iv, (x_prev[1] - pol.mu[1]) * iv};
    std::vector<double> g(p.size(), 0.0);
    accumulate_mean_vjp(p, cache, t, sched, cfg, up, 1.0, g);

    auto f = [&](const std::vector<double>& th) {
      return ref::log_density(x_prev, ref::guided_policy(th, arch, xt, t, c, ab, 1.0, 5.0, kTrainSigmaFloor));
    };
    CHECK(ref::max_rel_error(g, ref::fd_gradient(f, p.values)) < 1e-4);
  }
}
