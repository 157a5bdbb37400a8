#pragma once

// Straight-line reference evaluators for tests. Deliberately written
// without reusing library code paths: parameters are consumed with a
// moving cursor, the schedule product is recomputed from scratch, and the
// DDIM mean is evaluated through x0-hat.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "b2diff/nnet.hpp"

namespace ref {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline std::vector<double> forward(const std::vector<double>& theta, const b2diff::NetworkArch& arch,
                                   const std::vector<double>& x, int t, int cond /* -1 = null */) {
  std::size_t cursor = 0;
  const std::size_t rows = arch.cond_count + 1;
  std::vector<std::vector<double>> table(rows, std::vector<double>(arch.c_embed_dim));
  for (auto& row : table)
    for (auto& v : row) v = theta[cursor++];

  std::vector<double> h = x;
  for (std::size_t j = 0; j < arch.t_embed_dim; ++j) {
    const double expo = -2.0 * static_cast<double>(j / 2) / static_cast<double>(arch.t_embed_dim);
    const double w = std::pow(10000.0, expo);
    h.push_back(j % 2 ? std::cos(w * t) : std::sin(w * t));
  }
  const auto& e = table[cond < 0 ? arch.cond_count : static_cast<std::size_t>(cond)];
  h.insert(h.end(), e.begin(), e.end());

  std::vector<std::size_t> widths = arch.hidden_dims;
  widths.push_back(arch.input_dim);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::size_t in = h.size(), out = widths[l];
    std::vector<std::vector<double>> W(out, std::vector<double>(in));
    for (auto& r : W)
      for (auto& v : r) v = theta[cursor++];
    std::vector<double> next(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += W[o][i] * h[i];
      next[o] = s + theta[cursor++];
    }
    if (l + 1 < widths.size())
      for (auto& v : next) v = v * sigmoid(v);
    h = next;
  }
  return h;
}

inline std::vector<double> alpha_bars(int T, double b0, double b1) {
  std::vector<double> ab{1.0};
  for (int t = 1; t <= T; ++t) {
    double prod = 1.0;
    for (int s = 1; s <= t; ++s) prod *= 1.0 - (b0 + (b1 - b0) * (s - 1) / double(T - 1));
    ab.push_back(prod);
  }
  return ab;
}

struct Policy {
  std::vector<double> mu;
  double sigma;
};

inline Policy ddim(const std::vector<double>& xt, const std::vector<double>& eps, int t,
                   const std::vector<double>& ab, double eta, double floor) {
  const double a_t = ab[t], a_p = ab[t - 1];
  const double var = (1 - a_p) / (1 - a_t) * (1 - a_t / a_p);
  const double sigma = eta * std::sqrt(std::max(0.0, var));
  Policy p{{}, std::max(sigma, floor)};
  for (std::size_t i = 0; i < xt.size(); ++i) {
    const double x0 = (xt[i] - std::sqrt(1 - a_t) * eps[i]) / std::sqrt(a_t);
    p.mu.push_back(std::sqrt(a_p) * x0 + std::sqrt(std::max(0.0, 1 - a_p - sigma * sigma)) * eps[i]);
  }
  return p;
}

inline double log_density(const std::vector<double>& x, const Policy& p) {
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) q += (x[i] - p.mu[i]) * (x[i] - p.mu[i]);
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2 * std::numbers::pi * p.sigma * p.sigma) - q / (2 * p.sigma * p.sigma);
}

inline Policy guided_policy(const std::vector<double>& theta, const b2diff::NetworkArch& arch,
                            const std::vector<double>& xt, int t, int cond, const std::vector<double>& ab,
                            double eta, double guidance, double floor) {
  const auto ec = forward(theta, arch, xt, t, cond);
  const auto eu = forward(theta, arch, xt, t, -1);
  std::vector<double> eps(ec.size());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = eu[i] + guidance * (ec[i] - eu[i]);
  return ddim(xt, eps, t, ab, eta, floor);
}

/// Central differences of f at theta, step h.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> theta, double h = 1e-5) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double up = f(theta);
    theta[i] = keep - h;
    const double down = f(theta);
    theta[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Max elementwise relative error, with entries below `floor` times the
/// gradient's infinity norm compared on that absolute scale.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double scale = 0.0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor * scale, 1e-300});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace ref
