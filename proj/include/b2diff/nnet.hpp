#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "b2diff/types.hpp"

namespace b2diff {

/// Shape of the epsilon-prediction MLP. The network input is the
/// concatenation [x, sinusoidal(t), embedding(c)]; hidden layers use SiLU;
/// the output has the shape of x.
struct NetworkArch {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims{64, 64, 64};
  std::size_t cond_count = 8;  // real conditions; the table has one extra NULL row
  std::size_t t_embed_dim = 16;
  std::size_t c_embed_dim = 8;

  /// Throws std::invalid_argument when any dimension is zero.
  void validate() const;
  std::size_t parameter_count() const;
  std::size_t feature_dim() const { return input_dim + t_embed_dim + c_embed_dim; }
  std::size_t output_dim() const { return input_dim; }

  friend bool operator==(const NetworkArch&, const NetworkArch&) = default;
};

/// Flat parameter vector. Layout: condition embedding table
/// [(cond_count + 1) x c_embed_dim], then for each layer W (row-major,
/// out x in) followed by b.
struct DenoiserParams {
  NetworkArch arch;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool all_finite() const;
};

/// Deep copy of the parameters at round start (theta_old). Read-only.
class FrozenPolicySnapshot {
 public:
  explicit FrozenPolicySnapshot(const DenoiserParams& live) : params_(live) {}
  const DenoiserParams& params() const { return params_; }

 private:
  DenoiserParams params_;
};

DenoiserParams init_params(const NetworkArch& arch, std::uint64_t seed);
DenoiserParams zero_params(const NetworkArch& arch);

/// Sinusoidal timestep features, entry j = sin/cos(t * 10000^(-2*(j/2)/dim)).
void timestep_embedding(int t, std::span<double> out);

/// Intermediate values of one forward pass, kept for the backward pass.
/// Reusable across calls to avoid reallocation.
struct ForwardCache {
  std::vector<double> features;
  std::vector<std::vector<double>> pre;   // per hidden layer, pre-activation
  std::vector<std::vector<double>> post;  // per hidden layer, SiLU output
  std::vector<double> output;
  Condition condition;
};

/// eps prediction. Throws std::invalid_argument on an unknown condition,
/// t < 1, or an input of the wrong dimension.
Point forward(const DenoiserParams& params, std::span<const double> x, int t, Condition c);
std::span<const double> forward(const DenoiserParams& params, std::span<const double> x, int t,
                                Condition c, ForwardCache& cache);

struct NetworkGradients {
  std::vector<double> params;
  Point input;
};

/// Vector-Jacobian product of forward() with `upstream`.
NetworkGradients backward(const DenoiserParams& params, std::span<const double> x, int t,
                          Condition c, std::span<const double> upstream);

/// Accumulating VJP from a filled cache: param_grad += scale * J^T upstream.
/// `input_grad`, when non-empty, receives (not accumulates) the x-gradient.
void accumulate_backward(const DenoiserParams& params, const ForwardCache& cache,
                         std::span<const double> upstream, double scale,
                         std::span<double> param_grad, std::span<double> input_grad = {});

}  // namespace b2diff
