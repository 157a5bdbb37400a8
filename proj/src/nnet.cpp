#include "b2diff/nnet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "b2diff/rng.hpp"

namespace b2diff {

namespace {

double silu(double z) { return z / (1.0 + std::exp(-z)); }

double silu_grad(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

std::size_t layer_count(const NetworkArch& arch) { return arch.hidden_dims.size() + 1; }

std::size_t layer_in(const NetworkArch& arch, std::size_t l) {
  return l == 0 ? arch.feature_dim() : arch.hidden_dims[l - 1];
}

std::size_t layer_out(const NetworkArch& arch, std::size_t l) {
  return l < arch.hidden_dims.size() ? arch.hidden_dims[l] : arch.output_dim();
}

std::size_t embedding_size(const NetworkArch& arch) {
  return (arch.cond_count + 1) * arch.c_embed_dim;
}

// Offset of layer l's weight block; its bias follows immediately.
std::size_t layer_offset(const NetworkArch& arch, std::size_t l) {
  std::size_t off = embedding_size(arch);
  for (std::size_t k = 0; k < l; ++k) off += layer_out(arch, k) * (layer_in(arch, k) + 1);
  return off;
}

std::size_t embedding_row(const NetworkArch& arch, Condition c) {
  if (c.is_null()) return arch.cond_count;
  if (c.id < 0 || static_cast<std::size_t>(c.id) >= arch.cond_count) {
    throw std::invalid_argument("unknown condition id " + std::to_string(c.id));
  }
  return static_cast<std::size_t>(c.id);
}

}  // namespace

void NetworkArch::validate() const {
  if (input_dim == 0 || cond_count == 0 || t_embed_dim == 0 || c_embed_dim == 0) {
    throw std::invalid_argument("network dimensions must be >= 1");
  }
  if (hidden_dims.empty()) throw std::invalid_argument("network needs at least one hidden layer");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("hidden layer width must be >= 1");
  }
}

std::size_t NetworkArch::parameter_count() const {
  return layer_offset(*this, layer_count(*this));
}

bool DenoiserParams::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

DenoiserParams init_params(const NetworkArch& arch, std::uint64_t seed) {
  arch.validate();
  DenoiserParams p{arch, std::vector<double>(arch.parameter_count(), 0.0)};
  Rng rng = substream(seed, {stream::kInit});
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t i = 0; i < embedding_size(arch); ++i) p.values[i] = unit(rng);
  for (std::size_t l = 0; l < layer_count(arch); ++l) {
    const std::size_t in = layer_in(arch, l);
    const std::size_t out = layer_out(arch, l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const std::size_t off = layer_offset(arch, l);
    for (std::size_t i = 0; i < in * out; ++i) p.values[off + i] = bound * unit(rng);
  }
  return p;
}

DenoiserParams zero_params(const NetworkArch& arch) {
  arch.validate();
  return DenoiserParams{arch, std::vector<double>(arch.parameter_count(), 0.0)};
}

void timestep_embedding(int t, std::span<double> out) {
  const double dim = static_cast<double>(out.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double k = static_cast<double>(j / 2);
    const double freq = std::pow(10000.0, -2.0 * k / dim);
    out[j] = (j % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
  }
}

std::span<const double> forward(const DenoiserParams& params, std::span<const double> x, int t,
                                Condition c, ForwardCache& cache) {
  const NetworkArch& arch = params.arch;
  if (x.size() != arch.input_dim) throw std::invalid_argument("input has wrong dimension");
  if (t < 1) throw std::invalid_argument("timestep must be >= 1");
  const std::size_t row = embedding_row(arch, c);

  cache.condition = c;
  cache.features.resize(arch.feature_dim());
  std::copy(x.begin(), x.end(), cache.features.begin());
  timestep_embedding(t, std::span<double>(cache.features).subspan(arch.input_dim, arch.t_embed_dim));
  const double* emb = params.values.data() + row * arch.c_embed_dim;
  std::copy(emb, emb + arch.c_embed_dim,
            cache.features.begin() + static_cast<std::ptrdiff_t>(arch.input_dim + arch.t_embed_dim));

  const std::size_t hidden = arch.hidden_dims.size();
  cache.pre.resize(hidden);
  cache.post.resize(hidden);
  const std::vector<double>* input = &cache.features;
  for (std::size_t l = 0; l <= hidden; ++l) {
    const std::size_t in = layer_in(arch, l);
    const std::size_t out = layer_out(arch, l);
    const double* w = params.values.data() + layer_offset(arch, l);
    const double* b = w + in * out;
    std::vector<double>& z = (l < hidden) ? cache.pre[l] : cache.output;
    z.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      const double* wr = w + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * (*input)[i];
      z[o] = acc;
    }
    if (l < hidden) {
      cache.post[l].resize(out);
      for (std::size_t o = 0; o < out; ++o) cache.post[l][o] = silu(z[o]);
      input = &cache.post[l];
    }
  }
  return cache.output;
}

Point forward(const DenoiserParams& params, std::span<const double> x, int t, Condition c) {
  ForwardCache cache;
  auto out = forward(params, x, t, c, cache);
  return Point(out.begin(), out.end());
}

void accumulate_backward(const DenoiserParams& params, const ForwardCache& cache,
                         std::span<const double> upstream, double scale,
                         std::span<double> param_grad, std::span<double> input_grad) {
  const NetworkArch& arch = params.arch;
  if (upstream.size() != arch.output_dim()) {
    throw std::invalid_argument("upstream gradient has wrong dimension");
  }
  if (param_grad.size() != params.size()) {
    throw std::invalid_argument("parameter gradient buffer has wrong size");
  }
  if (!input_grad.empty() && input_grad.size() != arch.input_dim) {
    throw std::invalid_argument("input gradient buffer has wrong size");
  }

  const std::size_t hidden = arch.hidden_dims.size();
  std::vector<double> delta(upstream.begin(), upstream.end());
  for (double& d : delta) d *= scale;
  std::vector<double> next;

  for (std::size_t l = hidden + 1; l-- > 0;) {
    const std::size_t in = layer_in(arch, l);
    const std::size_t out = layer_out(arch, l);
    const std::size_t off = layer_offset(arch, l);
    const double* w = params.values.data() + off;
    double* gw = param_grad.data() + off;
    double* gb = gw + in * out;
    const std::vector<double>& input = (l == 0) ? cache.features : cache.post[l - 1];

    next.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      const double* wr = w + o * in;
      double* gr = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        gr[i] += d * input[i];
        next[i] += d * wr[i];
      }
    }
    if (l > 0) {
      const std::vector<double>& z = cache.pre[l - 1];
      for (std::size_t i = 0; i < in; ++i) next[i] *= silu_grad(z[i]);
    }
    delta.swap(next);
  }

  // delta now holds d/d(features).
  const std::size_t row = embedding_row(arch, cache.condition);
  double* gemb = param_grad.data() + row * arch.c_embed_dim;
  const std::size_t emb_begin = arch.input_dim + arch.t_embed_dim;
  for (std::size_t j = 0; j < arch.c_embed_dim; ++j) gemb[j] += delta[emb_begin + j];
  if (!input_grad.empty()) {
    for (std::size_t i = 0; i < arch.input_dim; ++i) input_grad[i] = delta[i];
  }
}

NetworkGradients backward(const DenoiserParams& params, std::span<const double> x, int t,
                          Condition c, std::span<const double> upstream) {
  ForwardCache cache;
  forward(params, x, t, c, cache);
  NetworkGradients g{std::vector<double>(params.size(), 0.0), Point(params.arch.input_dim, 0.0)};
  accumulate_backward(params, cache, upstream, 1.0, g.params, g.input);
  return g;
}

}  // namespace b2diff
