#pragma once

#include <cstdint>
#include <vector>

#include "b2diff/branch_sampler.hpp"
#include "b2diff/diffusion.hpp"
#include "b2diff/nnet.hpp"
#include "b2diff/rng.hpp"

namespace fx {

/// 1-D network small enough for exhaustive finite differences.
inline b2diff::NetworkArch tiny_arch() {
  b2diff::NetworkArch a;
  a.input_dim = 1;
  a.hidden_dims = {4};
  a.cond_count = 2;
  a.t_embed_dim = 2;
  a.c_embed_dim = 2;
  return a;
}

inline b2diff::NetworkArch small_arch() {
  b2diff::NetworkArch a;
  a.hidden_dims = {8, 8};
  a.cond_count = 4;
  a.t_embed_dim = 4;
  a.c_embed_dim = 3;
  return a;
}

/// Parameters with non-zero biases so every path carries gradient.
inline b2diff::DenoiserParams random_params(const b2diff::NetworkArch& arch, std::uint64_t seed,
                                            double spread = 0.8) {
  auto p = b2diff::init_params(arch, seed);
  b2diff::Rng rng(seed ^ 0xabcdefULL);
  for (auto& v : p.values) v += spread * (rng.uniform() - 0.5);
  return p;
}

inline std::vector<b2diff::Condition> conditions(std::size_t n) {
  std::vector<b2diff::Condition> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(b2diff::Condition{static_cast<int>(i)});
  return c;
}

}  // namespace fx
