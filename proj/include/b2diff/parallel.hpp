#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace b2diff {

/// Execution policy for the data-parallel kernels. `Serial` is the
/// reference path; `Parallel` runs the same loop body under OpenMP and
/// must produce bit-identical results.
enum class ExecPolicy { Serial, Parallel };

/// Runs body(i) for i in [0, n). Iterations must be independent.
template <typename Body>
void parallel_for(ExecPolicy policy, std::size_t n, Body&& body) {
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic) if (policy == ExecPolicy::Parallel && count > 1)
  for (long long i = 0; i < count; ++i) {
    body(static_cast<std::size_t>(i));
  }
}

/// Sum of per-item contributions into `out` (length dim). Items are
/// partitioned into `chunks` fixed contiguous ranges independent of the
/// thread count; each chunk accumulates serially and chunk partials are
/// added in chunk order, so the result does not depend on scheduling.
/// body(item, acc) must add item's contribution into acc.
template <typename Body>
void parallel_accumulate(ExecPolicy policy, std::size_t items, std::size_t chunks,
                         std::span<double> out, Body&& body) {
  std::fill(out.begin(), out.end(), 0.0);
  if (items == 0) return;
  chunks = std::clamp<std::size_t>(chunks, 1, items);
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(out.size(), 0.0));
  parallel_for(policy, chunks, [&](std::size_t c) {
    const std::size_t begin = c * items / chunks;
    const std::size_t end = (c + 1) * items / chunks;
    for (std::size_t i = begin; i < end; ++i) body(i, std::span<double>(partial[c]));
  });
  for (const auto& p : partial) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += p[k];
  }
}

}  // namespace b2diff
