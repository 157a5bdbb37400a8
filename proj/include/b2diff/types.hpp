#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace b2diff {

/// A point in the sample domain. Two entries for the toy world, one for
/// the gradient-oracle problems.
using Point = std::vector<double>;

/// Discrete condition id. `Condition::null()` is the unconditional token
/// used by classifier-free guidance.
struct Condition {
  int id = kNullId;

  static constexpr int kNullId = -1;
  static constexpr Condition null() { return Condition{kNullId}; }
  constexpr bool is_null() const { return id == kNullId; }

  friend constexpr bool operator==(Condition, Condition) = default;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace b2diff
