#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace b2diff {

/// SplitMix64 generator. Satisfies UniformRandomBitGenerator so it plugs
/// into <random> distributions; small state makes per-step streams cheap.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double normal() { return std::normal_distribution<double>{}(*this); }
  double uniform() { return std::uniform_real_distribution<double>{}(*this); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>{0, n - 1}(*this);
  }

 private:
  std::uint64_t state_;
};

/// Mix a key path into a single seed. Every substream (round, branch,
/// trajectory, timestep, ...) is addressed by its key, so draws never
/// depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = master ^ 0x6A09E667F3BCC909ULL;
  for (std::uint64_t k : keys) {
    Rng mix(h ^ (k + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2)));
    h = mix();
  }
  return h;
}

inline Rng substream(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  return Rng(derive_seed(master, keys));
}

// Stream tags keep key paths for different purposes disjoint.
namespace stream {
inline constexpr std::uint64_t kTrunk = 0x7472756eULL;
inline constexpr std::uint64_t kFork = 0x666f726bULL;
inline constexpr std::uint64_t kCondition = 0x636f6e64ULL;
inline constexpr std::uint64_t kShuffle = 0x73687566ULL;
inline constexpr std::uint64_t kPretrain = 0x70726574ULL;
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kEval = 0x6576616cULL;
inline constexpr std::uint64_t kRound = 0x726f756eULL;
}  // namespace stream

}  // namespace b2diff
