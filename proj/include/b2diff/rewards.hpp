#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "b2diff/branch_sampler.hpp"
#include "b2diff/parallel.hpp"
#include "b2diff/types.hpp"

namespace b2diff {

struct Mode {
  Point center;
  double scale = 1.0;
};

/// Toy stand-in for prompts and images: a Gaussian mixture where each
/// condition names a target mode.
struct ToyWorld {
  std::vector<Mode> modes;
  std::vector<std::size_t> condition_map;  // condition id -> mode index
  std::vector<std::string> condition_labels;

  void validate() const;
  std::size_t condition_count() const { return condition_map.size(); }
  std::size_t dim() const { return modes.front().center.size(); }
  const Mode& target(Condition c) const;
  std::string label(Condition c) const;
  std::vector<Condition> conditions() const;

  /// `count` modes evenly spaced on a circle, condition i -> mode i.
  static ToyWorld ring(std::size_t count, double radius, double scale);
};

/// exp(-|x0 - center(c)|^2 / (2 scale^2)), in (0, 1].
double toy_reward(std::span<const double> x0, Condition c, const ToyWorld& world);

/// Scoring failure the caller may retry (network, malformed reply, count
/// mismatch). A round that sees one is aborted before any state changes.
class RewardProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scores final samples of one condition, order-preserving.
class RewardProvider {
 public:
  virtual ~RewardProvider() = default;
  virtual std::vector<double> score(Condition c, std::span<const Point> samples) = 0;
};

class ToyRewardProvider final : public RewardProvider {
 public:
  explicit ToyRewardProvider(ToyWorld world, ExecPolicy policy = ExecPolicy::Parallel)
      : world_(std::move(world)), policy_(policy) {}
  std::vector<double> score(Condition c, std::span<const Point> samples) override;
  const ToyWorld& world() const { return world_; }

 private:
  ToyWorld world_;
  ExecPolicy policy_;
};

struct RemoteScorerConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8000 or http://host:port/score
  int timeout_ms = 10000;
  int retries = 2;
};

/// POST {"condition": label, "samples": [[x, y], ...]} and expect
/// {"scores": [...]} of matching length.
std::vector<double> remote_score(const RemoteScorerConfig& cfg, const std::string& condition_label,
                                 std::span<const Point> samples);

class RemoteRewardProvider final : public RewardProvider {
 public:
  RemoteRewardProvider(RemoteScorerConfig cfg, ToyWorld world)
      : cfg_(std::move(cfg)), world_(std::move(world)) {}
  std::vector<double> score(Condition c, std::span<const Point> samples) override;

 private:
  RemoteScorerConfig cfg_;
  ToyWorld world_;
};

enum class NormalizeBy { Variance, StdDev };

struct NormalizerConfig {
  std::size_t window = 8;  // rounds, current round included
  double variance_floor = 1e-6;
  NormalizeBy divide_by = NormalizeBy::Variance;
};

struct WindowStats {
  double mean = 0.0;
  double variance = 0.0;  // population
  std::size_t count = 0;
};

/// Per-condition ring buffers of raw scores tagged by round.
class NormalizerState {
 public:
  struct Entry {
    std::uint64_t round;
    double score;
  };

  explicit NormalizerState(NormalizerConfig cfg = {}) : cfg_(cfg) {}

  /// Drops entries older than the window ending at `round`.
  void evict(std::uint64_t round);
  void record(Condition c, std::uint64_t round, std::span<const double> scores);
  WindowStats stats(Condition c) const;
  /// (raw - mean) / max(variance, floor), or the std-dev variant.
  double normalize(Condition c, double raw) const;

  const NormalizerConfig& config() const { return cfg_; }
  const std::map<int, std::deque<Entry>>& buffers() const { return buffers_; }
  std::map<int, std::deque<Entry>>& buffers() { return buffers_; }

 private:
  NormalizerConfig cfg_;
  std::map<int, std::deque<Entry>> buffers_;
};

struct ConditionScores {
  Condition condition;
  std::vector<double> scores;
};

/// Records the round's scores, evicts stale rounds, and returns r-hat for
/// every input score (same grouping and order).
std::vector<std::vector<double>> update_and_normalize(NormalizerState& state, std::uint64_t round,
                                                      std::span<const ConditionScores> groups);

struct ContrastivePair {
  Trajectory pos;
  Trajectory neg;
  std::size_t pos_index = 0;
  std::size_t neg_index = 0;
};

struct SimpleSample {
  Trajectory traj;
  std::size_t index = 0;
};

using TrainingSample = std::variant<ContrastivePair, SimpleSample>;

/// Contrastive pair (argmax, argmin r-hat) when the branch holds both a
/// positive and a negative trajectory with |r-hat| >= threshold; otherwise
/// the max-|r-hat| trajectory. Sub-threshold trajectories are sign-neutral.
/// Ties go to the lowest index. Throws on an empty or unscored branch.
TrainingSample select_training_samples(const Branch& branch, double threshold);

}  // namespace b2diff
