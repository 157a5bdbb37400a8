#include "b2diff/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <httplib.h>
#include <json.hpp>

namespace b2diff {

void ToyWorld::validate() const {
  if (modes.size() < 2) throw std::invalid_argument("toy world needs at least two modes");
  const std::size_t d = modes.front().center.size();
  if (d == 0) throw std::invalid_argument("mode centers must be non-empty");
  for (const Mode& m : modes) {
    if (m.center.size() != d) throw std::invalid_argument("mode centers differ in dimension");
    if (!(m.scale > 0.0)) throw std::invalid_argument("mode scale must be positive");
  }
  if (condition_map.empty()) throw std::invalid_argument("toy world needs at least one condition");
  for (std::size_t m : condition_map) {
    if (m >= modes.size()) throw std::invalid_argument("condition maps to a missing mode");
  }
  if (!condition_labels.empty() && condition_labels.size() != condition_map.size()) {
    throw std::invalid_argument("condition label count does not match condition count");
  }
}

const Mode& ToyWorld::target(Condition c) const {
  if (c.id < 0 || static_cast<std::size_t>(c.id) >= condition_map.size()) {
    throw std::invalid_argument("unknown condition id " + std::to_string(c.id));
  }
  return modes[condition_map[static_cast<std::size_t>(c.id)]];
}

std::string ToyWorld::label(Condition c) const {
  target(c);
  if (!condition_labels.empty()) return condition_labels[static_cast<std::size_t>(c.id)];
  return "c" + std::to_string(c.id);
}

std::vector<Condition> ToyWorld::conditions() const {
  std::vector<Condition> out;
  for (std::size_t i = 0; i < condition_map.size(); ++i) out.push_back(Condition{static_cast<int>(i)});
  return out;
}

ToyWorld ToyWorld::ring(std::size_t count, double radius, double scale) {
  ToyWorld w;
  for (std::size_t i = 0; i < count; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count);
    w.modes.push_back(Mode{{radius * std::cos(a), radius * std::sin(a)}, scale});
    w.condition_map.push_back(i);
  }
  return w;
}

double toy_reward(std::span<const double> x0, Condition c, const ToyWorld& world) {
  const Mode& m = world.target(c);
  return std::exp(-squared_distance(x0, m.center) / (2.0 * m.scale * m.scale));
}

std::vector<double> ToyRewardProvider::score(Condition c, std::span<const Point> samples) {
  std::vector<double> out(samples.size());
  parallel_for(policy_, samples.size(), [&](std::size_t i) { out[i] = toy_reward(samples[i], c, world_); });
  return out;
}

namespace {

struct ParsedEndpoint {
  std::string base;
  std::string path;
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const auto scheme = endpoint.find("://");
  const auto host_start = (scheme == std::string::npos) ? 0 : scheme + 3;
  const auto slash = endpoint.find('/', host_start);
  if (slash == std::string::npos) return {endpoint, "/score"};
  std::string path = endpoint.substr(slash);
  if (path == "/") path = "/score";
  return {endpoint.substr(0, slash), path};
}

std::vector<double> remote_score_once(const RemoteScorerConfig& cfg, const std::string& body,
                                      std::size_t expected) {
  const ParsedEndpoint ep = parse_endpoint(cfg.endpoint);
  httplib::Client client(ep.base);
  const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  auto res = client.Post(ep.path, body, "application/json");
  if (!res) {
    throw RewardProviderError("scorer request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw RewardProviderError("scorer returned HTTP " + std::to_string(res->status));
  }
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw RewardProviderError(std::string("malformed scorer reply: ") + e.what());
  }
  if (!reply.is_object() || !reply.contains("scores") || !reply["scores"].is_array()) {
    throw RewardProviderError("scorer reply lacks a \"scores\" array");
  }
  const auto& arr = reply["scores"];
  if (arr.size() != expected) {
    throw RewardProviderError("scorer returned " + std::to_string(arr.size()) + " scores for " +
                              std::to_string(expected) + " samples");
  }
  std::vector<double> scores;
  scores.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw RewardProviderError("non-numeric score in scorer reply");
    scores.push_back(v.get<double>());
  }
  return scores;
}

}  // namespace

std::vector<double> remote_score(const RemoteScorerConfig& cfg, const std::string& condition_label,
                                 std::span<const Point> samples) {
  nlohmann::json req;
  req["condition"] = condition_label;
  req["samples"] = nlohmann::json::array();
  for (const Point& p : samples) req["samples"].push_back(p);
  const std::string body = req.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= std::max(cfg.retries, 0); ++attempt) {
    try {
      return remote_score_once(cfg, body, samples.size());
    } catch (const RewardProviderError& e) {
      last_error = e.what();
    }
  }
  throw RewardProviderError(last_error);
}

std::vector<double> RemoteRewardProvider::score(Condition c, std::span<const Point> samples) {
  return remote_score(cfg_, world_.label(c), samples);
}

void NormalizerState::evict(std::uint64_t round) {
  const std::uint64_t oldest = (round + 1 >= cfg_.window) ? round + 1 - cfg_.window : 0;
  for (auto& [cond, buf] : buffers_) {
    while (!buf.empty() && buf.front().round < oldest) buf.pop_front();
  }
}

void NormalizerState::record(Condition c, std::uint64_t round, std::span<const double> scores) {
  auto& buf = buffers_[c.id];
  for (double s : scores) buf.push_back(Entry{round, s});
}

WindowStats NormalizerState::stats(Condition c) const {
  WindowStats st;
  const auto it = buffers_.find(c.id);
  if (it == buffers_.end() || it->second.empty()) return st;
  const auto& buf = it->second;
  st.count = buf.size();
  for (const Entry& e : buf) st.mean += e.score;
  st.mean /= static_cast<double>(st.count);
  for (const Entry& e : buf) st.variance += (e.score - st.mean) * (e.score - st.mean);
  st.variance /= static_cast<double>(st.count);
  return st;
}

double NormalizerState::normalize(Condition c, double raw) const {
  const WindowStats st = stats(c);
  if (st.count <= 1) return 0.0;
  const double var = std::max(st.variance, cfg_.variance_floor);
  const double denom = (cfg_.divide_by == NormalizeBy::Variance) ? var : std::sqrt(var);
  return (raw - st.mean) / denom;
}

std::vector<std::vector<double>> update_and_normalize(NormalizerState& state, std::uint64_t round,
                                                      std::span<const ConditionScores> groups) {
  for (const auto& g : groups) state.record(g.condition, round, g.scores);
  state.evict(round);
  std::vector<std::vector<double>> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    std::vector<double> r(g.scores.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = state.normalize(g.condition, g.scores[i]);
    out.push_back(std::move(r));
  }
  return out;
}

TrainingSample select_training_samples(const Branch& branch, double threshold) {
  const auto& trajs = branch.trajectories;
  if (trajs.empty()) throw std::invalid_argument("cannot select from an empty branch");
  auto rhat = [&](std::size_t i) {
    if (!trajs[i].normalized_reward) throw std::invalid_argument("branch has an unscored trajectory");
    return *trajs[i].normalized_reward;
  };

  bool has_pos = false;
  bool has_neg = false;
  std::size_t best = 0, worst = 0, largest = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const double r = rhat(i);
    if (r > 0.0 && r >= threshold) has_pos = true;
    if (r < 0.0 && -r >= threshold) has_neg = true;
    if (r > rhat(best)) best = i;
    if (r < rhat(worst)) worst = i;
    if (std::abs(r) > std::abs(rhat(largest))) largest = i;
  }
  if (has_pos && has_neg) return ContrastivePair{trajs[best], trajs[worst], best, worst};
  return SimpleSample{trajs[largest], largest};
}

}  // namespace b2diff
