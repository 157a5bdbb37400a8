#include "b2diff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "b2diff/rng.hpp"

namespace b2diff {

ClassifierPosterior posterior(std::span<const double> x, const ToyWorld& world) {
  const std::size_t M = world.modes.size();
  std::vector<double> logits(M);
  const double d = static_cast<double>(x.size());
  for (std::size_t j = 0; j < M; ++j) {
    const Mode& m = world.modes[j];
    logits[j] = -squared_distance(x, m.center) / (2.0 * m.scale * m.scale) - d * std::log(m.scale);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  for (double& l : logits) l /= z;
  return ClassifierPosterior{std::move(logits)};
}

double inception_score(std::span<const ClassifierPosterior> posteriors) {
  if (posteriors.size() < 2) throw std::invalid_argument("inception score needs >= 2 samples");
  const std::size_t M = posteriors.front().probs.size();
  std::vector<double> marginal(M, 0.0);
  for (const auto& p : posteriors) {
    for (std::size_t j = 0; j < M; ++j) marginal[j] += p.probs[j];
  }
  for (double& m : marginal) m /= static_cast<double>(posteriors.size());

  double kl_sum = 0.0;
  for (const auto& p : posteriors) {
    double kl = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      if (p.probs[j] > 0.0) kl += p.probs[j] * (std::log(p.probs[j]) - std::log(marginal[j]));
    }
    kl_sum += kl;
  }
  return std::exp(kl_sum / static_cast<double>(posteriors.size()));
}

double inception_score(std::span<const Point> samples, const ToyWorld& world, ExecPolicy policy) {
  std::vector<ClassifierPosterior> post(samples.size());
  parallel_for(policy, samples.size(), [&](std::size_t i) { post[i] = posterior(samples[i], world); });
  return inception_score(post);
}

std::string to_json_line(const RoundReport& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["tau"] = r.tau;
  j["mean_reward"] = r.mean_reward;
  j["mean_norm_reward"] = r.mean_norm_reward;
  j["pair_fraction"] = r.pair_fraction;
  j["clip_fraction"] = r.clip_fraction;
  j["reward_queries"] = r.reward_queries;
  if (r.inception_score) {
    j["inception_score"] = *r.inception_score;
  } else {
    j["inception_score"] = nullptr;
  }
  return j.dump();
}

RoundReport report_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  RoundReport r;
  r.round = j.at("round").get<std::uint64_t>();
  r.tau = j.at("tau").get<int>();
  r.mean_reward = j.at("mean_reward").get<double>();
  r.mean_norm_reward = j.at("mean_norm_reward").get<double>();
  r.pair_fraction = j.at("pair_fraction").get<double>();
  r.clip_fraction = j.at("clip_fraction").get<double>();
  r.reward_queries = j.at("reward_queries").get<std::uint64_t>();
  if (!j.at("inception_score").is_null()) r.inception_score = j.at("inception_score").get<double>();
  return r;
}

void emit_metrics(std::span<const RoundReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open metrics file " + path.string());
  for (const auto& r : reports) out << to_json_line(r) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("failed writing metrics file " + path.string());
}

std::vector<RoundReport> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  std::vector<RoundReport> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(report_from_json_line(line));
  }
  return out;
}

void export_metrics_csv(std::span<const RoundReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open csv file " + path.string());
  out << "round,tau,mean_reward,inception_score\n";
  for (const auto& r : reports) {
    out << r.round << ',' << r.tau << ',' << nlohmann::json(r.mean_reward).dump() << ',';
    if (r.inception_score) out << nlohmann::json(*r.inception_score).dump();
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing csv file " + path.string());
}

std::vector<double> branch_mix_stats(const DenoiserParams& params, std::span<const Condition> conditions,
                                     const SamplingContext& ctx, const BranchMixConfig& cfg,
                                     RewardProvider& provider, const NormalizerConfig& norm,
                                     std::uint64_t seed, ExecPolicy policy) {
  std::vector<double> proportions;
  for (int tb : cfg.timesteps) {
    const RoundSamplingConfig rc{cfg.branches, cfg.K, tb};
    auto branches = sample_round(params, conditions, rc, ctx, seed, static_cast<std::uint64_t>(tb), policy);

    std::map<int, std::vector<std::pair<std::size_t, std::size_t>>> index;
    for (std::size_t b = 0; b < branches.size(); ++b) {
      for (std::size_t k = 0; k < branches[b].trajectories.size(); ++k) {
        index[branches[b].condition.id].push_back({b, k});
      }
    }
    NormalizerState state(NormalizerConfig{1, norm.variance_floor, norm.divide_by});
    std::vector<ConditionScores> groups;
    for (const auto& [cid, slots] : index) {
      std::vector<Point> xs;
      for (auto [b, k] : slots) xs.push_back(branches[b].trajectories[k].final_sample());
      groups.push_back(ConditionScores{Condition{cid}, provider.score(Condition{cid}, xs)});
    }
    const auto rhat = update_and_normalize(state, 0, groups);
    std::size_t g = 0;
    for (const auto& [cid, slots] : index) {
      for (std::size_t i = 0; i < slots.size(); ++i) {
        branches[slots[i].first].trajectories[slots[i].second].normalized_reward = rhat[g][i];
      }
      ++g;
    }

    std::size_t mixed = 0;
    for (const Branch& br : branches) {
      bool pos = false, neg = false;
      for (const auto& tr : br.trajectories) {
        pos = pos || *tr.normalized_reward > cfg.threshold;
        neg = neg || *tr.normalized_reward < -cfg.threshold;
      }
      if (pos && neg) ++mixed;
    }
    proportions.push_back(branches.empty() ? 0.0
                                           : static_cast<double>(mixed) / static_cast<double>(branches.size()));
  }
  return proportions;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman needs paired data, n >= 2");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  return pearson(ra, rb);
}

double spearman_permutation_pvalue(std::span<const double> a, std::span<const double> b) {
  if (a.size() > 10) throw std::invalid_argument("exact permutation test limited to n <= 10");
  const double observed = spearman(a, b);
  const auto ra = ranks(a);
  auto rb = ranks(b);
  std::sort(rb.begin(), rb.end());
  std::size_t total = 0, extreme = 0;
  do {
    ++total;
    if (pearson(ra, rb) >= observed - 1e-12) ++extreme;
  } while (std::next_permutation(rb.begin(), rb.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace b2diff
