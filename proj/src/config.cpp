#include "b2diff/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace b2diff {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw std::invalid_argument("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad value for config key '") + key + "': " + e.what());
  }
}

ToyWorld world_from_json(const json& j) {
  check_keys(j, {"ring", "modes", "condition_map", "condition_labels"}, "world.");
  ToyWorld w;
  if (j.contains("ring")) {
    const json& r = j.at("ring");
    check_keys(r, {"count", "radius", "scale"}, "world.ring.");
    std::size_t count = 8;
    double radius = 2.0, scale = 0.5;
    read(r, "count", count);
    read(r, "radius", radius);
    read(r, "scale", scale);
    w = ToyWorld::ring(count, radius, scale);
  }
  if (j.contains("modes")) {
    w.modes.clear();
    for (const auto& m : j.at("modes")) {
      check_keys(m, {"center", "scale"}, "world.modes[].");
      w.modes.push_back(Mode{m.at("center").get<Point>(), m.at("scale").get<double>()});
    }
    if (!j.contains("condition_map")) {
      w.condition_map.clear();
      for (std::size_t i = 0; i < w.modes.size(); ++i) w.condition_map.push_back(i);
    }
  }
  read(j, "condition_map", w.condition_map);
  read(j, "condition_labels", w.condition_labels);
  return w;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  check_keys(j, {"T", "beta_start", "beta_end", "eta", "guidance", "batch_size", "batch_count",
                 "num_branches", "optimizer", "learning_rate", "weight_decay", "adam_betas", "adam_eps",
                 "train_batch_size", "grad_accum_steps", "baseline_grad_accum_steps", "initial_interval",
                 "score_threshold", "inner_epochs", "rounds", "normalizer_window", "normalize_by",
                 "variance_floor", "algo", "clip_range", "dpok_alpha", "dpok_beta", "seed", "network",
                 "world", "pretrain", "reward", "remote_timeout_ms", "remote_retries", "eval_samples",
                 "branch_stats", "base_checkpoint"},
             "");
  ExperimentConfig c;
  read(j, "T", c.T);
  read(j, "beta_start", c.beta_start);
  read(j, "beta_end", c.beta_end);
  read(j, "eta", c.sampler.eta);
  read(j, "guidance", c.sampler.guidance);
  read(j, "batch_size", c.batch_size);
  read(j, "batch_count", c.batch_count);
  read(j, "num_branches", c.num_branches);
  if (j.contains("optimizer") && j.at("optimizer") != "adamw") {
    throw std::invalid_argument("only optimizer 'adamw' is supported");
  }
  read(j, "learning_rate", c.adam.lr);
  read(j, "weight_decay", c.adam.weight_decay);
  if (j.contains("adam_betas")) {
    const auto betas = j.at("adam_betas").get<std::vector<double>>();
    if (betas.size() != 2) throw std::invalid_argument("adam_betas must have two entries");
    c.adam.beta1 = betas[0];
    c.adam.beta2 = betas[1];
  }
  read(j, "adam_eps", c.adam.eps);
  read(j, "train_batch_size", c.train_batch_size);
  read(j, "grad_accum_steps", c.grad_accum_steps);
  read(j, "baseline_grad_accum_steps", c.baseline_grad_accum_steps);
  if (j.contains("initial_interval")) {
    const auto iv = j.at("initial_interval").get<std::vector<int>>();
    if (iv.size() != 2 || iv[1] != 1) throw std::invalid_argument("initial_interval must be [tau0, 1]");
    c.initial_interval = iv[0];
  }
  read(j, "score_threshold", c.score_threshold);
  read(j, "inner_epochs", c.inner_epochs);
  read(j, "rounds", c.rounds);
  read(j, "normalizer_window", c.normalizer.window);
  if (j.contains("normalize_by")) {
    const auto s = j.at("normalize_by").get<std::string>();
    if (s == "variance") {
      c.normalizer.divide_by = NormalizeBy::Variance;
    } else if (s == "std") {
      c.normalizer.divide_by = NormalizeBy::StdDev;
    } else {
      throw std::invalid_argument("normalize_by must be 'variance' or 'std'");
    }
  }
  read(j, "variance_floor", c.normalizer.variance_floor);
  if (j.contains("algo")) c.recipe = recipe_from_string(j.at("algo").get<std::string>());
  c.objective.algo = objective_algo(c.recipe);
  read(j, "clip_range", c.objective.clip_range);
  read(j, "dpok_alpha", c.objective.dpok_alpha);
  read(j, "dpok_beta", c.objective.dpok_beta);
  read(j, "seed", c.seed);
  if (j.contains("network")) {
    const json& n = j.at("network");
    check_keys(n, {"hidden_dims", "t_embed_dim", "c_embed_dim"}, "network.");
    read(n, "hidden_dims", c.network.hidden_dims);
    read(n, "t_embed_dim", c.network.t_embed_dim);
    read(n, "c_embed_dim", c.network.c_embed_dim);
  }
  if (j.contains("world")) c.world = world_from_json(j.at("world"));
  c.network.input_dim = c.world.modes.empty() ? 0 : c.world.dim();
  c.network.cond_count = c.world.condition_count();
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    check_keys(p, {"steps", "batch_size", "learning_rate", "cond_dropout"}, "pretrain.");
    read(p, "steps", c.pretrain.steps);
    read(p, "batch_size", c.pretrain.batch_size);
    read(p, "learning_rate", c.pretrain.lr);
    read(p, "cond_dropout", c.pretrain.cond_dropout);
  }
  read(j, "reward", c.reward);
  read(j, "remote_timeout_ms", c.remote_timeout_ms);
  read(j, "remote_retries", c.remote_retries);
  read(j, "eval_samples", c.eval_samples);
  if (j.contains("branch_stats")) {
    const json& b = j.at("branch_stats");
    check_keys(b, {"timesteps", "branches", "num_branches", "threshold"}, "branch_stats.");
    read(b, "timesteps", c.branch_stats.timesteps);
    read(b, "branches", c.branch_stats.branches);
    read(b, "num_branches", c.branch_stats.K);
    read(b, "threshold", c.branch_stats.threshold);
  }
  read(j, "base_checkpoint", c.base_checkpoint);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config is not valid JSON: " + std::string(e.what()));
  }
  ExperimentConfig cfg = config_from_json(j);
  if (!cfg.base_checkpoint.empty()) {
    std::filesystem::path p(cfg.base_checkpoint);
    if (p.is_relative()) cfg.base_checkpoint = (path.parent_path() / p).string();
  }
  return cfg;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["T"] = c.T;
  j["beta_start"] = c.beta_start;
  j["beta_end"] = c.beta_end;
  j["eta"] = c.sampler.eta;
  j["guidance"] = c.sampler.guidance;
  j["batch_size"] = c.batch_size;
  j["batch_count"] = c.batch_count;
  j["num_branches"] = c.num_branches;
  j["optimizer"] = "adamw";
  j["learning_rate"] = c.adam.lr;
  j["weight_decay"] = c.adam.weight_decay;
  j["adam_betas"] = {c.adam.beta1, c.adam.beta2};
  j["adam_eps"] = c.adam.eps;
  j["train_batch_size"] = c.train_batch_size;
  j["grad_accum_steps"] = c.grad_accum_steps;
  j["baseline_grad_accum_steps"] = c.baseline_grad_accum_steps;
  j["initial_interval"] = {c.initial_interval, 1};
  j["score_threshold"] = c.score_threshold;
  j["inner_epochs"] = c.inner_epochs;
  j["rounds"] = c.rounds;
  j["normalizer_window"] = c.normalizer.window;
  j["normalize_by"] = c.normalizer.divide_by == NormalizeBy::Variance ? "variance" : "std";
  j["variance_floor"] = c.normalizer.variance_floor;
  j["algo"] = to_string(c.recipe);
  j["clip_range"] = c.objective.clip_range;
  j["dpok_alpha"] = c.objective.dpok_alpha;
  j["dpok_beta"] = c.objective.dpok_beta;
  j["seed"] = c.seed;
  j["network"] = {{"hidden_dims", c.network.hidden_dims},
                  {"t_embed_dim", c.network.t_embed_dim},
                  {"c_embed_dim", c.network.c_embed_dim}};
  nlohmann::ordered_json modes = nlohmann::ordered_json::array();
  for (const Mode& m : c.world.modes) modes.push_back({{"center", m.center}, {"scale", m.scale}});
  j["world"] = {{"modes", modes}, {"condition_map", c.world.condition_map}};
  if (!c.world.condition_labels.empty()) j["world"]["condition_labels"] = c.world.condition_labels;
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"batch_size", c.pretrain.batch_size},
                   {"learning_rate", c.pretrain.lr},
                   {"cond_dropout", c.pretrain.cond_dropout}};
  j["reward"] = c.reward;
  j["remote_timeout_ms"] = c.remote_timeout_ms;
  j["remote_retries"] = c.remote_retries;
  j["eval_samples"] = c.eval_samples;
  j["branch_stats"] = {{"timesteps", c.branch_stats.timesteps},
                       {"branches", c.branch_stats.branches},
                       {"num_branches", c.branch_stats.K},
                       {"threshold", c.branch_stats.threshold}};
  j["base_checkpoint"] = c.base_checkpoint;
  return j;
}

}  // namespace b2diff
