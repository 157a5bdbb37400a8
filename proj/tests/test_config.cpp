#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "b2diff/config.hpp"

using namespace b2diff;
using nlohmann::json;

TEST_CASE("empty config yields the defaults") {
  const auto c = config_from_json(json::object());
  CHECK(c.T == 20);
  CHECK(c.sampler.guidance == 5.0);
  CHECK(c.sampler.eta == 1.0);
  CHECK(c.batch_size == 8);
  CHECK(c.batch_count == 32);
  CHECK(c.num_branches == 3);
  CHECK(c.adam.lr == 1e-4);
  CHECK(c.adam.weight_decay == 1e-4);
  CHECK(c.train_batch_size == 2);
  CHECK(c.grad_accum_steps == 32);
  CHECK(c.initial_interval == 14);
  CHECK(c.score_threshold == 0.5);
  CHECK(c.inner_epochs == 1);
  CHECK(c.objective.clip_range == 1e-4);
  CHECK(c.normalizer.window == 8);
  CHECK(c.recipe == Recipe::BsPpo);
}

TEST_CASE("full config round-trips") {
  json j = json::parse(R"({
    "T": 10, "guidance": 3.0, "batch_size": 2, "batch_count": 3, "num_branches": 2,
    "learning_rate": 0.001, "adam_betas": [0.8, 0.99], "initial_interval": [6, 1],
    "algo": "dpok", "dpok_beta": 0.5, "normalize_by": "std", "seed": 17,
    "network": {"hidden_dims": [16, 16]},
    "world": {"ring": {"count": 4, "radius": 1.5, "scale": 0.3}},
    "branch_stats": {"timesteps": [2, 4], "branches": 8, "num_branches": 2}
  })");
  const auto c = config_from_json(j);
  CHECK(c.T == 10);
  CHECK(c.initial_interval == 6);
  CHECK(c.adam.beta1 == 0.8);
  CHECK(c.recipe == Recipe::Dpok);
  CHECK(c.normalizer.divide_by == NormalizeBy::StdDev);
  CHECK(c.world.condition_count() == 4);
  CHECK(c.branch_stats.K == 2);

  const auto again = config_from_json(json::parse(config_to_json(c).dump()));
  CHECK(config_to_json(again).dump() == config_to_json(c).dump());
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"learning_rat": 0.1})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"world": {"ring": {"size": 3}}})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"T": "twenty"})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"eta": 0})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"algo": "sac"})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"initial_interval": [14, 2]})")), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"optimizer": "sgd"})")), std::invalid_argument);
}

TEST_CASE("explicit world") {
  const auto c = config_from_json(json::parse(R"({
    "world": {"modes": [{"center": [0, 0], "scale": 0.5}, {"center": [3, 0], "scale": 0.5}],
              "condition_map": [1, 0, 1], "condition_labels": ["a", "b", "c"]}
  })"));
  CHECK(c.world.condition_count() == 3);
  CHECK(c.world.target(Condition{0}).center == Point{3.0, 0.0});
  CHECK(c.world.label(Condition{2}) == "c");
  CHECK_THROWS_AS(config_from_json(json::parse(R"({
    "world": {"modes": [{"center": [0, 0], "scale": 0.5}, {"center": [3, 0], "scale": 0.5}],
              "condition_map": [2]}
  })")),
                  std::invalid_argument);
}

TEST_CASE("relative checkpoint paths resolve against the config file") {
  const auto dir = std::filesystem::temp_directory_path() / "b2diff_tests" / "cfgdir";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"base_checkpoint": "pre/x.ckpt"})";
  const auto c = load_config(dir / "c.json");
  CHECK(std::filesystem::path(c.base_checkpoint) == dir / "pre" / "x.ckpt");
  CHECK_THROWS_AS(load_config(dir / "missing.json"), std::invalid_argument);
  std::ofstream(dir / "broken.json") << "{ nope";
  CHECK_THROWS_AS(load_config(dir / "broken.json"), std::invalid_argument);
}
