#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "b2diff/trainer.hpp"

namespace b2diff {

/// Parses an experiment config. Missing keys keep their defaults; unknown
/// keys and invalid values throw std::invalid_argument naming the key.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Full config with every key spelled out.
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

}  // namespace b2diff
