#pragma once

// Experiment configuration: JSON with required top-level fields, optional
// teacher / student / train / eval sections, strict key checking.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "soda/pipeline.hpp"

namespace soda {

struct ExperimentSpec {
  Method method = Method::Soda;
  SetupConfig setup;
  TrainConfig train;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "out";
  int threads = 1;
  bool operator==(const ExperimentSpec&) const = default;
};

/// Throws ConfigNotFound if the file is missing, InvalidConfig with every
/// problem (field path + reason) otherwise. An empty file is an empty object.
ExperimentSpec load_config(const std::filesystem::path& path);
ExperimentSpec parse_config(const nlohmann::json& root);
ExperimentSpec parse_config_text(const std::string& text);

nlohmann::json train_config_to_json(const TrainConfig& config);

/// Full JSON form with every default spelled out.
nlohmann::json spec_to_json(const ExperimentSpec& spec);

}  // namespace soda
