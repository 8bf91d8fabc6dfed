#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mscot/guidance/guidance.hpp"
#include "mscot/prior/prior.hpp"
#include "mscot/refiner/refiner.hpp"
#include "mscot/vqvae/vqvae.hpp"

namespace mscot::bench {

struct CorpusSection {
  std::size_t length = 64;
  std::size_t per_family = 64;
  double validation_fraction = 0.2;
};

struct ControlSection {
  std::size_t keyframes = 5;
  std::vector<std::size_t> channels{0, 1};
  double sigma = 0.05;
  double threshold = 0.25;  // normalized units: a quarter of the per-channel std
  std::size_t seeds = 100;
};

// Everything a desk run needs; every section has defaults and unknown keys are
// rejected.
struct DeskConfig {
  std::uint64_t seed = 0;
  CorpusSection corpus;
  vqvae::VqvaeConfig vqvae;
  vqvae::VqvaeTrainConfig vqvae_train;
  prior::PriorConfig prior;
  prior::PriorTrainConfig prior_train;
  refiner::RefinerConfig refiner;
  refiner::RefinerTrainConfig refiner_train;
  prior::SamplerConfig sampling;
  guidance::StepConfig guidance;
  refiner::RefinementConfig refinement;
  ControlSection control;
  std::size_t target_len = 0;  // 0: the base schedule's final length

  // Derived fields (code_dim, scales, vocab, classes) are kept in sync.
  void harmonize();
};

DeskConfig default_config();
nlohmann::json to_json(const DeskConfig& c);
// ConfigError on an unknown key or a wrongly typed value.
DeskConfig config_from_json(const nlohmann::json& j);
DeskConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const vqvae::VqvaeConfig& c);
vqvae::VqvaeConfig vqvae_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const prior::PriorConfig& c);
prior::PriorConfig prior_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const refiner::RefinerConfig& c);
refiner::RefinerConfig refiner_config_from_json(const nlohmann::json& j);

// FNV-1a of the compact JSON dump.
std::string config_hash(const nlohmann::json& j);

}  // namespace mscot::bench
