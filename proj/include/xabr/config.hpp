#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "xabr/bridge.hpp"
#include "xabr/transformer.hpp"

namespace xabr {

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  double lr_bridge = 1e-4;
  double lr_receiver = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t patience = 3;
  double min_delta = 1e-3;
  std::uint64_t seed = 42;
  std::size_t max_tokens = 4096;
  double val_fraction = 0.1;
  double grad_clip = 1.0;  // global norm; <= 0 disables

  void validate() const;
};

// Everything a config file can set.
struct ExperimentConfig {
  StackConfig donor{4, 64, 4, 256, 259, 256};
  StackConfig receiver{2, 32, 2, 128, 259, 128};
  BridgeConfig bridge = BridgeConfig::defaults_for(StackConfig{2, 32, 2, 128, 259, 128});
  TrainConfig train;

  void validate() const;
};

// Accepts nested objects ({"donor": {"d_model": 64}}) or dotted keys
// ({"donor.d_model": 64}). Unknown keys and ill-typed values are ConfigErrors;
// omitted keys keep their defaults.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const StackConfig& config);
StackConfig stack_config_from_json(const nlohmann::json& doc);

}  // namespace xabr
