#pragma once

// Run configuration: line-oriented key=value with dotted namespaces, '#'
// comments. Unknown keys are rejected; a snapshot lists every key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ofb/data.hpp"
#include "ofb/model_config.hpp"
#include "ofb/pmim.hpp"
#include "ofb/regularizers.hpp"
#include "ofb/search_space.hpp"

namespace ofb {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t pretrain_epochs = 8;
  std::size_t epochs = 20;  // search
  std::size_t warmup_epochs = 4;
  std::size_t retrain_epochs = 6;
  std::size_t baseline_epochs = 4;  // stage-1 importance training
  std::size_t batch_size = 32;
  double lr_main = 1e-3;
  double lr_score = 5e-2;   // importance logits
  double lr_alpha = 0.5;    // architecture logits
  double beta1_score = 0.5;
  double weight_decay = 0.0;
  double tau = 0.5;
  std::size_t prune_interval = 0;  // 0: one third of an epoch
  double finish_tolerance = 0.1;
  std::size_t eval_batch = 250;
};

struct RunConfig {
  ToyViTConfig model;
  SpaceConfig space;
  TrainConfig train;
  RegularizerWeights reg;
  MaskingSchedule pmim;  // total_steps is derived from the search length
  SyntheticDatasetSpec data;
  std::string data_dir;  // empty: generate in memory from `data`

  // Throws ConfigError naming the offending key.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string doc;
};

// All recognised keys with their documentation.
std::vector<ConfigKey> config_keys();

// Applies one key=value assignment.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Every key, resolved, in key=value form; parse_config(snapshot) round-trips.
std::string config_snapshot(const RunConfig& config);

}  // namespace ofb
