#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "idld/data.hpp"
#include "idld/model.hpp"
#include "idld/optim.hpp"
#include "json.hpp"

namespace idld {

enum class TrainMode { idld, rd, ee, static_full };

std::string to_string(TrainMode mode);

/// Random-dropping probability; a range [lo, hi] is sampled uniformly per batch.
struct RdConfig {
  double p_lo = 0.5;
  double p_hi = 0.5;

  bool is_range() const { return p_lo != p_hi; }
};

struct AugmentConfig {
  bool spec_mask = false;
  std::size_t max_time_mask = 0;
  std::size_t max_feat_mask = 0;
};

struct OptimizerConfig {
  std::string name = "adamw";  // adam | adamw
  AdamWConfig hyper;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::idld;
  RdConfig rd;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  ModelConfig model;  // d_in, num_outputs, task and ee_enabled derive from data/mode
  SynthTaskConfig data;
  std::optional<std::string> train_manifest;
  std::optional<std::string> dev_manifest;
  std::optional<std::string> test_manifest;
  LogMelConfig mel;
  OptimizerConfig optimizer;
  LrSchedule schedule;
  AugmentConfig augment;
  bool dev_eval = true;
};

/// Strict parse: unknown keys and bad enum values raise ConfigError naming the
/// key and the allowed values. "seed" is mandatory.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON form; parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// 16 hex digits of FNV-1a over the canonical JSON text.
std::string config_hash(const ExperimentConfig& cfg);
std::string fnv1a_hex(std::string_view text);

}  // namespace idld
