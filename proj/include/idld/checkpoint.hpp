#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "idld/config.hpp"
#include "idld/model.hpp"
#include "idld/optim.hpp"
#include "json.hpp"

namespace idld {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version_mismatch, truncated, manifest, offset, mismatch };

  CheckpointError(Kind kind, const std::string& what);
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string to_string(CheckpointError::Kind kind);

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Everything needed to resume: training restarts the step counter and the
/// per-step random streams from (seed, step).
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  nlohmann::json config;  // canonical experiment config
  std::string config_hash;
  std::uint64_t epoch = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t step = 0;
  std::vector<CheckpointTensor> params;
  // Adam moments, stored as extra tensors "optim.m/<param>" and "optim.v/<param>".
  std::optional<std::uint64_t> optim_step;
  std::vector<CheckpointTensor> optim_tensors;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture(const Model& model, const ExperimentConfig& cfg,
                   std::uint64_t epoch, std::uint64_t step,
                   const OptimState* optim = nullptr);

/// Rebuilds the model described by the checkpoint's config.
Model restore_model(const Checkpoint& ckpt);
/// Copies checkpoint values into an existing model (names and shapes must match).
void restore_params(Model& model, const Checkpoint& ckpt);
void restore_optim(OptimState& state, const Model& model, const Checkpoint& ckpt);
ExperimentConfig checkpoint_config(const Checkpoint& ckpt);

}  // namespace idld
