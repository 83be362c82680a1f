#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "idld/config.hpp"
#include "idld/data.hpp"
#include "idld/model.hpp"
#include "idld/optim.hpp"

namespace idld {

/// Training hit a non-finite loss or gradient; checkpoints written before the
/// failing step stay on disk.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kTrainLogHeader = "step,epoch,lr,loss,k_or_mask_popcount";
inline constexpr const char* kDevLogHeader = "epoch,metric_name,metric_value,loss";

inline constexpr std::uint64_t kStepStream = 0x57E9;
inline constexpr std::uint64_t kShuffleStream = 0x5F1E;

struct TrainLogRow {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::size_t k_or_popcount = 0;
};

struct DevLogRow {
  std::size_t epoch = 0;
  std::string metric_name;
  double metric_value = 0.0;
  double loss = 0.0;
};

struct TrainOutcome {
  Model model;
  OptimState optim;
  std::vector<TrainLogRow> log;
  std::vector<DevLogRow> dev;
  std::uint64_t steps = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::ostream* progress = nullptr;
};

/// Synthetic data from the config, or the configured manifests.
Dataset load_dataset(const ExperimentConfig& cfg);

/// Runs the configured recipe. With an out_dir it writes config.json,
/// epoch_<e>.ckpt for e = 0..epochs (epoch 0 is the initialization),
/// final.ckpt, train_log.csv and dev_log.csv.
TrainOutcome train(const ExperimentConfig& cfg, const Dataset& data,
                   const TrainOptions& options);

void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& rows);
void write_dev_log(std::ostream& os, const std::vector<DevLogRow>& rows);

}  // namespace idld
