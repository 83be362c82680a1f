#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "idld/data.hpp"
#include "idld/losses.hpp"
#include "idld/metrics.hpp"
#include "idld/model.hpp"

namespace idld {

/// Per-sample training/evaluation loss from raw logits: CTC over
/// log_softmax(logits) for CTC models, cross-entropy for classifiers.
LossValue sample_loss(const ModelConfig& config, const Tensor& logits,
                      const Sample& sample);

/// Seed stream used by random policies during evaluation; each sample gets
/// Rng::derive(seed, kEvalStream, sample.id).
inline constexpr std::uint64_t kEvalStream = 0xE7A1;

struct EvalOutcome {
  MetricValue metric;  // wer (corpus level) or accuracy
  double loss_mean = 0.0;
  std::size_t non_finite_losses = 0;
  std::vector<ForwardTrace> traces;  // without layer outputs
};

EvalOutcome evaluate(const Model& model, std::span<const Sample> samples,
                     const DropPolicy& policy, std::uint64_t seed);
/// Every sample exits at head `exit` (1..N).
EvalOutcome evaluate_forced_exit(const Model& model, std::span<const Sample> samples,
                                 std::size_t exit);

/// A trained model together with the hash of the config that produced it.
struct LoadedModel {
  Model model;
  std::string mode;  // idld | rd | ee | static
  std::string config_hash;
};

/// One row per (n, policy family): idld-topk (k = N - n) on idld checkpoints,
/// rd-exact averaged over rd_seeds draws on rd checkpoints (static-rd-exact on
/// static ones), ee-exit (exit N - n) on ee checkpoints. Values are the mean
/// and population std over all (checkpoint, draw) evaluations.
std::vector<RunReport> run_sweep(std::span<const LoadedModel> models,
                                 std::span<const Sample> samples,
                                 std::span<const std::size_t> n_list,
                                 std::size_t rd_seeds, std::uint64_t seed);

struct ThresholdRow {
  std::string kind;  // gamma | tau
  double threshold = 0.0;
  double exec_layers_mean = 0.0;
  std::string metric_name;
  double metric_value = 0.0;
  std::uint64_t macs_per_sample = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline constexpr const char* kThresholdCsvHeader =
    "threshold_kind,threshold,exec_layers_mean,metric_name,metric_value,"
    "macs_per_sample,seed,config_hash";

/// kind "gamma" sweeps the gate threshold, "tau" the early-exit entropy.
std::vector<ThresholdRow> run_threshold_sweep(const LoadedModel& model,
                                              std::span<const Sample> samples,
                                              const std::string& kind,
                                              std::span<const double> thresholds,
                                              std::uint64_t seed);

void write_threshold_csv(std::ostream& os, std::span<const ThresholdRow> rows);

}  // namespace idld
