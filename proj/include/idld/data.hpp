#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "idld/model.hpp"
#include "idld/tensor.hpp"

namespace idld {

using Range = std::pair<std::size_t, std::size_t>;  // inclusive

struct SynthTaskConfig {
  TaskKind task = TaskKind::classification;
  std::size_t num_symbols = 8;  // CTC labels (excl. blank) or classes
  std::size_t feature_dim = 16;
  Range frames_per_symbol{2, 4};      // ctc
  Range symbols_per_utterance{3, 6};  // ctc
  Range frames{16, 24};               // classification
  Range salient_span{4, 6};           // classification
  double distractor_scale = 0.5;      // classification
  double noise_std = 0.1;
  std::size_t num_train = 1000;
  std::size_t num_dev = 200;
  std::size_t num_test = 200;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

struct Sample {
  std::uint64_t id = 0;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // frames x dim, row-major
  // CTC: label sequence over 1..V-1. Classification: one class index.
  std::vector<int> target;

  Tensor feature_tensor() const;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> dev;
  std::vector<Sample> test;
};

/// Orthonormal prototype for symbol s (0-based): the s-th basis vector.
std::vector<double> prototype(std::size_t symbol, std::size_t dim);

/// Ids: train 0..n_train-1, dev next, test last. Each sample draws from its
/// own stream derived from (seed, id).
Dataset gen_ctc_task(const SynthTaskConfig& cfg);
Dataset gen_cls_task(const SynthTaskConfig& cfg);
Dataset gen_task(const SynthTaskConfig& cfg);

struct Batch {
  std::size_t max_frames = 0;
  std::size_t dim = 0;
  std::vector<Tensor> features;  // each max_frames x dim, zero padded
  std::vector<std::size_t> lengths;
  std::vector<std::vector<int>> targets;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return lengths.size(); }
};

Batch pad_batch(std::span<const Sample> samples);

// ---- audio ingestion --------------------------------------------------------

struct WavAudio {
  std::uint32_t sample_rate = 0;
  std::vector<double> samples;  // mono, in [-1, 1)
};

/// RIFF/WAVE PCM 16-bit, mono or stereo (channels averaged).
WavAudio wav_read(const std::filesystem::path& path);
WavAudio wav_parse(std::span<const std::uint8_t> bytes);
/// Mono PCM 16-bit writer; samples are clipped to [-1, 1] then rounded.
void wav_write(const std::filesystem::path& path, std::uint32_t sample_rate,
               std::span<const double> samples);

struct LogMelConfig {
  std::size_t frame_len = 400;
  std::size_t hop = 160;
  std::size_t n_mels = 40;
};

struct LogMel {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  std::vector<double> values;  // frames x n_mels
  bool padded_short_input = false;
};

/// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x (frame_len/2 + 1) triangular filters on the HTK mel scale,
/// spanning 0 Hz to Nyquist.
std::vector<double> mel_filterbank(std::size_t n_mels, std::size_t frame_len,
                                   double sample_rate);

/// Hann window, DFT magnitude, mel filterbank, log(x + 1e-6).
/// T = 1 + floor((len - frame_len) / hop).
LogMel log_mel(std::span<const double> samples, double sample_rate,
               const LogMelConfig& cfg);

// ---- manifests --------------------------------------------------------------

/// One JSON object per line: {"id", "features": [[...]...] | "path", "target"}.
/// "path" entries (relative to the manifest's directory) are WAV files
/// converted with log_mel.
std::vector<Sample> read_manifest(const std::filesystem::path& path, TaskKind task,
                                  const LogMelConfig& mel = {});
void write_manifest(const std::filesystem::path& path,
                    std::span<const Sample> samples, TaskKind task);

}  // namespace idld
