#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "idld/gating.hpp"
#include "idld/nn.hpp"
#include "idld/rng.hpp"
#include "idld/tensor.hpp"

namespace idld {

enum class TaskKind { ctc, classification };

struct SelectorConfig {
  std::size_t kernel_width = 3;
  std::size_t channels = 32;
  std::size_t pooled_len = 4;
};

struct ModelConfig {
  std::size_t num_layers = 6;
  std::size_t d_in = 16;
  std::size_t d_model = 64;
  std::size_t num_heads = 2;
  std::size_t d_ff = 128;
  // CTC: vocabulary size including the blank at index 0. Classification:
  // number of classes.
  std::size_t num_outputs = 9;
  TaskKind task = TaskKind::classification;
  std::size_t max_frames = 256;  // positional table length
  SelectorConfig selector;
  bool ee_enabled = false;
  double norm_eps = 1e-5;

  void validate() const;  // throws ConfigError
};

// ---- drop policies ----------------------------------------------------------

struct FullPolicy {};
struct InputDrivenTopK {
  std::size_t k = 1;
};
struct InputDrivenThreshold {
  double gamma = 0.0;
};
struct RandomBernoulli {
  double p_drop = 0.5;
};
struct RandomExactN {
  std::size_t n_dropped = 0;
};
struct EarlyExitEntropy {
  double tau = 0.0;  // nats
};

using DropPolicy = std::variant<FullPolicy, InputDrivenTopK, InputDrivenThreshold,
                                RandomBernoulli, RandomExactN, EarlyExitEntropy>;

std::string describe(const DropPolicy& policy);

/// What one forward pass executed; consumed by compute accounting.
struct ForwardTrace {
  GateMask mask;
  std::vector<Tensor> layer_outputs;  // only when requested or in EE mode
  std::size_t exit_index = 0;         // 1..N for early-exit passes, 0 otherwise
  std::size_t executed_layers = 0;
  std::size_t frames = 0;
  bool selector_used = false;
  std::size_t heads_evaluated = 1;
};

struct ForwardResult {
  // CTC: frames x V per-frame logits. Classification: 1 x classes.
  Tensor logits;
  ForwardTrace trace;
};

/// Gate for one layer: the forward bit plus, for input-driven masks, the
/// straight-through multiplier whose value equals the bit.
struct LayerGate {
  std::uint8_t bit = 1;
  Tensor multiplier;
};

/// y_hat = y + g * MHA(LN(y)); y_out = y_hat + g * FFN(LN(y_hat)).
/// With bit 0 the input handle is returned unchanged.
Tensor gated_layer_forward(const Tensor& y_prev, const LayerGate& gate,
                           const EncoderLayerParams& params,
                           double norm_eps = 1e-5);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  /// Random initialization, deterministic in (config, seed).
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<Tensor> param_tensors() const;
  Tensor& param(const std::string& name);

  EncoderLayerParams& layer(std::size_t j) { return layers_.at(j); }
  const EncoderLayerParams& layer(std::size_t j) const { return layers_.at(j); }
  SelectorParams& selector() { return selector_; }
  const SelectorParams& selector() const { return selector_; }

  /// features (T x d_in) -> X (T x d_model): projection plus positions.
  Tensor frontend(const Tensor& features) const;
  GateScores select(const Tensor& x) const;
  Tensor encoder_forward(const Tensor& x, const GateMask& mask,
                         std::vector<Tensor>* layer_outputs = nullptr) const;
  /// Output head for exit j in 1..N; exit N is the shared final head.
  Tensor head(const Tensor& hidden, std::size_t exit) const;

  /// features holds exactly the valid frames of one sample.
  ForwardResult forward(const Tensor& features, const DropPolicy& policy,
                        Rng& rng, bool keep_layer_outputs = false) const;
  /// Padded input: only the first valid_len rows are used.
  ForwardResult forward(const Tensor& padded, std::size_t valid_len,
                        const DropPolicy& policy, Rng& rng) const;
  ForwardResult forward_masked(const Tensor& features, const GateMask& mask,
                               bool keep_layer_outputs = false) const;

  /// Lowest exit whose average output entropy is below tau; N otherwise.
  ForwardResult early_exit_forward(const Tensor& features, double tau) const;
  /// Runs layers 1..exit and reads head `exit`.
  ForwardResult forced_exit_forward(const Tensor& features,
                                    std::size_t exit) const;
  /// Logits of every exit head 1..N on a full pass (EE training).
  std::vector<Tensor> all_exit_logits(const Tensor& features) const;

 private:
  Tensor add_param(const std::string& name, Shape shape, double init_std,
                   double fill, Rng& rng);
  Tensor to_output(const Tensor& hidden, const Tensor& w, const Tensor& b) const;
  void require_ee() const;

  ModelConfig config_;
  std::vector<NamedParam> params_;
  Tensor in_proj_, in_bias_, positions_;
  std::vector<EncoderLayerParams> layers_;
  SelectorParams selector_;
  Tensor head_w_, head_b_;
  std::vector<std::pair<Tensor, Tensor>> exit_heads_;  // exits 1..N-1
};

}  // namespace idld
