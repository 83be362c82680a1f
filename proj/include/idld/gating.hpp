#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "idld/nn.hpp"
#include "idld/rng.hpp"
#include "idld/tensor.hpp"

namespace idld {

/// Soft per-layer scores, a 1 x N tensor produced by the Layer Selector.
struct GateScores {
  Tensor values;

  std::size_t size() const { return values.numel(); }
  std::span<const double> view() const { return values.data(); }
};

enum class MaskOrigin {
  full,
  top_k,
  threshold,
  random_bernoulli,
  random_exact,
  early_exit,
};

std::string_view to_string(MaskOrigin origin);

/// Binary execution mask over the N encoder layers.
struct GateMask {
  std::vector<std::uint8_t> bits;
  MaskOrigin origin = MaskOrigin::full;
  // Input-driven masks carry one straight-through multiplier per layer
  // (forward value == bit). Empty for masks that do not come from scores.
  std::vector<Tensor> multipliers;

  std::size_t size() const { return bits.size(); }
  std::size_t popcount() const;
};

GateMask full_mask(std::size_t num_layers);

GateScores selector_forward(const Tensor& x, const SelectorParams& params);

/// Keeps the k highest scores; ties go to the lower layer index.
GateMask topk_binarize(const GateScores& scores, std::size_t k);

/// bit j = scores[j] > gamma; when nothing passes, the argmax layer runs.
GateMask threshold_binarize(const GateScores& scores, double gamma);

/// k uniform over {1, ..., num_layers}.
std::size_t sample_k(std::size_t num_layers, Rng& rng);

/// Each layer dropped independently with probability p_drop (one uniform per
/// layer, in layer order). An all-dropped draw re-enables one uniformly
/// chosen layer.
GateMask random_gates_bernoulli(std::size_t num_layers, double p_drop, Rng& rng);

/// Uniformly random subset of num_layers - num_dropped enabled layers.
GateMask random_gates_exact(std::size_t num_layers, std::size_t num_dropped,
                            Rng& rng);

}  // namespace idld
