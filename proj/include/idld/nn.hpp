#pragma once

#include <cstddef>

#include "idld/rng.hpp"
#include "idld/tensor.hpp"

namespace idld {

struct LayerNormParams {
  Tensor scale;  // d
  Tensor shift;  // d
};

/// Bias-free projections, each d_model x d_model (applied as x * W).
struct AttentionParams {
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor output;
  std::size_t num_heads = 1;
};

struct FfnParams {
  Tensor w1;  // d_model x d_ff
  Tensor b1;  // d_ff
  Tensor w2;  // d_ff x d_model
  Tensor b2;  // d_model
};

struct EncoderLayerParams {
  LayerNormParams attn_norm;
  AttentionParams attn;
  LayerNormParams ffn_norm;
  FfnParams ffn;
};

/// Layer Selector weights: norm -> conv (C x d_model x width) -> GELU ->
/// adaptive pool to pooled_len -> projection (C*pooled_len x N).
struct SelectorParams {
  LayerNormParams norm;
  Tensor kernel;
  Tensor bias;
  std::size_t pooled_len = 4;
  Tensor proj;
  Tensor proj_bias;
};

/// x * weight + bias (bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Scaled dot-product self-attention; keys at positions >= valid_len are
/// masked out. Output is the branch value before any residual addition.
Tensor multi_head_attention(const Tensor& x, const AttentionParams& params,
                            std::size_t valid_len);

/// linear -> GELU -> linear.
Tensor ffn(const Tensor& x, const FfnParams& params);

Tensor layer_norm(const Tensor& x, const LayerNormParams& params,
                  double eps = 1e-5);

/// SpecAugment-style masking of one time span and one feature span.
/// Draw order: time width in [0, max_time_mask], time start, feature width in
/// [0, max_feat_mask], feature start; all via Rng::uniform_int.
Tensor spec_mask(const Tensor& x, std::size_t max_time_mask,
                 std::size_t max_feat_mask, Rng& rng);

}  // namespace idld
