#include "idld/nn.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "idld/errors.hpp"

namespace idld {

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_rowwise(y, bias) : y;
}

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p,
                            std::size_t valid_len) {
  const std::size_t t_len = x.rows();
  const std::size_t d = x.cols();
  if (p.num_heads == 0 || d % p.num_heads != 0) {
    throw ConfigError("multi_head_attention: d_model " + std::to_string(d) +
                      " not divisible by num_heads " +
                      std::to_string(p.num_heads));
  }
  if (t_len == 0 || valid_len == 0 || valid_len > t_len) {
    throw ContractViolation("multi_head_attention: valid_len " +
                            std::to_string(valid_len) + " out of range for T=" +
                            std::to_string(t_len));
  }
  const std::size_t head_dim = d / p.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor q = matmul(x, p.query);
  Tensor k = matmul(x, p.key);
  Tensor v = matmul(x, p.value);

  std::vector<Tensor> heads;
  heads.reserve(p.num_heads);
  for (std::size_t h = 0; h < p.num_heads; ++h) {
    const std::size_t off = h * head_dim;
    Tensor qh = p.num_heads == 1 ? q : slice_cols(q, off, head_dim);
    Tensor kh = p.num_heads == 1 ? k : slice_cols(k, off, head_dim);
    Tensor vh = p.num_heads == 1 ? v : slice_cols(v, off, head_dim);
    Tensor scores = scale(matmul_bt(qh, kh), inv_sqrt);
    Tensor weights = softmax_rows(scores, valid_len);
    heads.push_back(matmul(weights, vh));
  }
  Tensor merged = p.num_heads == 1 ? heads[0] : concat_cols(heads);
  return matmul(merged, p.output);
}

Tensor ffn(const Tensor& x, const FfnParams& p) {
  return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p, double eps) {
  return layer_norm(x, p.scale, p.shift, eps);
}

Tensor spec_mask(const Tensor& x, std::size_t max_time_mask,
                 std::size_t max_feat_mask, Rng& rng) {
  const std::size_t t_len = x.rows(), d = x.cols();
  if (max_time_mask >= t_len && max_time_mask > 0) {
    throw ContractViolation("spec_mask: time mask width must be < T");
  }
  if (max_feat_mask >= d && max_feat_mask > 0) {
    throw ContractViolation("spec_mask: feature mask width must be < feature dim");
  }
  const auto draw = [&](std::size_t max_width, std::size_t extent) {
    const auto width = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(max_width)));
    const auto start = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(extent - width)));
    return std::pair{start, width};
  };
  const auto [t0, tw] = draw(max_time_mask, t_len);
  const auto [f0, fw] = draw(max_feat_mask, d);

  std::vector<double> keep(t_len * d, 1.0);
  for (std::size_t t = t0; t < t0 + tw; ++t) {
    for (std::size_t j = 0; j < d; ++j) keep[t * d + j] = 0.0;
  }
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t j = f0; j < f0 + fw; ++j) keep[t * d + j] = 0.0;
  }
  return mul(x, Tensor::from(x.shape(), std::move(keep)));
}

}  // namespace idld
