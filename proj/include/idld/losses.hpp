#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "idld/tensor.hpp"

namespace idld {

/// CTC blank symbol; real labels are 1..V-1.
inline constexpr int kBlank = 0;

enum class LossStatus {
  ok,
  infeasible,  // CTC target cannot be aligned within input_length frames
  non_finite,  // a component loss was +inf
};

struct LossValue {
  Tensor value;  // scalar
  LossStatus status = LossStatus::ok;

  bool ok() const { return status == LossStatus::ok; }
};

/// Minimum number of frames needed to emit `target`: its length plus one
/// separating blank per adjacent repeat.
std::size_t ctc_min_frames(std::span<const int> target);

/// Negative log-likelihood of `target` under per-frame log-probabilities
/// (T x V, blank at 0), using the first input_length frames. Differentiable
/// w.r.t. log_probs, each entry treated as an independent variable.
/// Infeasible lengths give +inf with LossStatus::infeasible.
LossValue ctc_loss(const Tensor& log_probs, std::span<const int> target,
                   std::size_t input_length);

/// Per-frame argmax, collapse repeats, drop blanks.
std::vector<int> ctc_greedy_decode(const Tensor& log_probs,
                                   std::size_t input_length);

/// -log softmax(logits)[target]; logits is 1 x V (or any V-element tensor).
Tensor cross_entropy(const Tensor& logits, std::size_t target);

/// Unweighted mean of the per-exit losses.
LossValue ee_joint_loss(std::span<const Tensor> per_exit_losses);

}  // namespace idld
