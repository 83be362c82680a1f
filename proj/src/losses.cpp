#include "idld/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "idld/errors.hpp"

namespace idld {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

LossValue infinite(LossStatus status) {
  return {Tensor::scalar(std::numeric_limits<double>::infinity()), status};
}

}  // namespace

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t frames = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++frames;
  }
  return frames;
}

LossValue ctc_loss(const Tensor& log_probs, std::span<const int> target,
                   std::size_t input_length) {
  if (log_probs.rank() != 2) {
    throw ContractViolation("ctc_loss: log_probs must be T x V");
  }
  const std::size_t vocab = log_probs.cols();
  if (input_length > log_probs.rows()) {
    throw ContractViolation("ctc_loss: input_length exceeds frame count");
  }
  for (int label : target) {
    if (label <= kBlank || static_cast<std::size_t>(label) >= vocab) {
      throw ContractViolation("ctc_loss: target label " + std::to_string(label) +
                              " outside 1.." + std::to_string(vocab - 1));
    }
  }
  if (input_length == 0 || ctc_min_frames(target) > input_length) {
    return infinite(LossStatus::infeasible);
  }

  // Extended label sequence: blank, l1, blank, l2, ..., blank.
  const std::size_t t_len = input_length;
  const std::size_t s_len = 2 * target.size() + 1;
  std::vector<int> ext(s_len, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto can_skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
  };

  auto lp = log_probs.data();
  auto at = [&](std::size_t t, std::size_t s) {
    return lp[t * vocab + static_cast<std::size_t>(ext[s])];
  };

  std::vector<double> alpha(t_len * s_len, kNegInf);
  alpha[0] = at(0, 0);
  if (s_len > 1) alpha[1] = at(0, 1);
  for (std::size_t t = 1; t < t_len; ++t) {
    const double* prev = alpha.data() + (t - 1) * s_len;
    double* cur = alpha.data() + t * s_len;
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (can_skip(s)) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + at(t, s);
    }
  }
  const double* last = alpha.data() + (t_len - 1) * s_len;
  const double log_likelihood =
      s_len > 1 ? log_add(last[s_len - 1], last[s_len - 2]) : last[0];
  if (log_likelihood == kNegInf) return infinite(LossStatus::infeasible);

  return {Tensor::make(
              {1}, {-log_likelihood}, "ctc_loss", {log_probs},
              [t_len, s_len, vocab, ext = std::move(ext), alpha = std::move(alpha),
               log_likelihood](detail::Node& self) {
                auto& grad = self.parents[0]->grad_buffer();
                const auto& lp = self.parents[0]->data;
                auto at = [&](std::size_t t, std::size_t s) {
                  return lp[t * vocab + static_cast<std::size_t>(ext[s])];
                };
                auto can_skip_back = [&](std::size_t s) {
                  return s + 2 < s_len && ext[s] != kBlank && ext[s] != ext[s + 2];
                };
                std::vector<double> beta(t_len * s_len, kNegInf);
                double* tail = beta.data() + (t_len - 1) * s_len;
                tail[s_len - 1] = at(t_len - 1, s_len - 1);
                if (s_len > 1) tail[s_len - 2] = at(t_len - 1, s_len - 2);
                for (std::size_t t = t_len - 1; t-- > 0;) {
                  const double* next = beta.data() + (t + 1) * s_len;
                  double* cur = beta.data() + t * s_len;
                  for (std::size_t s = 0; s < s_len; ++s) {
                    double acc = next[s];
                    if (s + 1 < s_len) acc = log_add(acc, next[s + 1]);
                    if (can_skip_back(s)) acc = log_add(acc, next[s + 2]);
                    cur[s] = acc == kNegInf ? kNegInf : acc + at(t, s);
                  }
                }
                // dL/dlp[t][k] = -sum_{s: ext[s]=k} alpha*beta / (y_t(k) * P)
                const double g = self.grad[0];
                for (std::size_t t = 0; t < t_len; ++t) {
                  for (std::size_t s = 0; s < s_len; ++s) {
                    const double a = alpha[t * s_len + s];
                    const double b = beta[t * s_len + s];
                    if (a == kNegInf || b == kNegInf) continue;
                    const double occupancy =
                        std::exp(a + b - at(t, s) - log_likelihood);
                    grad[t * vocab + static_cast<std::size_t>(ext[s])] -=
                        g * occupancy;
                  }
                }
              }),
          LossStatus::ok};
}

std::vector<int> ctc_greedy_decode(const Tensor& log_probs,
                                   std::size_t input_length) {
  if (log_probs.rank() != 2 || input_length > log_probs.rows()) {
    throw ContractViolation("ctc_greedy_decode: bad shape or input_length");
  }
  const std::size_t vocab = log_probs.cols();
  auto lp = log_probs.data();
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < input_length; ++t) {
    const double* row = lp.data() + t * vocab;
    const int best = static_cast<int>(std::max_element(row, row + vocab) - row);
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  const std::size_t vocab = logits.numel();
  if (target >= vocab) {
    throw ContractViolation("cross_entropy: target " + std::to_string(target) +
                            " outside 0.." + std::to_string(vocab - 1));
  }
  Tensor row = logits.rank() == 2 && logits.rows() == 1
                   ? logits
                   : reshape(logits, {1, vocab});
  return scale(pick(log_softmax_rows(row), target), -1.0);
}

LossValue ee_joint_loss(std::span<const Tensor> per_exit_losses) {
  if (per_exit_losses.empty()) {
    throw ContractViolation("ee_joint_loss: need at least one exit");
  }
  for (const auto& l : per_exit_losses) {
    if (!std::isfinite(l.item())) return infinite(LossStatus::non_finite);
  }
  Tensor total = per_exit_losses[0];
  for (std::size_t i = 1; i < per_exit_losses.size(); ++i) {
    total = add(total, per_exit_losses[i]);
  }
  return {scale(total, 1.0 / static_cast<double>(per_exit_losses.size())),
          LossStatus::ok};
}

}  // namespace idld
