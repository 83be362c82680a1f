#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "idld/tensor.hpp"

namespace idld {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // 0 -> plain Adam
};

/// Per-parameter moment accumulators, index-aligned with the parameter list.
struct OptimState {
  AdamWConfig hyper;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

OptimState make_optim_state(std::span<const Tensor> params,
                            const AdamWConfig& hyper);

/// One decoupled-weight-decay Adam step using each parameter's current grad
/// (a parameter never reached by backward is treated as having zero grad).
void adamw_step(std::span<Tensor> params, OptimState& state, double lr);

/// Same update on raw buffers; `grads[i]` may be empty (zero gradient).
void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads,
                OptimState& state, double lr);

/// Linear warmup to peak_lr, then step-wise exponential decay.
struct LrSchedule {
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 100;
  double decay_rate = 0.96;
  std::uint64_t decay_every = 100;
};

double lr_at(const LrSchedule& schedule, std::uint64_t step);

}  // namespace idld
