#include "idld/optim.hpp"

#include <cmath>

#include "idld/errors.hpp"

namespace idld {

OptimState make_optim_state(std::span<const Tensor> params,
                            const AdamWConfig& hyper) {
  OptimState state;
  state.hyper = hyper;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0);
    state.second_moment.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adamw_step(std::span<Tensor> params, OptimState& state, double lr) {
  std::vector<std::span<double>> values;
  std::vector<std::span<const double>> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (auto& p : params) {
    values.push_back(p.mutable_data());
    grads.push_back(p.grad());
  }
  adamw_step(values, grads, state, lr);
}

void adamw_step(std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads,
                OptimState& state, double lr) {
  if (lr < 0.0) throw ContractViolation("adamw_step: negative learning rate");
  if (params.size() != grads.size() ||
      params.size() != state.first_moment.size()) {
    throw ContractViolation("adamw_step: parameter/gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != state.first_moment[i].size() ||
        (!grads[i].empty() && grads[i].size() != params[i].size())) {
      throw ContractViolation("adamw_step: shape mismatch at parameter " +
                              std::to_string(i));
    }
  }

  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  const double decay = 1.0 - lr * h.weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i].empty() ? 0.0 : grads[i][j];
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] *= decay;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
    }
  }
}

double lr_at(const LrSchedule& s, std::uint64_t step) {
  if (s.decay_every == 0) throw ContractViolation("lr_at: decay_every must be > 0");
  if (step < s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) /
           static_cast<double>(s.warmup_steps);
  }
  const auto periods = (step - s.warmup_steps) / s.decay_every;
  return s.peak_lr * std::pow(s.decay_rate, static_cast<double>(periods));
}

}  // namespace idld
