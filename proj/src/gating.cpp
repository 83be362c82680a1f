#include "idld/gating.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "idld/errors.hpp"

namespace idld {

namespace {

void attach_multipliers(GateMask& mask, const GateScores& scores) {
  mask.multipliers.reserve(mask.bits.size());
  for (std::size_t j = 0; j < mask.bits.size(); ++j) {
    mask.multipliers.push_back(
        straight_through(scores.values, j, mask.bits[j] ? 1.0 : 0.0));
  }
}

}  // namespace

std::string_view to_string(MaskOrigin origin) {
  switch (origin) {
    case MaskOrigin::full:
      return "full";
    case MaskOrigin::top_k:
      return "top_k";
    case MaskOrigin::threshold:
      return "threshold";
    case MaskOrigin::random_bernoulli:
      return "random_bernoulli";
    case MaskOrigin::random_exact:
      return "random_exact";
    case MaskOrigin::early_exit:
      return "early_exit";
  }
  return "unknown";
}

std::size_t GateMask::popcount() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1));
}

GateMask full_mask(std::size_t num_layers) {
  return GateMask{std::vector<std::uint8_t>(num_layers, 1), MaskOrigin::full, {}};
}

GateScores selector_forward(const Tensor& x, const SelectorParams& p) {
  if (x.rank() != 2 || x.rows() == 0) {
    throw ContractViolation("selector_forward: expected a non-empty T x d input");
  }
  Tensor h = layer_norm(x, p.norm);
  h = gelu(conv1d_same(h, p.kernel, p.bias));
  h = adaptive_avg_pool1d(h, p.pooled_len);
  h = reshape(h, {1, h.numel()});
  return GateScores{linear(h, p.proj, p.proj_bias)};
}

GateMask topk_binarize(const GateScores& scores, std::size_t k) {
  const std::size_t n = scores.size();
  if (k < 1 || k > n) {
    throw ContractViolation("topk_binarize: k=" + std::to_string(k) +
                            " outside 1.." + std::to_string(n));
  }
  auto g = scores.view();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  GateMask mask{std::vector<std::uint8_t>(n, 0), MaskOrigin::top_k, {}};
  for (std::size_t i = 0; i < k; ++i) mask.bits[order[i]] = 1;
  attach_multipliers(mask, scores);
  return mask;
}

GateMask threshold_binarize(const GateScores& scores, double gamma) {
  const std::size_t n = scores.size();
  if (n == 0) throw ContractViolation("threshold_binarize: empty scores");
  auto g = scores.view();
  GateMask mask{std::vector<std::uint8_t>(n, 0), MaskOrigin::threshold, {}};
  for (std::size_t j = 0; j < n; ++j) mask.bits[j] = g[j] > gamma ? 1 : 0;
  if (mask.popcount() == 0) {
    const auto best = std::max_element(g.begin(), g.end()) - g.begin();
    mask.bits[static_cast<std::size_t>(best)] = 1;
  }
  attach_multipliers(mask, scores);
  return mask;
}

std::size_t sample_k(std::size_t num_layers, Rng& rng) {
  if (num_layers < 1) throw ContractViolation("sample_k: need at least one layer");
  return static_cast<std::size_t>(
      rng.uniform_int(1, static_cast<std::int64_t>(num_layers)));
}

GateMask random_gates_bernoulli(std::size_t num_layers, double p_drop,
                                Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) {
    throw ContractViolation("random_gates_bernoulli: p_drop outside [0, 1]");
  }
  if (num_layers < 1) throw ContractViolation("random_gates_bernoulli: no layers");
  GateMask mask{std::vector<std::uint8_t>(num_layers, 1),
                MaskOrigin::random_bernoulli, {}};
  for (auto& bit : mask.bits) bit = rng.uniform01() < p_drop ? 0 : 1;
  if (mask.popcount() == 0) {
    mask.bits[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(num_layers) - 1))] = 1;
  }
  return mask;
}

GateMask random_gates_exact(std::size_t num_layers, std::size_t num_dropped,
                            Rng& rng) {
  if (num_dropped >= num_layers) {
    throw ContractViolation("random_gates_exact: n=" + std::to_string(num_dropped) +
                            " must be < N=" + std::to_string(num_layers));
  }
  // Partial Fisher-Yates: the first (N - n) slots are the enabled layers.
  std::vector<std::size_t> idx(num_layers);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t keep = num_layers - num_dropped;
  for (std::size_t i = 0; i < keep; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(
        static_cast<std::int64_t>(i), static_cast<std::int64_t>(num_layers) - 1));
    std::swap(idx[i], idx[j]);
  }
  GateMask mask{std::vector<std::uint8_t>(num_layers, 0),
                MaskOrigin::random_exact, {}};
  for (std::size_t i = 0; i < keep; ++i) mask.bits[idx[i]] = 1;
  return mask;
}

}  // namespace idld
