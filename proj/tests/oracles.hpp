#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They favour obviousness over speed.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "idld/model.hpp"
#include "idld/rng.hpp"
#include "idld/tensor.hpp"

namespace oracle {

// Collapse repeats, then drop blanks (index 0).
inline std::vector<int> ctc_collapse(const std::vector<int>& path) {
  std::vector<int> out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != 0) out.push_back(s);
    prev = s;
  }
  return out;
}

// -log of the summed probability of every length-T path over V symbols that
// collapses to `target`. probs is T x V row-major.
inline double ctc_brute_force(const std::vector<double>& probs, std::size_t frames,
                              std::size_t vocab, const std::vector<int>& target) {
  std::vector<int> path(frames, 0);
  double total = 0.0;
  while (true) {
    if (ctc_collapse(path) == target) {
      double p = 1.0;
      for (std::size_t t = 0; t < frames; ++t) p *= probs[t * vocab + path[t]];
      total += p;
    }
    std::size_t t = 0;
    while (t < frames && path[t] == static_cast<int>(vocab) - 1) path[t++] = 0;
    if (t == frames) break;
    ++path[t];
  }
  return total > 0.0 ? -std::log(total) : std::numeric_limits<double>::infinity();
}

// Minimum edit-script length by exhaustive recursion over the three moves.
inline std::size_t edit_distance_search(const std::vector<int>& a, std::size_t i,
                                        const std::vector<int>& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  if (a[i] == b[j]) return edit_distance_search(a, i + 1, b, j + 1);
  const std::size_t sub = edit_distance_search(a, i + 1, b, j + 1);
  const std::size_t del = edit_distance_search(a, i + 1, b, j);
  const std::size_t ins = edit_distance_search(a, i, b, j + 1);
  return 1 + std::min(sub, std::min(del, ins));
}

inline std::vector<double> random_values(std::size_t n, idld::Rng& rng,
                                         double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * rng.uniform01();
  return v;
}

inline idld::Tensor random_tensor(idld::Shape shape, idld::Rng& rng, double lo = -1.0,
                                  double hi = 1.0, bool requires_grad = false) {
  const std::size_t n = idld::shape_numel(shape);
  return idld::Tensor::from(std::move(shape), random_values(n, rng, lo, hi),
                            requires_grad);
}

// Random probability rows (T x V), each summing to 1.
inline std::vector<double> random_prob_rows(std::size_t frames, std::size_t vocab,
                                            idld::Rng& rng) {
  std::vector<double> p(frames * vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    double s = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      p[t * vocab + v] = 0.05 + rng.uniform01();
      s += p[t * vocab + v];
    }
    for (std::size_t v = 0; v < vocab; ++v) p[t * vocab + v] /= s;
  }
  return p;
}

// Max relative error between backward() gradients of `loss` with respect to
// every coordinate of `param` and central differences, perturbing the leaf in
// place. Coordinates whose central difference and analytic value are both
// below `floor` in magnitude are skipped as numerically zero.
inline double param_grad_error(idld::Tensor param, const std::function<idld::Tensor()>& loss,
                               double eps = 1e-5, double floor = 1e-9) {
  param.zero_grad();
  idld::Tensor l = loss();
  idld::backward(l);
  std::vector<double> analytic(param.numel(), 0.0);
  if (param.has_grad()) {
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = param.grad()[i];
  }
  auto data = param.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + eps;
    const double up = loss().item();
    data[i] = orig - eps;
    const double down = loss().item();
    data[i] = orig;
    const double central = (up - down) / (2.0 * eps);
    if (std::abs(central) < floor && std::abs(analytic[i]) < floor) continue;
    worst = std::max(worst, std::abs(analytic[i] - central) /
                                std::max(1e-12, std::abs(central)));
  }
  return worst;
}

}  // namespace oracle
