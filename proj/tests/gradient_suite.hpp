#pragma once

// Finite-difference checks for every differentiable primitive, shared by the
// unit tests and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "idld/losses.hpp"
#include "idld/nn.hpp"
#include "idld/tensor.hpp"
#include "oracles.hpp"

namespace gradient_suite {

using idld::Rng;
using idld::Shape;
using idld::Tensor;

struct Case {
  std::string name;
  double rel_error;
};

// Weighted sum with fixed random weights, so every output coordinate carries
// a distinct non-zero gradient.
inline Tensor probe(const Tensor& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Tensor w = oracle::random_tensor(out.shape(), rng, 0.5, 1.5);
  return idld::sum(idld::mul(out, w));
}

using Fn = std::function<Tensor(const Tensor&)>;

inline double check(const Fn& f, Shape shape, std::uint64_t seed = 1, double lo = -1.0,
                    double hi = 1.0) {
  Rng rng(seed);
  const Tensor x0 = oracle::random_tensor(std::move(shape), rng, lo, hi);
  return idld::finite_diff_check([&](const Tensor& x) { return probe(f(x)); }, x0, 1e-5);
}

inline std::vector<Case> primitive_cases() {
  using namespace idld;
  std::vector<Case> out;
  auto add_case = [&](std::string name, double err) { out.push_back({std::move(name), err}); };

  Rng rng(11);
  const Tensor a34 = oracle::random_tensor({3, 4}, rng);
  add_case("add", check([&](const Tensor& x) { return add(x, a34); }, {3, 4}));
  add_case("sub", check([&](const Tensor& x) { return sub(a34, x); }, {3, 4}));
  add_case("mul", check([&](const Tensor& x) { return mul(x, a34); }, {3, 4}));
  add_case("mul-self", check([](const Tensor& x) { return mul(x, x); }, {3, 4}));
  add_case("scale", check([](const Tensor& x) { return scale(x, -2.5); }, {3, 4}));
  add_case("exp", check([](const Tensor& x) { return exp(x); }, {3, 4}));
  add_case("log", check([](const Tensor& x) { return log(x); }, {3, 4}, 2, 0.5, 2.0));
  add_case("gelu", check([](const Tensor& x) { return gelu(x); }, {3, 4}, 3, -3, 3));

  const Tensor bias4 = oracle::random_tensor({4}, rng);
  const Tensor s = Tensor::scalar(0.7);
  add_case("add_rowwise/bias", check([&](const Tensor& b) { return add_rowwise(a34, b); }, {4}));
  add_case("add_rowwise/x", check([&](const Tensor& x) { return add_rowwise(x, bias4); }, {3, 4}));
  add_case("scalar_mul/s", check([&](const Tensor& x) { return scalar_mul(x, a34); }, {1}));
  add_case("scalar_mul/x", check([&](const Tensor& x) { return scalar_mul(s, x); }, {3, 4}));

  const Tensor b45 = oracle::random_tensor({4, 5}, rng);
  const Tensor c54 = oracle::random_tensor({5, 4}, rng);
  add_case("matmul/a", check([&](const Tensor& x) { return matmul(x, b45); }, {3, 4}));
  add_case("matmul/b", check([&](const Tensor& x) { return matmul(a34, x); }, {4, 5}));
  add_case("matmul_bt/b", check([&](const Tensor& x) { return matmul_bt(a34, x); }, {5, 4}));
  add_case("matmul_bt/a", check([&](const Tensor& x) { return matmul_bt(x, c54); }, {3, 4}));

  add_case("softmax_rows", check([](const Tensor& x) { return softmax_rows(x); }, {3, 5}, 4, -2, 2));
  add_case("softmax_rows/masked",
           check([](const Tensor& x) { return softmax_rows(x, 3); }, {3, 5}, 5, -2, 2));
  add_case("log_softmax_rows",
           check([](const Tensor& x) { return log_softmax_rows(x); }, {3, 5}, 6, -2, 2));

  const Tensor x36 = oracle::random_tensor({3, 6}, rng);
  const Tensor g6 = oracle::random_tensor({6}, rng, 0.5, 1.5);
  const Tensor b6 = oracle::random_tensor({6}, rng);
  add_case("layer_norm/x",
           check([&](const Tensor& v) { return layer_norm(v, g6, b6, 1e-5); }, {3, 6}));
  add_case("layer_norm/scale",
           check([&](const Tensor& v) { return layer_norm(x36, v, b6, 1e-5); }, {6}, 7, 0.5, 1.5));
  add_case("layer_norm/shift",
           check([&](const Tensor& v) { return layer_norm(x36, g6, v, 1e-5); }, {6}));

  add_case("sum", check([](const Tensor& x) { return sum(x); }, {3, 4}));
  add_case("mean", check([](const Tensor& x) { return mean(x); }, {3, 4}));
  add_case("mean_rows", check([](const Tensor& x) { return mean_rows(x, 2); }, {3, 4}, 2));

  const Tensor o32 = oracle::random_tensor({3, 2}, rng);
  add_case("reshape", check([](const Tensor& x) { return reshape(x, {4, 3}); }, {3, 4}));
  add_case("slice_rows", check([](const Tensor& x) { return slice_rows(x, 1, 2); }, {3, 4}));
  add_case("slice_cols", check([](const Tensor& x) { return slice_cols(x, 1, 2); }, {3, 4}));
  add_case("concat_cols",
           check([&](const Tensor& x) { return concat_cols({x, o32, x}); }, {3, 4}));
  add_case("pick", check([](const Tensor& x) { return pick(x, 5); }, {3, 4}));

  const Tensor x53 = oracle::random_tensor({5, 3}, rng);
  const Tensor k233 = oracle::random_tensor({2, 3, 3}, rng);
  const Tensor b2 = oracle::random_tensor({2}, rng);
  add_case("conv1d_same/x", check([&](const Tensor& v) { return conv1d_same(v, k233, b2); }, {5, 3}));
  add_case("conv1d_same/kernel",
           check([&](const Tensor& v) { return conv1d_same(x53, v, b2); }, {2, 3, 3}));
  add_case("conv1d_same/bias",
           check([&](const Tensor& v) { return conv1d_same(x53, k233, v); }, {2}));

  add_case("adaptive_avg_pool1d/halves",
           check([](const Tensor& x) { return adaptive_avg_pool1d(x, 2); }, {3, 2}));
  add_case("adaptive_avg_pool1d/overlap",
           check([](const Tensor& x) { return adaptive_avg_pool1d(x, 4); }, {7, 3}));
  add_case("adaptive_avg_pool1d/upsample",
           check([](const Tensor& x) { return adaptive_avg_pool1d(x, 5); }, {3, 2}));

  // Loss functions.
  const std::vector<int> target{1, 2};
  add_case("ctc_loss", idld::finite_diff_check(
                           [&](const Tensor& x) {
                             return ctc_loss(log_softmax_rows(x), target, 5).value;
                           },
                           oracle::random_tensor({5, 3}, rng), 1e-5));
  add_case("cross_entropy",
           idld::finite_diff_check([](const Tensor& x) { return cross_entropy(x, 2); },
                                   oracle::random_tensor({1, 4}, rng), 1e-5));
  add_case("ee_joint_loss", idld::finite_diff_check(
                                [](const Tensor& x) {
                                  const std::vector<Tensor> parts{
                                      cross_entropy(slice_rows(x, 0, 1), 0),
                                      cross_entropy(slice_rows(x, 1, 1), 1),
                                      cross_entropy(slice_rows(x, 2, 1), 2)};
                                  return ee_joint_loss(parts).value;
                                },
                                oracle::random_tensor({3, 4}, rng), 1e-5));

  // Encoder sublayers.
  AttentionParams attn{oracle::random_tensor({4, 4}, rng), oracle::random_tensor({4, 4}, rng),
                       oracle::random_tensor({4, 4}, rng), oracle::random_tensor({4, 4}, rng),
                       2};
  add_case("multi_head_attention/x",
           check([&](const Tensor& x) { return multi_head_attention(x, attn, 3); }, {3, 4}));
  add_case("multi_head_attention/padded",
           check([&](const Tensor& x) { return multi_head_attention(x, attn, 2); }, {3, 4}));
  const Tensor x34 = oracle::random_tensor({3, 4}, rng);
  add_case("multi_head_attention/query", check(
                                              [&](const Tensor& w) {
                                                AttentionParams q = attn;
                                                q.query = w;
                                                return multi_head_attention(x34, q, 3);
                                              },
                                              {4, 4}));
  FfnParams ffn_p{oracle::random_tensor({4, 6}, rng), oracle::random_tensor({6}, rng),
                  oracle::random_tensor({6, 4}, rng), oracle::random_tensor({4}, rng)};
  add_case("ffn/x", check([&](const Tensor& x) { return ffn(x, ffn_p); }, {3, 4}));
  add_case("ffn/w1", check(
                         [&](const Tensor& w) {
                           FfnParams q = ffn_p;
                           q.w1 = w;
                           return ffn(x34, q);
                         },
                         {4, 6}));
  return out;
}

}  // namespace gradient_suite
