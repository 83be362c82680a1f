#include <gtest/gtest.h>

#include <cmath>

#include "idld/errors.hpp"
#include "idld/nn.hpp"
#include "oracles.hpp"

using namespace idld;

namespace {

Tensor eye(std::size_t d) {
  std::vector<double> v(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
  return Tensor::from({d, d}, v);
}

AttentionParams identity_attention(std::size_t d, std::size_t heads = 1) {
  return {eye(d), eye(d), eye(d), eye(d), heads};
}

double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

AttentionParams random_attention(std::size_t d, std::size_t heads, Rng& rng) {
  return {oracle::random_tensor({d, d}, rng), oracle::random_tensor({d, d}, rng),
          oracle::random_tensor({d, d}, rng), oracle::random_tensor({d, d}, rng), heads};
}

}  // namespace

TEST(Attention, SingleFrameReturnsValue) {
  const Tensor x = Tensor::from({1, 3}, {0.3, -1.2, 2.0});
  const Tensor y = multi_head_attention(x, identity_attention(3), 1);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-15);
}

TEST(Attention, IdenticalRowsAreFixedPoints) {
  const Tensor x = Tensor::from({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4});
  const Tensor y = multi_head_attention(x, identity_attention(4, 2), 2);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-14);
}

TEST(Attention, HandWorkedTwoByTwo) {
  const Tensor x = Tensor::from({2, 2}, {1, 0, 0, 1});
  AttentionParams p{Tensor::from({2, 2}, {1, 0, 0, 2}), eye(2),
                    Tensor::from({2, 2}, {1, 2, 3, 4}), eye(2), 1};
  const Tensor y = multi_head_attention(x, p, 2);
  // Q = diag(1, 2), K = I, scores = Q / sqrt(2), V = [[1,2],[3,4]].
  const double s = std::sqrt(2.0);
  const double a0 = std::exp(1.0 / s) / (std::exp(1.0 / s) + 1.0);
  const double a1 = 1.0 / (1.0 + std::exp(2.0 / s));
  EXPECT_NEAR(y.at(0, 0), a0 * 1 + (1 - a0) * 3, 1e-14);
  EXPECT_NEAR(y.at(0, 1), a0 * 2 + (1 - a0) * 4, 1e-14);
  EXPECT_NEAR(y.at(1, 0), a1 * 1 + (1 - a1) * 3, 1e-14);
  EXPECT_NEAR(y.at(1, 1), a1 * 2 + (1 - a1) * 4, 1e-14);
}

TEST(Attention, HeadCountMustDivideWidth) {
  EXPECT_THROW(multi_head_attention(Tensor::zeros({2, 3}), identity_attention(3, 2), 2),
               ConfigError);
}

TEST(Attention, PaddedRowsDoNotLeakIntoValidRows) {
  Rng rng(31);
  const auto params = random_attention(4, 2, rng);
  Tensor x = oracle::random_tensor({5, 4}, rng);
  std::vector<double> garbage(x.data().begin(), x.data().end());
  for (std::size_t i = 3 * 4; i < garbage.size(); ++i) garbage[i] = 1e3 * (i % 7) - 50.0;
  const Tensor y1 = multi_head_attention(x, params, 3);
  const Tensor y2 = multi_head_attention(Tensor::from({5, 4}, garbage), params, 3);
  for (std::size_t i = 0; i < 3 * 4; ++i) EXPECT_EQ(y1.at(i), y2.at(i));
}

TEST(Attention, GradientsMatchFiniteDifferences) {
  Rng rng(32);
  const auto p = random_attention(4, 2, rng);
  Rng xr(33);
  const Tensor x0 = oracle::random_tensor({3, 4}, xr);
  const Tensor w = oracle::random_tensor({3, 4}, xr, 0.5, 1.5);
  EXPECT_LE(finite_diff_check(
                [&](const Tensor& x) { return sum(mul(multi_head_attention(x, p, 3), w)); }, x0,
                1e-5),
            1e-4);
  AttentionParams q = p;
  EXPECT_LE(finite_diff_check(
                [&](const Tensor& wq) {
                  q.query = wq;
                  return sum(mul(multi_head_attention(x0, q, 2), w));
                },
                p.query, 1e-5),
            1e-4);
}

TEST(Ffn, ZeroWeightsGiveZero) {
  const FfnParams p{Tensor::zeros({3, 5}), Tensor::zeros({5}), Tensor::zeros({5, 3}),
                    Tensor::zeros({3})};
  Rng rng(1);
  const Tensor y = ffn(oracle::random_tensor({2, 3}, rng), p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ffn, IdentityWeightsPassLargePositiveInput) {
  const FfnParams p{eye(3), Tensor::zeros({3}), eye(3), Tensor::zeros({3})};
  const Tensor x = Tensor::from({1, 3}, {10, 20, 30});
  const Tensor y = ffn(x, p);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-9);
}

TEST(Ffn, DirectEvaluationOnTwoDimensions) {
  const FfnParams p{Tensor::from({2, 2}, {0.1, -0.2, 0.3, 0.4}), Tensor::from({2}, {0.05, -0.1}),
                    Tensor::from({2, 2}, {0.5, 0.6, -0.7, 0.8}), Tensor::from({2}, {0.01, 0.02})};
  const double x0 = 0.8, x1 = -0.6;
  const double h0 = gelu_ref(x0 * 0.1 + x1 * 0.3 + 0.05);
  const double h1 = gelu_ref(x0 * -0.2 + x1 * 0.4 - 0.1);
  const Tensor y = ffn(Tensor::from({1, 2}, {x0, x1}), p);
  EXPECT_NEAR(y.at(0), h0 * 0.5 + h1 * -0.7 + 0.01, 1e-15);
  EXPECT_NEAR(y.at(1), h0 * 0.6 + h1 * 0.8 + 0.02, 1e-15);
}

TEST(Ffn, GradientsMatchFiniteDifferences) {
  Rng rng(41);
  FfnParams p{oracle::random_tensor({3, 5}, rng), oracle::random_tensor({5}, rng),
              oracle::random_tensor({5, 3}, rng), oracle::random_tensor({3}, rng)};
  const Tensor x0 = oracle::random_tensor({2, 3}, rng);
  const Tensor w = oracle::random_tensor({2, 3}, rng, 0.5, 1.5);
  EXPECT_LE(finite_diff_check([&](const Tensor& x) { return sum(mul(ffn(x, p), w)); }, x0, 1e-5),
            1e-4);
  FfnParams q = p;
  EXPECT_LE(finite_diff_check(
                [&](const Tensor& w1) {
                  q.w1 = w1;
                  return sum(mul(ffn(x0, q), w));
                },
                p.w1, 1e-5),
            1e-4);
}

TEST(SpecMask, ZeroWidthsLeaveInputUnchanged) {
  Rng data(5), rng(6);
  const Tensor x = oracle::random_tensor({4, 4}, data);
  const Tensor y = spec_mask(x, 0, 0, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(SpecMask, SeededMaskIsReproducible) {
  const Tensor x = Tensor::full({4, 4}, 1.0);
  Rng a(17), b(17);
  const Tensor ya = spec_mask(x, 2, 2, a);
  const Tensor yb = spec_mask(x, 2, 2, b);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(ya.at(i), yb.at(i));
}

TEST(SpecMask, MasksOneContiguousSpanPerAxis) {
  const Tensor x = Tensor::full({6, 5}, 1.0);
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor y = spec_mask(x, 3, 2, rng);
    // A row is fully masked only inside the time span; count such rows and
    // check they are contiguous.
    int first = -1, last = -1, count = 0;
    for (int t = 0; t < 6; ++t) {
      bool all_zero = true;
      for (int f = 0; f < 5; ++f) all_zero = all_zero && y.at(t, f) == 0.0;
      if (all_zero) {
        if (first < 0) first = t;
        last = t;
        ++count;
      }
    }
    if (count > 0) {
      EXPECT_EQ(last - first + 1, count);
    }
    EXPECT_LE(count, 3);
  }
}

TEST(SpecMask, MaskedFractionMatchesExpectedWidths) {
  const std::size_t T = 10, D = 8, max_t = 4, max_f = 3, draws = 1000;
  const Tensor x = Tensor::full({T, D}, 1.0);
  Rng rng(2024);
  std::vector<double> counts;
  for (std::size_t i = 0; i < draws; ++i) {
    const Tensor y = spec_mask(x, max_t, max_f, rng);
    double zeros = 0;
    for (double v : y.data()) zeros += v == 0.0 ? 1 : 0;
    counts.push_back(zeros);
  }
  // Widths uniform on {0..max}: E[w_t] = max_t/2, E[w_f] = max_f/2, independent.
  const double et = max_t / 2.0, ef = max_f / 2.0;
  const double expected = et * D + ef * T - et * ef;
  double mean = 0, var = 0;
  for (double c : counts) mean += c;
  mean /= draws;
  for (double c : counts) var += (c - mean) * (c - mean);
  const double se = std::sqrt(var / (draws - 1) / draws);
  EXPECT_LE(std::abs(mean - expected), 4 * se) << "mean " << mean << " expected " << expected;
}

TEST(Linear, AddsBiasToEveryRow) {
  const Tensor y = linear(Tensor::from({2, 2}, {1, 2, 3, 4}), eye(2), Tensor::from({2}, {10, 20}));
  EXPECT_EQ(y.at(1, 0), 13.0);
  EXPECT_EQ(y.at(1, 1), 24.0);
}
