#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "idld/errors.hpp"
#include "idld/metrics.hpp"
#include "oracles.hpp"

using namespace idld;

namespace {

ForwardTrace trace_with(std::vector<std::uint8_t> bits, std::size_t frames) {
  ForwardTrace t;
  t.mask.bits = std::move(bits);
  t.executed_layers = t.mask.popcount();
  t.frames = frames;
  return t;
}

ModelConfig small_config() {
  ModelConfig c;
  c.num_layers = 4;
  c.d_in = 3;
  c.d_model = 8;
  c.num_heads = 2;
  c.d_ff = 16;
  c.num_outputs = 5;
  return c;
}

}  // namespace

TEST(Wer, IdenticalIsZero) {
  EXPECT_EQ(word_error_rate("the cat sat", "the cat sat"), 0.0);
}

TEST(Wer, OneDeletionOfThree) {
  EXPECT_EQ(word_error_rate("a b c", "a c"), 1.0 / 3.0);
}

TEST(Wer, EmptyReferenceIsContractViolation) {
  EXPECT_THROW(word_error_rate("", "a"), ContractViolation);
  EXPECT_THROW(word_error_rate<int>(std::vector<int>{}, std::vector<int>{1}), ContractViolation);
}

TEST(Wer, InsertionsCanExceedOne) {
  EXPECT_EQ(word_error_rate("a", "b c d"), 3.0);
}

TEST(EditDistance, MatchesExhaustiveSearch) {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> a(static_cast<std::size_t>(rng.uniform_int(0, 6)));
    std::vector<int> b(static_cast<std::size_t>(rng.uniform_int(0, 6)));
    for (int& x : a) x = static_cast<int>(rng.uniform_int(0, 3));
    for (int& x : b) x = static_cast<int>(rng.uniform_int(0, 3));
    const std::size_t d = edit_distance<int>(a, b);
    EXPECT_EQ(d, oracle::edit_distance_search(a, 0, b, 0));
    EXPECT_EQ(d, edit_distance<int>(b, a));
  }
}

TEST(Accuracy, Counts) {
  const std::vector<int> t{1, 2, 3, 4};
  EXPECT_EQ(accuracy(t, t), 1.0);
  EXPECT_EQ(accuracy(std::vector<int>{0, 0, 0, 0}, t), 0.0);
  EXPECT_EQ(accuracy(std::vector<int>{1, 2, 3, 0}, t), 0.75);
}

TEST(Accuracy, LengthMismatch) {
  EXPECT_THROW(accuracy(std::vector<int>{1}, std::vector<int>{1, 2}), ContractViolation);
}

TEST(Entropy, UniformRowsGiveLogV) {
  for (std::size_t v : {2u, 3u, 7u, 29u}) {
    std::vector<double> p(3 * v, 1.0 / static_cast<double>(v));
    EXPECT_DOUBLE_EQ(avg_entropy(p, v, 3), std::log(static_cast<double>(v)));
  }
}

TEST(Entropy, OneHotRowsGiveZero) {
  EXPECT_EQ(avg_entropy(std::vector<double>{0, 1, 0, 1, 0, 0}, 3, 2), 0.0);
}

TEST(Entropy, ThreeTermRow) {
  const double expect = -(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25));
  EXPECT_NEAR(avg_entropy(std::vector<double>{0.5, 0.25, 0.25}, 3, 1), expect, 1e-15);
}

TEST(Entropy, OnlyValidRowsCount) {
  const std::vector<double> p{1, 0, 0.5, 0.5, 0.25, 0.75};
  EXPECT_EQ(avg_entropy(p, 2, 1), 0.0);
}

TEST(Entropy, RowSumViolation) {
  EXPECT_THROW(avg_entropy(std::vector<double>{0.5, 0.4}, 2, 1), ContractViolation);
}

TEST(Entropy, BoundedByLogV) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = oracle::random_prob_rows(4, 5, rng);
    const double h = avg_entropy(p, 5, 4);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(5.0) + 1e-12);
  }
}

TEST(Macs, HandEvaluation) { EXPECT_EQ(macs_per_layer(2, 4, 8), 288u); }

TEST(Macs, FfnWidthIsLinear) {
  EXPECT_EQ(macs_per_layer(5, 6, 20) - macs_per_layer(5, 6, 10), 2u * 5 * 6 * 10);
}

TEST(Macs, NoFramesNoWork) { EXPECT_EQ(macs_per_layer(0, 64, 128), 0u); }

TEST(Macs, AffineInPopcount) {
  const ModelConfig c = small_config();
  const std::uint64_t base = sample_macs(c, trace_with({0, 0, 0, 0}, 7)).total();
  const std::uint64_t slope = macs_per_layer(7, c.d_model, c.d_ff);
  const std::vector<std::vector<std::uint8_t>> masks{
      {1, 0, 0, 0}, {0, 1, 1, 0}, {1, 0, 1, 1}, {1, 1, 1, 1}};
  for (const auto& m : masks) {
    const auto t = trace_with(m, 7);
    EXPECT_EQ(sample_macs(c, t).total(), base + t.mask.popcount() * slope);
  }
}

TEST(Macs, SelectorCostIsSeparate) {
  const ModelConfig c = small_config();
  auto t = trace_with({1, 1, 0, 0}, 5);
  const auto without = sample_macs(c, t);
  t.selector_used = true;
  const auto with = sample_macs(c, t);
  EXPECT_EQ(without.selector, 0u);
  EXPECT_EQ(with.selector, 5u * c.selector.channels * c.d_model * c.selector.kernel_width +
                               c.selector.channels * c.selector.pooled_len * c.num_layers);
  EXPECT_EQ(with.total() - without.total(), with.selector);
}

TEST(ReportRow, FullMaskRunsEveryLayer) {
  const ModelConfig c = small_config();
  const std::vector<ForwardTrace> traces{trace_with({1, 1, 1, 1}, 6)};
  const RunReport r = report_row(traces, {"accuracy", 0.5, 0.0}, c, "full", 3, "abc");
  EXPECT_EQ(r.exec_layers_mean, 4.0);
  EXPECT_EQ(r.macs_per_sample, sample_macs(c, traces[0]).total());
}

TEST(ReportRow, NeighbouringPopcountsDifferByOneLayer) {
  const ModelConfig c = small_config();
  const std::vector<ForwardTrace> a{trace_with({1, 0, 1, 0}, 6)};
  const std::vector<ForwardTrace> b{trace_with({1, 1, 1, 0}, 6)};
  const auto ra = report_row(a, {"accuracy", 0, 0}, c, "p", 0, "");
  const auto rb = report_row(b, {"accuracy", 0, 0}, c, "p", 0, "");
  EXPECT_EQ(rb.macs_per_sample - ra.macs_per_sample, macs_per_layer(6, c.d_model, c.d_ff));
}

TEST(ReportRow, EarlyExitCountsHeadsAlongPrefix) {
  ModelConfig c = small_config();
  c.ee_enabled = true;
  c.task = TaskKind::ctc;
  auto t = trace_with({1, 1, 1, 0}, 6);
  t.exit_index = 3;
  t.heads_evaluated = 3;
  const std::vector<ForwardTrace> traces{t};
  const auto r = report_row(traces, {"wer", 0, 0}, c, "ee", 0, "");
  EXPECT_EQ(r.exec_layers_mean, 3.0);
  const std::uint64_t expect = 6u * c.d_in * c.d_model +
                               3 * macs_per_layer(6, c.d_model, c.d_ff) +
                               3u * 6 * c.d_model * c.num_outputs;
  EXPECT_EQ(r.macs_per_sample, expect);
}

TEST(ReportRow, MaskLengthMustMatchConfig) {
  const std::vector<ForwardTrace> traces{trace_with({1, 1}, 3)};
  EXPECT_THROW(report_row(traces, {"accuracy", 0, 0}, small_config(), "p", 0, ""),
               ContractViolation);
}

TEST(ReportCsv, HeaderAndRow) {
  RunReport r;
  r.policy = "idld-topk";
  r.n_dropped = 2;
  r.k_mean = 4;
  r.metric_name = "accuracy";
  r.metric_value = 0.875;
  r.exec_layers_mean = 4;
  r.macs_per_sample = 1234;
  r.seed = 7;
  r.config_hash = "00ff";
  std::ostringstream os;
  const std::vector<RunReport> rows{r};
  write_report_csv(os, rows);
  EXPECT_EQ(os.str(), std::string(kReportCsvHeader) +
                          "\nidld-topk,2,4,accuracy,0.875,0,4,1234,7,00ff\n");
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}
