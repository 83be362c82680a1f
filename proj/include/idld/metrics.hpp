#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "idld/errors.hpp"
#include "idld/model.hpp"

namespace idld {

/// Levenshtein distance with unit substitution/insertion/deletion costs.
template <typename Token>
std::size_t edit_distance(std::span<const Token> ref, std::span<const Token> hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

template <typename Token>
double word_error_rate(std::span<const Token> ref, std::span<const Token> hyp) {
  if (ref.empty()) throw ContractViolation("word_error_rate: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) /
         static_cast<double>(ref.size());
}

/// Whitespace-tokenized WER over two transcripts.
double word_error_rate(const std::string& ref, const std::string& hyp);

double accuracy(std::span<const int> predictions, std::span<const int> targets);

/// Mean over the first valid_len rows of -sum p ln p (nats, 0 ln 0 = 0).
/// Each row must sum to 1 within 1e-6.
double avg_entropy(std::span<const double> probs, std::size_t vocab,
                   std::size_t valid_len);

/// Multiply-accumulates of one encoder layer over T frames:
/// 4 T d^2 (Q, K, V, O) + 2 T^2 d (scores, weighted sum) + 2 T d d_ff (FFN).
std::uint64_t macs_per_layer(std::uint64_t frames, std::uint64_t d_model,
                             std::uint64_t d_ff);

struct MacBreakdown {
  std::uint64_t frontend = 0;
  std::uint64_t encoder = 0;
  std::uint64_t selector = 0;
  std::uint64_t heads = 0;

  std::uint64_t total() const { return frontend + encoder + selector + heads; }
};

/// MACs spent by one forward pass described by `trace`.
MacBreakdown sample_macs(const ModelConfig& config, const ForwardTrace& trace);

struct RunReport {
  std::string policy;
  std::optional<std::size_t> n_dropped;
  double k_mean = 0.0;
  std::string metric_name;
  double metric_value = 0.0;
  double metric_std = 0.0;
  double exec_layers_mean = 0.0;
  std::uint64_t macs_per_sample = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct MetricValue {
  std::string name;  // "wer" or "accuracy"
  double value = 0.0;
  double std = 0.0;
};

/// Aggregates per-sample traces into a report row.
RunReport report_row(std::span<const ForwardTrace> traces, const MetricValue& metric,
                     const ModelConfig& config, std::string policy,
                     std::uint64_t seed, std::string config_hash,
                     std::optional<std::size_t> n_dropped = std::nullopt);

inline constexpr const char* kReportCsvHeader =
    "policy,n,k_mean,metric_name,metric_value,metric_std,exec_layers_mean,"
    "macs_per_sample,seed,config_hash";

void write_report_csv(std::ostream& os, std::span<const RunReport> rows,
                      bool header = true);

/// Shortest decimal that round-trips the double.
std::string format_double(double v);

}  // namespace idld
