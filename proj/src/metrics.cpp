#include "idld/metrics.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace idld {

double word_error_rate(const std::string& ref, const std::string& hyp) {
  auto split = [](const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
  };
  const auto r = split(ref);
  const auto h = split(hyp);
  return word_error_rate<std::string>(r, h);
}

double accuracy(std::span<const int> predictions, std::span<const int> targets) {
  if (predictions.size() != targets.size()) {
    throw ContractViolation("accuracy: length mismatch");
  }
  if (targets.empty()) throw ContractViolation("accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    hits += predictions[i] == targets[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

double avg_entropy(std::span<const double> probs, std::size_t vocab,
                   std::size_t valid_len) {
  if (vocab == 0 || valid_len == 0 || valid_len * vocab > probs.size()) {
    throw ContractViolation("avg_entropy: bad dimensions");
  }
  // Per frame H = ln V - KL(p || uniform); the KL term is exactly zero for a
  // uniform row, and the running mean is exact for equal rows.
  const double log_v = std::log(static_cast<double>(vocab));
  double mean = 0.0;
  for (std::size_t t = 0; t < valid_len; ++t) {
    const double* row = probs.data() + t * vocab;
    double row_sum = 0.0, kl = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      row_sum += row[v];
      if (row[v] > 0.0) kl += row[v] * std::log(row[v] * static_cast<double>(vocab));
    }
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw ContractViolation("avg_entropy: row " + std::to_string(t) +
                              " sums to " + std::to_string(row_sum));
    }
    mean += (log_v - kl - mean) / static_cast<double>(t + 1);
  }
  return mean;
}

std::uint64_t macs_per_layer(std::uint64_t frames, std::uint64_t d_model,
                             std::uint64_t d_ff) {
  return 4 * frames * d_model * d_model + 2 * frames * frames * d_model +
         2 * frames * d_model * d_ff;
}

MacBreakdown sample_macs(const ModelConfig& c, const ForwardTrace& trace) {
  const std::uint64_t t = trace.frames;
  MacBreakdown m;
  m.frontend = t * c.d_in * c.d_model;
  m.encoder = trace.executed_layers * macs_per_layer(t, c.d_model, c.d_ff);
  if (trace.selector_used) {
    const auto& s = c.selector;
    m.selector = t * s.channels * c.d_model * s.kernel_width +
                 s.channels * s.pooled_len * c.num_layers;
  }
  const std::uint64_t head_rows = c.task == TaskKind::ctc ? t : 1;
  m.heads = trace.heads_evaluated * head_rows * c.d_model * c.num_outputs;
  return m;
}

RunReport report_row(std::span<const ForwardTrace> traces, const MetricValue& metric,
                     const ModelConfig& config, std::string policy,
                     std::uint64_t seed, std::string config_hash,
                     std::optional<std::size_t> n_dropped) {
  if (traces.empty()) throw ContractViolation("report_row: no traces");
  double layers = 0.0, macs = 0.0;
  for (const auto& tr : traces) {
    if (tr.mask.size() != config.num_layers) {
      throw ContractViolation("report_row: trace mask does not match config N");
    }
    layers += static_cast<double>(tr.executed_layers);
    macs += static_cast<double>(sample_macs(config, tr).total());
  }
  const double count = static_cast<double>(traces.size());
  RunReport r;
  r.policy = std::move(policy);
  r.n_dropped = n_dropped;
  r.k_mean = layers / count;
  r.metric_name = metric.name;
  r.metric_value = metric.value;
  r.metric_std = metric.std;
  r.exec_layers_mean = layers / count;
  r.macs_per_sample = static_cast<std::uint64_t>(std::llround(macs / count));
  r.seed = seed;
  r.config_hash = std::move(config_hash);
  return r;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_report_csv(std::ostream& os, std::span<const RunReport> rows,
                      bool header) {
  if (header) os << kReportCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.policy << ','
       << (r.n_dropped ? std::to_string(*r.n_dropped) : std::string()) << ','
       << format_double(r.k_mean) << ',' << r.metric_name << ','
       << format_double(r.metric_value) << ',' << format_double(r.metric_std)
       << ',' << format_double(r.exec_layers_mean) << ',' << r.macs_per_sample
       << ',' << r.seed << ',' << r.config_hash << '\n';
  }
}

}  // namespace idld
