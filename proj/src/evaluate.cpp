#include "idld/evaluate.hpp"

#include <cmath>
#include <numeric>

#include "idld/errors.hpp"
#include "idld/rng.hpp"

namespace idld {

namespace {

template <typename Run>
EvalOutcome evaluate_with(const Model& model, std::span<const Sample> samples, Run run) {
  if (samples.empty()) throw ContractViolation("evaluate: no samples");
  const ModelConfig& cfg = model.config();
  EvalOutcome out;
  std::size_t errors = 0, ref_words = 0, correct = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (const Sample& s : samples) {
    ForwardResult r = run(s);
    const LossValue loss = sample_loss(cfg, r.logits, s);
    if (loss.ok() && std::isfinite(loss.value.item())) {
      loss_sum += loss.value.item();
      ++loss_count;
    } else {
      ++out.non_finite_losses;
    }
    if (cfg.task == TaskKind::ctc) {
      const auto hyp = ctc_greedy_decode(log_softmax_rows(r.logits.detach()), s.frames);
      errors += edit_distance<int>(s.target, hyp);
      ref_words += s.target.size();
    } else {
      const auto v = r.logits.data();
      const auto best = static_cast<int>(
          std::max_element(v.begin(), v.end()) - v.begin());
      correct += best == s.target.at(0) ? 1 : 0;
    }
    r.trace.layer_outputs.clear();
    out.traces.push_back(std::move(r.trace));
  }
  if (cfg.task == TaskKind::ctc) {
    out.metric = {"wer", ref_words == 0 ? 0.0
                                        : static_cast<double>(errors) /
                                              static_cast<double>(ref_words)};
  } else {
    out.metric = {"accuracy",
                  static_cast<double>(correct) / static_cast<double>(samples.size())};
  }
  out.loss_mean = loss_count == 0 ? std::numeric_limits<double>::infinity()
                                  : loss_sum / static_cast<double>(loss_count);
  return out;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

std::string joined_hash(std::span<const LoadedModel* const> models) {
  std::string out;
  for (const auto* m : models) {
    if (out.find(m->config_hash) != std::string::npos) continue;
    if (!out.empty()) out += '+';
    out += m->config_hash;
  }
  return out;
}

// Aggregates several evaluations of the same policy point into one row.
RunReport aggregate(const std::vector<EvalOutcome>& runs, const ModelConfig& cfg,
                    std::string policy, std::uint64_t seed, std::string hash,
                    std::size_t n) {
  std::vector<ForwardTrace> traces;
  std::vector<double> values;
  for (const auto& r : runs) {
    traces.insert(traces.end(), r.traces.begin(), r.traces.end());
    values.push_back(r.metric.value);
  }
  const MetricValue metric{runs.front().metric.name, mean_of(values), pop_std(values)};
  return report_row(traces, metric, cfg, std::move(policy), seed, std::move(hash), n);
}

}  // namespace

LossValue sample_loss(const ModelConfig& config, const Tensor& logits,
                      const Sample& sample) {
  if (config.task == TaskKind::ctc) {
    return ctc_loss(log_softmax_rows(logits), sample.target, sample.frames);
  }
  if (sample.target.size() != 1 || sample.target[0] < 0) {
    throw ContractViolation("classification sample needs one non-negative target");
  }
  return {cross_entropy(logits, static_cast<std::size_t>(sample.target[0])),
          LossStatus::ok};
}

EvalOutcome evaluate(const Model& model, std::span<const Sample> samples,
                     const DropPolicy& requested, std::uint64_t seed) {
  // Keeping all N layers needs no selector at inference.
  DropPolicy policy = requested;
  if (const auto* topk = std::get_if<InputDrivenTopK>(&requested)) {
    if (topk->k >= model.config().num_layers) policy = FullPolicy{};
  }
  return evaluate_with(model, samples, [&](const Sample& s) {
    Rng rng = Rng::derive(seed, kEvalStream, s.id);
    return model.forward(s.feature_tensor(), policy, rng);
  });
}

EvalOutcome evaluate_forced_exit(const Model& model, std::span<const Sample> samples,
                                 std::size_t exit) {
  return evaluate_with(model, samples, [&](const Sample& s) {
    return model.forced_exit_forward(s.feature_tensor(), exit);
  });
}

std::vector<RunReport> run_sweep(std::span<const LoadedModel> models,
                                 std::span<const Sample> samples,
                                 std::span<const std::size_t> n_list,
                                 std::size_t rd_seeds, std::uint64_t seed) {
  if (models.empty()) throw ContractViolation("sweep: no checkpoints");
  if (rd_seeds < 1) throw ConfigError("sweep: --rd-seeds must be >= 1");
  const ModelConfig& ref = models.front().model.config();
  for (const auto& m : models) {
    const auto& c = m.model.config();
    if (c.num_layers != ref.num_layers || c.task != ref.task) {
      throw ConfigError("sweep: checkpoints disagree on depth or task");
    }
  }
  const std::size_t n_layers = ref.num_layers;
  for (std::size_t n : n_list) {
    if (n >= n_layers) {
      throw ConfigError("sweep: n = " + std::to_string(n) + " must be < N = " +
                        std::to_string(n_layers));
    }
  }

  std::vector<RunReport> rows;
  for (std::size_t n : n_list) {
    for (const std::string mode : {"idld", "rd", "static", "ee"}) {
      std::vector<const LoadedModel*> group;
      for (const auto& m : models) {
        if (m.mode == mode) group.push_back(&m);
      }
      if (group.empty()) continue;
      std::vector<EvalOutcome> runs;
      std::string policy;
      for (const auto* m : group) {
        if (mode == "idld") {
          policy = "idld-topk";
          runs.push_back(evaluate(m->model, samples, InputDrivenTopK{n_layers - n}, seed));
        } else if (mode == "ee") {
          policy = "ee-exit";
          runs.push_back(evaluate_forced_exit(m->model, samples, n_layers - n));
        } else {
          policy = mode == "rd" ? "rd-exact" : "static-rd-exact";
          for (std::size_t r = 0; r < rd_seeds; ++r) {
            runs.push_back(evaluate(m->model, samples, RandomExactN{n}, seed + r));
          }
        }
      }
      rows.push_back(aggregate(runs, group.front()->model.config(), policy, seed,
                               joined_hash(group), n));
    }
  }
  return rows;
}

std::vector<ThresholdRow> run_threshold_sweep(const LoadedModel& model,
                                              std::span<const Sample> samples,
                                              const std::string& kind,
                                              std::span<const double> thresholds,
                                              std::uint64_t seed) {
  if (thresholds.empty()) throw ConfigError("threshold sweep: empty threshold list");
  if (kind != "gamma" && kind != "tau") {
    throw ConfigError("threshold sweep: kind must be gamma or tau");
  }
  std::vector<ThresholdRow> rows;
  for (double t : thresholds) {
    DropPolicy policy = kind == "gamma" ? DropPolicy{InputDrivenThreshold{t}}
                                        : DropPolicy{EarlyExitEntropy{t}};
    const EvalOutcome out = evaluate(model.model, samples, policy, seed);
    const RunReport row = report_row(out.traces, out.metric, model.model.config(),
                                     describe(policy), seed, model.config_hash);
    rows.push_back({kind, t, row.exec_layers_mean, out.metric.name, out.metric.value,
                    row.macs_per_sample, seed, model.config_hash});
  }
  return rows;
}

void write_threshold_csv(std::ostream& os, std::span<const ThresholdRow> rows) {
  os << kThresholdCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.kind << ',' << format_double(r.threshold) << ','
       << format_double(r.exec_layers_mean) << ',' << r.metric_name << ','
       << format_double(r.metric_value) << ',' << r.macs_per_sample << ',' << r.seed
       << ',' << r.config_hash << '\n';
  }
}

}  // namespace idld
