#include "idld/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "idld/checkpoint.hpp"
#include "idld/errors.hpp"
#include "idld/evaluate.hpp"
#include "idld/gating.hpp"
#include "idld/losses.hpp"
#include "idld/metrics.hpp"
#include "idld/nn.hpp"
#include "idld/rng.hpp"

namespace idld {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct StepResult {
  Tensor loss;
  std::size_t k_or_popcount = 0;
};

// Builds the mean batch loss for one optimizer step.
StepResult batch_loss(const Model& model, const ExperimentConfig& cfg,
                      const std::vector<const Sample*>& batch, Rng& rng) {
  const ModelConfig& mc = model.config();
  const std::size_t n_layers = mc.num_layers;
  StepResult out;

  std::optional<std::size_t> k;
  std::optional<GateMask> rd_mask;
  switch (cfg.mode) {
    case TrainMode::idld:
      k = sample_k(n_layers, rng);
      out.k_or_popcount = *k;
      break;
    case TrainMode::rd: {
      double p = cfg.rd.p_lo;
      if (cfg.rd.is_range()) p = cfg.rd.p_lo + (cfg.rd.p_hi - cfg.rd.p_lo) * rng.uniform01();
      rd_mask = random_gates_bernoulli(n_layers, p, rng);
      out.k_or_popcount = rd_mask->popcount();
      break;
    }
    case TrainMode::ee:
    case TrainMode::static_full:
      out.k_or_popcount = n_layers;
      break;
  }

  Tensor total;
  for (const Sample* s : batch) {
    Tensor x = s->feature_tensor();
    if (cfg.augment.spec_mask) {
      x = spec_mask(x, cfg.augment.max_time_mask, cfg.augment.max_feat_mask, rng);
    }
    LossValue loss;
    if (cfg.mode == TrainMode::ee) {
      std::vector<Tensor> per_exit;
      for (const Tensor& logits : model.all_exit_logits(x)) {
        const LossValue l = sample_loss(mc, logits, *s);
        if (!l.ok()) {
          loss = l;
          break;
        }
        per_exit.push_back(l.value);
      }
      if (per_exit.size() == n_layers) loss = ee_joint_loss(per_exit);
    } else {
      ForwardResult r;
      if (k) {
        Rng unused;
        r = model.forward(x, InputDrivenTopK{*k}, unused);
      } else if (rd_mask) {
        r = model.forward_masked(x, *rd_mask);
      } else {
        r = model.forward_masked(x, full_mask(n_layers));
      }
      loss = sample_loss(mc, r.logits, *s);
    }
    if (!loss.ok() || !std::isfinite(loss.value.item())) {
      throw TrainingError("non-finite loss on sample " + std::to_string(s->id));
    }
    total = total.defined() ? total + loss.value : loss.value;
  }
  out.loss = scale(total, 1.0 / static_cast<double>(batch.size()));
  return out;
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.train_manifest) return gen_task(cfg.data);
  Dataset d;
  d.train = read_manifest(*cfg.train_manifest, cfg.data.task, cfg.mel);
  if (cfg.dev_manifest) d.dev = read_manifest(*cfg.dev_manifest, cfg.data.task, cfg.mel);
  if (cfg.test_manifest) d.test = read_manifest(*cfg.test_manifest, cfg.data.task, cfg.mel);
  for (const auto* split : {&d.train, &d.dev, &d.test}) {
    for (const Sample& s : *split) {
      if (s.dim != cfg.data.feature_dim) {
        throw ConfigError("manifest sample " + std::to_string(s.id) + " has feature dim " +
                          std::to_string(s.dim) + ", data.feature_dim is " +
                          std::to_string(cfg.data.feature_dim));
      }
    }
  }
  return d;
}

void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& rows) {
  os << kTrainLogHeader << '\n';
  for (const auto& r : rows) {
    os << r.step << ',' << r.epoch << ',' << format_double(r.lr) << ','
       << format_double(r.loss) << ',' << r.k_or_popcount << '\n';
  }
}

void write_dev_log(std::ostream& os, const std::vector<DevLogRow>& rows) {
  os << kDevLogHeader << '\n';
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.metric_name << ',' << format_double(r.metric_value) << ','
       << format_double(r.loss) << '\n';
  }
}

TrainOutcome train(const ExperimentConfig& cfg, const Dataset& data,
                   const TrainOptions& options) {
  if (data.train.empty()) throw ConfigError("training split is empty");
  TrainOutcome out{Model(cfg.model, cfg.seed), {}, {}, {}, 0};
  Model& model = out.model;
  std::vector<Tensor> params = model.param_tensors();
  out.optim = make_optim_state(params, cfg.optimizer.hyper);

  const bool to_disk = !options.out_dir.empty();
  auto flush_logs = [&] {
    if (!to_disk) return;
    std::ostringstream train_log, dev_log;
    write_train_log(train_log, out.log);
    write_dev_log(dev_log, out.dev);
    write_text(options.out_dir / "train_log.csv", train_log.str());
    write_text(options.out_dir / "dev_log.csv", dev_log.str());
  };
  auto checkpoint = [&](std::size_t epoch, const std::string& name) {
    if (!to_disk) return;
    save_checkpoint(options.out_dir / name, capture(model, cfg, epoch, out.steps, &out.optim));
  };

  if (to_disk) {
    std::filesystem::create_directories(options.out_dir);
    write_text(options.out_dir / "config.json", to_json(cfg).dump(2) + "\n");
  }
  checkpoint(0, "epoch_0.ckpt");
  flush_logs();

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = Rng::derive(cfg.seed, kShuffleStream, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle.uniform_int(0, i - 1));
      std::swap(order[i - 1], order[j]);
    }

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.train[order[i]]);

      const std::uint64_t step = out.steps + 1;
      Rng rng = Rng::derive(cfg.seed, kStepStream, step);
      StepResult sr;
      try {
        sr = batch_loss(model, cfg, batch, rng);
        for (Tensor& p : params) p.zero_grad();
        backward(sr.loss);
      } catch (const NumericError& e) {
        flush_logs();
        throw TrainingError(std::string("non-finite gradient: ") + e.what());
      } catch (const TrainingError&) {
        flush_logs();
        throw;
      }
      const double lr = lr_at(cfg.schedule, step);
      adamw_step(params, out.optim, lr);
      out.steps = step;
      out.log.push_back({step, epoch, lr, sr.loss.item(), sr.k_or_popcount});
    }

    if (cfg.dev_eval && !data.dev.empty()) {
      const EvalOutcome ev = evaluate(model, data.dev, FullPolicy{}, cfg.seed);
      out.dev.push_back({epoch, ev.metric.name, ev.metric.value, ev.loss_mean});
      if (options.progress != nullptr) {
        *options.progress << "epoch " << epoch << " dev " << ev.metric.name << ' '
                          << format_double(ev.metric.value) << '\n';
      }
    }
    checkpoint(epoch, "epoch_" + std::to_string(epoch) + ".ckpt");
    flush_logs();
  }
  checkpoint(cfg.epochs, "final.ckpt");
  return out;
}

}  // namespace idld
