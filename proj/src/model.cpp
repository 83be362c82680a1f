#include "idld/model.hpp"

#include <cmath>
#include <sstream>

#include "idld/errors.hpp"
#include "idld/metrics.hpp"

namespace idld {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::vector<std::size_t> head_cols(const ModelConfig& c) {
  return {c.d_model, c.num_outputs};
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (d_in < 1 || d_model < 1 || d_ff < 1) fail("dimensions must be positive");
  if (num_heads < 1 || d_model % num_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (task == TaskKind::ctc && num_outputs < 2) {
    fail("ctc vocabulary must include the blank plus at least one label");
  }
  if (task == TaskKind::classification && num_outputs < 2) {
    fail("classification needs at least two classes");
  }
  if (max_frames < 1) fail("max_frames must be >= 1");
  if (selector.kernel_width % 2 == 0) {
    fail("selector.kernel_width must be odd, got " +
         std::to_string(selector.kernel_width));
  }
  if (selector.channels < 1 || selector.pooled_len < 1) {
    fail("selector.channels and selector.pooled_len must be >= 1");
  }
  if (!(norm_eps > 0.0)) fail("norm_eps must be > 0");
}

std::string describe(const DropPolicy& policy) {
  std::ostringstream os;
  std::visit(overloaded{
                 [&](const FullPolicy&) { os << "full"; },
                 [&](const InputDrivenTopK& p) { os << "idld-topk(" << p.k << ")"; },
                 [&](const InputDrivenThreshold& p) {
                   os << "idld-threshold(" << format_double(p.gamma) << ")";
                 },
                 [&](const RandomBernoulli& p) { os << "rd-bernoulli(" << format_double(p.p_drop) << ")"; },
                 [&](const RandomExactN& p) { os << "rd-exact(" << p.n_dropped << ")"; },
                 [&](const EarlyExitEntropy& p) { os << "ee-entropy(" << format_double(p.tau) << ")"; },
             },
             policy);
  return os.str();
}

Tensor gated_layer_forward(const Tensor& y_prev, const LayerGate& gate,
                           const EncoderLayerParams& p, double norm_eps) {
  if (gate.bit == 0) return y_prev;
  auto gated = [&](const Tensor& branch) {
    return gate.multiplier.defined() ? scalar_mul(gate.multiplier, branch)
                                     : branch;
  };
  const std::size_t t_len = y_prev.rows();
  Tensor attn = multi_head_attention(layer_norm(y_prev, p.attn_norm, norm_eps),
                                     p.attn, t_len);
  Tensor y_hat = add(y_prev, gated(attn));
  Tensor ff = ffn(layer_norm(y_hat, p.ffn_norm, norm_eps), p.ffn);
  return add(y_hat, gated(ff));
}

// ---- construction -----------------------------------------------------------

Tensor Model::add_param(const std::string& name, Shape shape, double init_std,
                        double fill, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(n, fill);
  if (init_std > 0.0) {
    for (double& v : values) v = init_std * rng.normal();
  }
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  Rng rng = Rng::derive(seed, /*stream=*/0x1d1d);
  auto std_for = [](std::size_t fan_in) {
    return 1.0 / std::sqrt(static_cast<double>(fan_in));
  };

  in_proj_ = add_param("frontend.proj", {c.d_in, c.d_model}, std_for(c.d_in), 0, rng);
  in_bias_ = add_param("frontend.bias", {c.d_model}, 0, 0, rng);
  positions_ = add_param("frontend.positions", {c.max_frames, c.d_model}, 0.1, 0, rng);

  for (std::size_t j = 0; j < c.num_layers; ++j) {
    const std::string pre = "layer" + std::to_string(j + 1) + ".";
    EncoderLayerParams l;
    l.attn_norm.scale = add_param(pre + "attn_norm.scale", {c.d_model}, 0, 1, rng);
    l.attn_norm.shift = add_param(pre + "attn_norm.shift", {c.d_model}, 0, 0, rng);
    const double sd = std_for(c.d_model);
    l.attn.query = add_param(pre + "attn.query", {c.d_model, c.d_model}, sd, 0, rng);
    l.attn.key = add_param(pre + "attn.key", {c.d_model, c.d_model}, sd, 0, rng);
    l.attn.value = add_param(pre + "attn.value", {c.d_model, c.d_model}, sd, 0, rng);
    l.attn.output = add_param(pre + "attn.output", {c.d_model, c.d_model}, sd, 0, rng);
    l.attn.num_heads = c.num_heads;
    l.ffn_norm.scale = add_param(pre + "ffn_norm.scale", {c.d_model}, 0, 1, rng);
    l.ffn_norm.shift = add_param(pre + "ffn_norm.shift", {c.d_model}, 0, 0, rng);
    l.ffn.w1 = add_param(pre + "ffn.w1", {c.d_model, c.d_ff}, sd, 0, rng);
    l.ffn.b1 = add_param(pre + "ffn.b1", {c.d_ff}, 0, 0, rng);
    l.ffn.w2 = add_param(pre + "ffn.w2", {c.d_ff, c.d_model}, std_for(c.d_ff), 0, rng);
    l.ffn.b2 = add_param(pre + "ffn.b2", {c.d_model}, 0, 0, rng);
    layers_.push_back(std::move(l));
  }

  const auto& s = c.selector;
  selector_.norm.scale = add_param("selector.norm.scale", {c.d_model}, 0, 1, rng);
  selector_.norm.shift = add_param("selector.norm.shift", {c.d_model}, 0, 0, rng);
  selector_.kernel = add_param("selector.conv.kernel",
                               {s.channels, c.d_model, s.kernel_width},
                               std_for(c.d_model * s.kernel_width), 0, rng);
  selector_.bias = add_param("selector.conv.bias", {s.channels}, 0, 0, rng);
  selector_.pooled_len = s.pooled_len;
  selector_.proj = add_param("selector.proj", {s.channels * s.pooled_len, c.num_layers},
                             std_for(s.channels * s.pooled_len), 0, rng);
  selector_.proj_bias = add_param("selector.proj_bias", {c.num_layers}, 0, 0, rng);

  head_w_ = add_param("head.weight", head_cols(c), std_for(c.d_model), 0, rng);
  head_b_ = add_param("head.bias", {c.num_outputs}, 0, 0, rng);
  if (c.ee_enabled) {
    for (std::size_t j = 1; j < c.num_layers; ++j) {
      const std::string pre = "exit" + std::to_string(j) + ".";
      Tensor w = add_param(pre + "weight", head_cols(c), std_for(c.d_model), 0, rng);
      Tensor b = add_param(pre + "bias", {c.num_outputs}, 0, 0, rng);
      exit_heads_.emplace_back(w, b);
    }
  }
}

std::vector<Tensor> Model::param_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

Tensor& Model::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ContractViolation("model has no parameter named '" + name + "'");
}

// ---- forward pieces ---------------------------------------------------------

Tensor Model::frontend(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != config_.d_in) {
    throw ConfigError("frontend: expected T x " + std::to_string(config_.d_in) +
                      " features, got " + shape_str(features.shape()));
  }
  const std::size_t t_len = features.rows();
  if (t_len < 1) throw ContractViolation("frontend: empty utterance");
  if (t_len > config_.max_frames) {
    throw ConfigError("frontend: " + std::to_string(t_len) +
                      " frames exceed max_frames " +
                      std::to_string(config_.max_frames));
  }
  Tensor x = linear(features, in_proj_, in_bias_);
  return add(x, slice_rows(positions_, 0, t_len));
}

GateScores Model::select(const Tensor& x) const {
  // The straight-through signal trains the selector only; it does not reach
  // the frontend shared with the encoder.
  return selector_forward(x.detach(), selector_);
}

Tensor Model::encoder_forward(const Tensor& x, const GateMask& mask,
                              std::vector<Tensor>* layer_outputs) const {
  if (mask.size() != config_.num_layers) {
    throw ContractViolation("encoder_forward: mask has " +
                            std::to_string(mask.size()) + " bits for " +
                            std::to_string(config_.num_layers) + " layers");
  }
  const bool with_multipliers = !mask.multipliers.empty();
  Tensor y = x;
  for (std::size_t j = 0; j < config_.num_layers; ++j) {
    LayerGate gate{mask.bits[j], with_multipliers ? mask.multipliers[j] : Tensor()};
    y = gated_layer_forward(y, gate, layers_[j], config_.norm_eps);
    if (layer_outputs) layer_outputs->push_back(y);
  }
  return y;
}

Tensor Model::to_output(const Tensor& hidden, const Tensor& w,
                        const Tensor& b) const {
  if (config_.task == TaskKind::classification) {
    return linear(mean_rows(hidden, hidden.rows()), w, b);
  }
  return linear(hidden, w, b);
}

Tensor Model::head(const Tensor& hidden, std::size_t exit) const {
  if (exit < 1 || exit > config_.num_layers) {
    throw ContractViolation("head: exit " + std::to_string(exit) + " outside 1.." +
                            std::to_string(config_.num_layers));
  }
  if (exit == config_.num_layers) return to_output(hidden, head_w_, head_b_);
  require_ee();
  const auto& [w, b] = exit_heads_[exit - 1];
  return to_output(hidden, w, b);
}

void Model::require_ee() const {
  if (!config_.ee_enabled) {
    throw ConfigError("early-exit policy requires a model built with ee_enabled");
  }
}

ForwardResult Model::forward_masked(const Tensor& features, const GateMask& mask,
                                    bool keep_layer_outputs) const {
  Tensor x = frontend(features);
  ForwardResult r;
  r.trace.frames = features.rows();
  Tensor y = encoder_forward(x, mask, keep_layer_outputs ? &r.trace.layer_outputs
                                                         : nullptr);
  r.logits = head(y, config_.num_layers);
  r.trace.mask = mask;
  r.trace.executed_layers = mask.popcount();
  return r;
}

ForwardResult Model::forward(const Tensor& features, const DropPolicy& policy,
                             Rng& rng, bool keep_layer_outputs) const {
  const std::size_t n_layers = config_.num_layers;
  if (const auto* ee = std::get_if<EarlyExitEntropy>(&policy)) {
    return early_exit_forward(features, ee->tau);
  }

  Tensor x = frontend(features);
  GateMask mask;
  bool selector_used = false;
  std::visit(overloaded{
                 [&](const FullPolicy&) { mask = full_mask(n_layers); },
                 [&](const InputDrivenTopK& p) {
                   mask = topk_binarize(select(x), p.k);
                   selector_used = true;
                 },
                 [&](const InputDrivenThreshold& p) {
                   mask = threshold_binarize(select(x), p.gamma);
                   selector_used = true;
                 },
                 [&](const RandomBernoulli& p) {
                   mask = random_gates_bernoulli(n_layers, p.p_drop, rng);
                 },
                 [&](const RandomExactN& p) {
                   mask = random_gates_exact(n_layers, p.n_dropped, rng);
                 },
                 [&](const EarlyExitEntropy&) {},
             },
             policy);

  ForwardResult r;
  r.trace.frames = features.rows();
  Tensor y = encoder_forward(x, mask, keep_layer_outputs ? &r.trace.layer_outputs
                                                         : nullptr);
  r.logits = head(y, n_layers);
  r.trace.executed_layers = mask.popcount();
  r.trace.mask = std::move(mask);
  r.trace.selector_used = selector_used;
  return r;
}

ForwardResult Model::forward(const Tensor& padded, std::size_t valid_len,
                             const DropPolicy& policy, Rng& rng) const {
  if (valid_len < 1 || valid_len > padded.rows()) {
    throw ContractViolation("forward: valid_len out of range");
  }
  const Tensor features =
      valid_len == padded.rows() ? padded : slice_rows(padded, 0, valid_len);
  return forward(features, policy, rng);
}

ForwardResult Model::early_exit_forward(const Tensor& features, double tau) const {
  require_ee();
  const std::size_t n_layers = config_.num_layers;
  Tensor y = frontend(features);
  ForwardResult r;
  r.trace.frames = features.rows();
  for (std::size_t j = 1; j <= n_layers; ++j) {
    y = gated_layer_forward(y, LayerGate{}, layers_[j - 1], config_.norm_eps);
    r.trace.layer_outputs.push_back(y);
    Tensor logits = head(y, j);
    const Tensor probs = softmax_rows(logits.detach());
    const double entropy = avg_entropy(probs.data(), probs.cols(), probs.rows());
    if (entropy < tau || j == n_layers) {
      r.logits = logits;
      r.trace.exit_index = j;
      r.trace.executed_layers = j;
      r.trace.heads_evaluated = j;
      r.trace.mask.origin = MaskOrigin::early_exit;
      r.trace.mask.bits.assign(n_layers, 0);
      for (std::size_t i = 0; i < j; ++i) r.trace.mask.bits[i] = 1;
      break;
    }
  }
  return r;
}

ForwardResult Model::forced_exit_forward(const Tensor& features,
                                         std::size_t exit) const {
  const std::size_t n_layers = config_.num_layers;
  if (exit < 1 || exit > n_layers) {
    throw ContractViolation("forced_exit_forward: exit outside 1..N");
  }
  if (exit < n_layers) require_ee();
  Tensor y = frontend(features);
  ForwardResult r;
  r.trace.frames = features.rows();
  for (std::size_t j = 1; j <= exit; ++j) {
    y = gated_layer_forward(y, LayerGate{}, layers_[j - 1], config_.norm_eps);
  }
  r.logits = head(y, exit);
  r.trace.exit_index = exit;
  r.trace.executed_layers = exit;
  r.trace.mask.origin = MaskOrigin::early_exit;
  r.trace.mask.bits.assign(n_layers, 0);
  for (std::size_t i = 0; i < exit; ++i) r.trace.mask.bits[i] = 1;
  return r;
}

std::vector<Tensor> Model::all_exit_logits(const Tensor& features) const {
  require_ee();
  Tensor y = frontend(features);
  std::vector<Tensor> out;
  for (std::size_t j = 1; j <= config_.num_layers; ++j) {
    y = gated_layer_forward(y, LayerGate{}, layers_[j - 1], config_.norm_eps);
    out.push_back(head(y, j));
  }
  return out;
}

}  // namespace idld
