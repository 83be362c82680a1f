#include "idld/config.hpp"

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <string_view>

#include "idld/errors.hpp"

namespace idld {

namespace {

using nlohmann::json;

std::string join(std::initializer_list<std::string_view> items) {
  std::string out;
  for (auto s : items) {
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out;
}

void check_keys(const json& obj, const std::string& section,
                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) {
      throw ConfigError("unknown key '" + key + "' in " + section +
                        " (allowed: " + join(allowed) + ")");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& section, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key + ": wrong value type (" +
                      obj.at(key).dump() + ")");
  }
}

void read_range(const json& obj, const char* key, const std::string& section,
                Range& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_array() || v.size() != 2) {
    throw ConfigError(section + "." + key + ": expected [lo, hi]");
  }
  try {
    out = {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key + ": expected two non-negative integers");
  }
}

template <typename E>
E read_enum(const json& obj, const char* key, const std::string& section, E fallback,
            std::initializer_list<std::pair<std::string_view, E>> choices) {
  if (!obj.contains(key)) return fallback;
  std::string v;
  read(obj, key, section, v);
  for (const auto& [name, value] : choices) {
    if (name == v) return value;
  }
  std::string allowed;
  for (const auto& [name, value] : choices) {
    if (!allowed.empty()) allowed += ", ";
    allowed += name;
  }
  throw ConfigError(section + "." + key + ": invalid value '" + v +
                    "' (allowed: " + allowed + ")");
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::idld:
      return "idld";
    case TrainMode::rd:
      return "rd";
    case TrainMode::ee:
      return "ee";
    case TrainMode::static_full:
      return "static";
  }
  return "?";
}

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "config",
             {"seed", "mode", "rd", "epochs", "batch_size", "model", "data",
              "optimizer", "schedule", "augment", "dev_eval"});
  ExperimentConfig c;
  if (!j.contains("seed")) throw ConfigError("config: missing mandatory key 'seed'");
  read(j, "seed", "config", c.seed);
  c.mode = read_enum<TrainMode>(j, "mode", "config", TrainMode::idld,
                                {{"idld", TrainMode::idld},
                                 {"rd", TrainMode::rd},
                                 {"ee", TrainMode::ee},
                                 {"static", TrainMode::static_full}});
  read(j, "epochs", "config", c.epochs);
  read(j, "batch_size", "config", c.batch_size);
  read(j, "dev_eval", "config", c.dev_eval);
  if (c.batch_size < 1) throw ConfigError("config.batch_size must be >= 1");

  if (j.contains("rd")) {
    const auto& rd = j.at("rd");
    check_keys(rd, "rd", {"p", "p_range"});
    if (rd.contains("p") == rd.contains("p_range")) {
      throw ConfigError("rd: give exactly one of 'p' or 'p_range'");
    }
    if (rd.contains("p")) {
      read(rd, "p", "rd", c.rd.p_lo);
      c.rd.p_hi = c.rd.p_lo;
    } else {
      std::vector<double> r;
      read(rd, "p_range", "rd", r);
      if (r.size() != 2) throw ConfigError("rd.p_range: expected [lo, hi]");
      c.rd = {r[0], r[1]};
    }
    if (!(0.0 <= c.rd.p_lo && c.rd.p_lo <= c.rd.p_hi && c.rd.p_hi <= 1.0)) {
      throw ConfigError("rd: probabilities must satisfy 0 <= lo <= hi <= 1");
    }
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "model",
               {"num_layers", "d_model", "num_heads", "d_ff", "max_frames",
                "norm_eps", "selector"});
    read(m, "num_layers", "model", c.model.num_layers);
    read(m, "d_model", "model", c.model.d_model);
    read(m, "num_heads", "model", c.model.num_heads);
    read(m, "d_ff", "model", c.model.d_ff);
    read(m, "max_frames", "model", c.model.max_frames);
    read(m, "norm_eps", "model", c.model.norm_eps);
    if (m.contains("selector")) {
      const auto& s = m.at("selector");
      check_keys(s, "model.selector", {"kernel_width", "channels", "pooled_len"});
      read(s, "kernel_width", "model.selector", c.model.selector.kernel_width);
      read(s, "channels", "model.selector", c.model.selector.channels);
      read(s, "pooled_len", "model.selector", c.model.selector.pooled_len);
    }
  }

  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data",
               {"task", "num_symbols", "feature_dim", "frames_per_symbol",
                "symbols_per_utterance", "frames", "salient_span",
                "distractor_scale", "noise_std", "num_train", "num_dev",
                "num_test", "seed", "train_manifest", "dev_manifest",
                "test_manifest", "mel"});
    c.data.task = read_enum<TaskKind>(d, "task", "data", TaskKind::classification,
                                      {{"ctc", TaskKind::ctc},
                                       {"classification", TaskKind::classification}});
    read(d, "num_symbols", "data", c.data.num_symbols);
    read(d, "feature_dim", "data", c.data.feature_dim);
    read_range(d, "frames_per_symbol", "data", c.data.frames_per_symbol);
    read_range(d, "symbols_per_utterance", "data", c.data.symbols_per_utterance);
    read_range(d, "frames", "data", c.data.frames);
    read_range(d, "salient_span", "data", c.data.salient_span);
    read(d, "distractor_scale", "data", c.data.distractor_scale);
    read(d, "noise_std", "data", c.data.noise_std);
    read(d, "num_train", "data", c.data.num_train);
    read(d, "num_dev", "data", c.data.num_dev);
    read(d, "num_test", "data", c.data.num_test);
    read(d, "seed", "data", c.data.seed);
    auto read_opt = [&](const char* key, std::optional<std::string>& out) {
      if (d.contains(key)) {
        std::string v;
        read(d, key, "data", v);
        out = v;
      }
    };
    read_opt("train_manifest", c.train_manifest);
    read_opt("dev_manifest", c.dev_manifest);
    read_opt("test_manifest", c.test_manifest);
    if (d.contains("mel")) {
      const auto& mel = d.at("mel");
      check_keys(mel, "data.mel", {"frame_len", "hop", "n_mels"});
      read(mel, "frame_len", "data.mel", c.mel.frame_len);
      read(mel, "hop", "data.mel", c.mel.hop);
      read(mel, "n_mels", "data.mel", c.mel.n_mels);
    }
  }

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    check_keys(o, "optimizer",
               {"name", "lr", "beta1", "beta2", "eps", "weight_decay"});
    c.optimizer.name = read_enum<std::string>(o, "name", "optimizer", "adamw",
                                              {{"adam", "adam"}, {"adamw", "adamw"}});
    read(o, "lr", "optimizer", c.schedule.peak_lr);
    read(o, "beta1", "optimizer", c.optimizer.hyper.beta1);
    read(o, "beta2", "optimizer", c.optimizer.hyper.beta2);
    read(o, "eps", "optimizer", c.optimizer.hyper.eps);
    read(o, "weight_decay", "optimizer", c.optimizer.hyper.weight_decay);
    if (c.optimizer.name == "adam" && c.optimizer.hyper.weight_decay != 0.0) {
      throw ConfigError("optimizer: weight_decay requires name 'adamw'");
    }
  }

  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    check_keys(s, "schedule", {"warmup_steps", "decay_rate", "decay_every"});
    read(s, "warmup_steps", "schedule", c.schedule.warmup_steps);
    read(s, "decay_rate", "schedule", c.schedule.decay_rate);
    read(s, "decay_every", "schedule", c.schedule.decay_every);
  }
  if (c.schedule.warmup_steps < 1) throw ConfigError("schedule.warmup_steps must be >= 1");
  if (c.schedule.decay_every < 1) throw ConfigError("schedule.decay_every must be >= 1");
  if (!(c.schedule.decay_rate > 0.0 && c.schedule.decay_rate <= 1.0)) {
    throw ConfigError("schedule.decay_rate must be in (0, 1]");
  }
  if (!(c.schedule.peak_lr >= 0.0)) throw ConfigError("optimizer.lr must be >= 0");

  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    check_keys(a, "augment", {"spec_mask", "max_time_mask", "max_feat_mask"});
    read(a, "spec_mask", "augment", c.augment.spec_mask);
    read(a, "max_time_mask", "augment", c.augment.max_time_mask);
    read(a, "max_feat_mask", "augment", c.augment.max_feat_mask);
  }

  // Derived model fields.
  c.model.task = c.data.task;
  c.model.d_in = c.data.feature_dim;
  c.model.num_outputs =
      c.data.task == TaskKind::ctc ? c.data.num_symbols + 1 : c.data.num_symbols;
  c.model.ee_enabled = c.mode == TrainMode::ee;
  c.model.validate();
  c.data.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["mode"] = to_string(c.mode);
  if (c.rd.is_range()) {
    j["rd"] = {{"p_range", {c.rd.p_lo, c.rd.p_hi}}};
  } else {
    j["rd"] = {{"p", c.rd.p_lo}};
  }
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["dev_eval"] = c.dev_eval;
  j["model"] = {
      {"num_layers", c.model.num_layers},
      {"d_model", c.model.d_model},
      {"num_heads", c.model.num_heads},
      {"d_ff", c.model.d_ff},
      {"max_frames", c.model.max_frames},
      {"norm_eps", c.model.norm_eps},
      {"selector",
       {{"kernel_width", c.model.selector.kernel_width},
        {"channels", c.model.selector.channels},
        {"pooled_len", c.model.selector.pooled_len}}},
  };
  json d = {
      {"task", c.data.task == TaskKind::ctc ? "ctc" : "classification"},
      {"num_symbols", c.data.num_symbols},
      {"feature_dim", c.data.feature_dim},
      {"frames_per_symbol", {c.data.frames_per_symbol.first, c.data.frames_per_symbol.second}},
      {"symbols_per_utterance",
       {c.data.symbols_per_utterance.first, c.data.symbols_per_utterance.second}},
      {"frames", {c.data.frames.first, c.data.frames.second}},
      {"salient_span", {c.data.salient_span.first, c.data.salient_span.second}},
      {"distractor_scale", c.data.distractor_scale},
      {"noise_std", c.data.noise_std},
      {"num_train", c.data.num_train},
      {"num_dev", c.data.num_dev},
      {"num_test", c.data.num_test},
      {"seed", c.data.seed},
      {"mel", {{"frame_len", c.mel.frame_len}, {"hop", c.mel.hop}, {"n_mels", c.mel.n_mels}}},
  };
  if (c.train_manifest) d["train_manifest"] = *c.train_manifest;
  if (c.dev_manifest) d["dev_manifest"] = *c.dev_manifest;
  if (c.test_manifest) d["test_manifest"] = *c.test_manifest;
  j["data"] = std::move(d);
  j["optimizer"] = {
      {"name", c.optimizer.name},
      {"lr", c.schedule.peak_lr},
      {"beta1", c.optimizer.hyper.beta1},
      {"beta2", c.optimizer.hyper.beta2},
      {"eps", c.optimizer.hyper.eps},
      {"weight_decay", c.optimizer.hyper.weight_decay},
  };
  j["schedule"] = {
      {"warmup_steps", c.schedule.warmup_steps},
      {"decay_rate", c.schedule.decay_rate},
      {"decay_every", c.schedule.decay_every},
  };
  j["augment"] = {
      {"spec_mask", c.augment.spec_mask},
      {"max_time_mask", c.augment.max_time_mask},
      {"max_feat_mask", c.augment.max_feat_mask},
  };
  return j;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& cfg) {
  return fnv1a_hex(to_json(cfg).dump());
}

}  // namespace idld
