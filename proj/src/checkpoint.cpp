#include "idld/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "idld/errors.hpp"

namespace idld {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

using nlohmann::json;
using Kind = CheckpointError::Kind;

constexpr char kMagic[4] = {'D', 'Y', 'N', 'D'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t at) {
  T v;
  std::memcpy(&v, bytes.data() + at, sizeof(T));
  return v;
}

json entry(const CheckpointTensor& t, std::uint64_t offset) {
  return {{"name", t.name}, {"shape", t.shape}, {"offset", offset}};
}

std::vector<float> to_float(std::span<const double> values) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>(values[i]);
  return out;
}

}  // namespace

CheckpointError::CheckpointError(Kind kind, const std::string& what)
    : std::runtime_error("checkpoint " + to_string(kind) + " error: " + what),
      kind_(kind) {}

std::string to_string(CheckpointError::Kind kind) {
  switch (kind) {
    case Kind::io:
      return "io";
    case Kind::bad_magic:
      return "magic";
    case Kind::version_mismatch:
      return "version";
    case Kind::truncated:
      return "truncated";
    case Kind::manifest:
      return "manifest";
    case Kind::offset:
      return "offset";
    case Kind::mismatch:
      return "model-mismatch";
  }
  return "?";
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  json manifest;
  manifest["config"] = ckpt.config;
  manifest["config_hash"] = ckpt.config_hash;
  manifest["epoch"] = ckpt.epoch;
  manifest["rng"] = {{"seed", ckpt.rng_seed}, {"step", ckpt.step}};
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto* list : {&ckpt.params, &ckpt.optim_tensors}) {
    for (const auto& t : *list) {
      if (t.values.size() != shape_numel(t.shape)) {
        throw ContractViolation("checkpoint tensor " + t.name + ": shape/value mismatch");
      }
      entries.push_back(entry(t, offset));
      offset += 4 * t.values.size();
    }
  }
  manifest["params"] = ckpt.params.size();
  manifest["tensors"] = std::move(entries);
  manifest["block_bytes"] = offset;
  if (ckpt.optim_step) manifest["optimizer"] = {{"step", *ckpt.optim_step}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto* list : {&ckpt.params, &ckpt.optim_tensors}) {
    for (const auto& t : *list) {
      for (float f : t.values) put<float>(out, f);
    }
  }
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::bad_magic, "missing DYND magic");
  }
  if (bytes.size() < kHeaderBytes) throw CheckpointError(Kind::truncated, "header");
  Checkpoint ckpt;
  ckpt.version = get<std::uint32_t>(bytes, 4);
  if (ckpt.version != kCheckpointVersion) {
    throw CheckpointError(Kind::version_mismatch,
                          "file version " + std::to_string(ckpt.version) +
                              ", supported " + std::to_string(kCheckpointVersion));
  }
  const auto manifest_len = get<std::uint64_t>(bytes, 8);
  if (manifest_len > bytes.size() - kHeaderBytes) {
    throw CheckpointError(Kind::truncated, "manifest extends past end of file");
  }
  json m;
  try {
    m = json::parse(bytes.begin() + kHeaderBytes,
                    bytes.begin() + kHeaderBytes + static_cast<std::ptrdiff_t>(manifest_len));
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::manifest, e.what());
  }
  const std::size_t block_start = kHeaderBytes + manifest_len;
  const std::span<const std::uint8_t> block = bytes.subspan(block_start);

  struct Placed {
    CheckpointTensor tensor;
    std::uint64_t offset;
  };
  std::vector<Placed> placed;
  std::size_t num_params = 0;
  std::uint64_t block_bytes = 0;
  try {
    ckpt.config = m.at("config");
    ckpt.config_hash = m.at("config_hash").get<std::string>();
    ckpt.epoch = m.at("epoch").get<std::uint64_t>();
    ckpt.rng_seed = m.at("rng").at("seed").get<std::uint64_t>();
    ckpt.step = m.at("rng").at("step").get<std::uint64_t>();
    num_params = m.at("params").get<std::size_t>();
    block_bytes = m.at("block_bytes").get<std::uint64_t>();
    if (m.contains("optimizer")) {
      ckpt.optim_step = m.at("optimizer").at("step").get<std::uint64_t>();
    }
    for (const auto& e : m.at("tensors")) {
      Placed p;
      p.tensor.name = e.at("name").get<std::string>();
      p.tensor.shape = e.at("shape").get<Shape>();
      p.offset = e.at("offset").get<std::uint64_t>();
      placed.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::manifest, e.what());
  }
  if (num_params > placed.size()) {
    throw CheckpointError(Kind::manifest, "parameter count exceeds tensor list");
  }
  if (block.size() < block_bytes) {
    throw CheckpointError(Kind::truncated,
                          "parameter block has " + std::to_string(block.size()) +
                              " bytes, manifest declares " + std::to_string(block_bytes));
  }
  if (block.size() > block_bytes) {
    throw CheckpointError(Kind::manifest, "trailing bytes after parameter block");
  }

  // Offsets must tile disjoint, in-bounds, 4-byte aligned ranges.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& p : placed) {
    const std::uint64_t len = 4 * shape_numel(p.tensor.shape);
    if (p.offset % 4 != 0 || p.offset > block_bytes || len > block_bytes - p.offset) {
      throw CheckpointError(Kind::offset, "tensor " + p.tensor.name + " at offset " +
                                              std::to_string(p.offset) + " is out of bounds");
    }
    ranges.emplace_back(p.offset, p.offset + len);
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw CheckpointError(Kind::offset, "overlapping tensors at offset " +
                                              std::to_string(ranges[i].first));
    }
  }

  for (std::size_t i = 0; i < placed.size(); ++i) {
    auto& t = placed[i].tensor;
    const std::size_t n = shape_numel(t.shape);
    t.values.resize(n);
    if (n > 0) std::memcpy(t.values.data(), block.data() + placed[i].offset, 4 * n);
    (i < num_params ? ckpt.params : ckpt.optim_tensors).push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

Checkpoint capture(const Model& model, const ExperimentConfig& cfg,
                   std::uint64_t epoch, std::uint64_t step, const OptimState* optim) {
  Checkpoint ckpt;
  ckpt.config = to_json(cfg);
  ckpt.config_hash = config_hash(cfg);
  ckpt.epoch = epoch;
  ckpt.rng_seed = cfg.seed;
  ckpt.step = step;
  for (const auto& p : model.params()) {
    ckpt.params.push_back({p.name, p.tensor.shape(), to_float(p.tensor.data())});
  }
  if (optim != nullptr) {
    ckpt.optim_step = optim->step;
    const auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.optim_tensors.push_back(
          {"optim.m/" + params[i].name, params[i].tensor.shape(), to_float(optim->first_moment[i])});
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.optim_tensors.push_back(
          {"optim.v/" + params[i].name, params[i].tensor.shape(), to_float(optim->second_moment[i])});
    }
  }
  return ckpt;
}

ExperimentConfig checkpoint_config(const Checkpoint& ckpt) {
  ExperimentConfig cfg = parse_config(ckpt.config);
  if (config_hash(cfg) != ckpt.config_hash) {
    throw CheckpointError(Kind::manifest, "config hash does not match stored config");
  }
  return cfg;
}

void restore_params(Model& model, const Checkpoint& ckpt) {
  auto& params = model.params();
  if (params.size() != ckpt.params.size()) {
    throw CheckpointError(Kind::mismatch, "model has " + std::to_string(params.size()) +
                                              " parameters, checkpoint " +
                                              std::to_string(ckpt.params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = ckpt.params[i];
    if (src.name != params[i].name || src.shape != params[i].tensor.shape()) {
      throw CheckpointError(Kind::mismatch, "parameter " + params[i].name + " " +
                                                shape_str(params[i].tensor.shape()) +
                                                " vs checkpoint " + src.name + " " +
                                                shape_str(src.shape));
    }
    auto dst = params[i].tensor.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = src.values[k];
  }
}

Model restore_model(const Checkpoint& ckpt) {
  const ExperimentConfig cfg = checkpoint_config(ckpt);
  Model model(cfg.model, cfg.seed);
  restore_params(model, ckpt);
  return model;
}

void restore_optim(OptimState& state, const Model& model, const Checkpoint& ckpt) {
  if (!ckpt.optim_step) throw CheckpointError(Kind::mismatch, "no optimizer state stored");
  const auto& params = model.params();
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.optim_tensors) by_name[t.name] = &t;
  state.first_moment.assign(params.size(), {});
  state.second_moment.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      const std::string key = (which == 0 ? "optim.m/" : "optim.v/") + params[i].name;
      auto it = by_name.find(key);
      if (it == by_name.end()) throw CheckpointError(Kind::mismatch, "missing " + key);
      auto& dst = which == 0 ? state.first_moment[i] : state.second_moment[i];
      dst.assign(it->second->values.begin(), it->second->values.end());
    }
  }
  state.step = *ckpt.optim_step;
}

}  // namespace idld
