#include "idld/data.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "idld/errors.hpp"
#include "idld/rng.hpp"
#include "json.hpp"

namespace idld {

namespace {

constexpr std::uint64_t kCtcStream = 0xC7C;
constexpr std::uint64_t kClsStream = 0xC15;

std::size_t draw(Rng& rng, Range r) {
  return static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(r.first), static_cast<std::int64_t>(r.second)));
}

void check_range(const Range& r, const char* name, std::size_t min_lo = 1) {
  if (r.first < min_lo || r.second < r.first) {
    throw ConfigError(std::string("data.") + name + ": invalid range [" +
                      std::to_string(r.first) + ", " + std::to_string(r.second) +
                      "]");
  }
}

template <typename Make>
Dataset generate(const SynthTaskConfig& cfg, Make make_sample) {
  cfg.validate();
  Dataset ds;
  std::uint64_t id = 0;
  for (auto* split : {&ds.train, &ds.dev, &ds.test}) {
    const std::size_t count = split == &ds.train ? cfg.num_train
                              : split == &ds.dev ? cfg.num_dev
                                                 : cfg.num_test;
    split->reserve(count);
    for (std::size_t i = 0; i < count; ++i, ++id) {
      split->push_back(make_sample(id));
    }
  }
  return ds;
}

void append_frame(Sample& s, const std::vector<double>& base, double amplitude,
                  double noise_std, Rng& rng) {
  for (double v : base) s.features.push_back(amplitude * v + noise_std * rng.normal());
  ++s.frames;
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::equal(tag, tag + 4, b.begin() + static_cast<std::ptrdiff_t>(at),
                    [](char c, std::uint8_t u) { return static_cast<std::uint8_t>(c) == u; });
}

void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

// |X_k| for k = 0..n/2 of a real frame.
std::vector<double> magnitude_spectrum(const std::vector<double>& frame) {
  const std::size_t n = frame.size();
  const std::size_t bins = n / 2 + 1;
  std::vector<double> mag(bins);
  if ((n & (n - 1)) == 0) {
    std::vector<std::complex<double>> a(frame.begin(), frame.end());
    fft_inplace(a);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(a[k]);
    return mag;
  }
  for (std::size_t k = 0; k < bins; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      acc += frame[t] * std::polar(1.0, -2.0 * std::numbers::pi *
                                            static_cast<double>(k * t % n) /
                                            static_cast<double>(n));
    }
    mag[k] = std::abs(acc);
  }
  return mag;
}

}  // namespace

void SynthTaskConfig::validate() const {
  if (num_symbols < 1) throw ConfigError("data.num_symbols must be >= 1");
  if (feature_dim < num_symbols) {
    throw ConfigError("data.feature_dim must be >= num_symbols so prototypes are orthogonal");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("data.noise_std must be >= 0");
  if (task == TaskKind::ctc) {
    check_range(frames_per_symbol, "frames_per_symbol");
    check_range(symbols_per_utterance, "symbols_per_utterance", 0);
    if (num_symbols < 2 && symbols_per_utterance.second > 1) {
      throw ConfigError("data: a single-symbol vocabulary cannot form repeat-free sequences");
    }
  } else {
    check_range(frames, "frames");
    check_range(salient_span, "salient_span");
    if (salient_span.second > frames.first) {
      throw ConfigError("data.salient_span must fit in the shortest utterance");
    }
    if (num_symbols < 2) throw ConfigError("data: classification needs >= 2 classes");
  }
}

Tensor Sample::feature_tensor() const {
  return Tensor::from({frames, dim}, features);
}

std::vector<double> prototype(std::size_t symbol, std::size_t dim) {
  if (symbol >= dim) throw ContractViolation("prototype: symbol exceeds dimension");
  std::vector<double> v(dim, 0.0);
  v[symbol] = 1.0;
  return v;
}

Dataset gen_ctc_task(const SynthTaskConfig& cfg) {
  if (cfg.task != TaskKind::ctc) throw ConfigError("gen_ctc_task: task is not ctc");
  return generate(cfg, [&](std::uint64_t id) {
    // Draw order: symbol count, then per symbol (label, frame count, frames).
    Rng rng = Rng::derive(cfg.seed, kCtcStream, id);
    Sample s;
    s.id = id;
    s.dim = cfg.feature_dim;
    const std::size_t n_sym = draw(rng, cfg.symbols_per_utterance);
    const auto v = static_cast<std::int64_t>(cfg.num_symbols);
    for (std::size_t i = 0; i < n_sym; ++i) {
      int label;
      if (s.target.empty()) {
        label = static_cast<int>(rng.uniform_int(1, v));
      } else {
        // Uniform over the other V-1 labels: no adjacent repeats.
        label = static_cast<int>(rng.uniform_int(1, v - 1));
        if (label >= s.target.back()) ++label;
      }
      s.target.push_back(label);
      const auto proto = prototype(static_cast<std::size_t>(label - 1), cfg.feature_dim);
      const std::size_t reps = draw(rng, cfg.frames_per_symbol);
      for (std::size_t r = 0; r < reps; ++r) {
        append_frame(s, proto, 1.0, cfg.noise_std, rng);
      }
    }
    if (s.frames == 0) {
      // Empty transcription still needs one (silent) frame.
      append_frame(s, std::vector<double>(cfg.feature_dim, 0.0), 1.0, cfg.noise_std, rng);
    }
    return s;
  });
}

Dataset gen_cls_task(const SynthTaskConfig& cfg) {
  if (cfg.task != TaskKind::classification) {
    throw ConfigError("gen_cls_task: task is not classification");
  }
  return generate(cfg, [&](std::uint64_t id) {
    // Draw order: class, length, span length, span start, then per frame
    // (distractor symbol if outside the span, noise).
    Rng rng = Rng::derive(cfg.seed, kClsStream, id);
    Sample s;
    s.id = id;
    s.dim = cfg.feature_dim;
    const auto k = static_cast<std::int64_t>(cfg.num_symbols);
    const int label = static_cast<int>(rng.uniform_int(0, k - 1));
    s.target = {label};
    const std::size_t t_len = draw(rng, cfg.frames);
    const std::size_t span = draw(rng, cfg.salient_span);
    const auto start = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(t_len - span)));
    const auto salient = prototype(static_cast<std::size_t>(label), cfg.feature_dim);
    for (std::size_t t = 0; t < t_len; ++t) {
      if (t >= start && t < start + span) {
        append_frame(s, salient, 1.0, cfg.noise_std, rng);
      } else {
        const auto other = static_cast<std::size_t>(rng.uniform_int(0, k - 1));
        append_frame(s, prototype(other, cfg.feature_dim), cfg.distractor_scale,
                     cfg.noise_std, rng);
      }
    }
    return s;
  });
}

Dataset gen_task(const SynthTaskConfig& cfg) {
  return cfg.task == TaskKind::ctc ? gen_ctc_task(cfg) : gen_cls_task(cfg);
}

Batch pad_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw ContractViolation("pad_batch: empty sample list");
  Batch b;
  b.dim = samples[0].dim;
  for (const auto& s : samples) {
    if (s.dim != b.dim) throw ContractViolation("pad_batch: feature dim mismatch");
    b.max_frames = std::max(b.max_frames, s.frames);
  }
  for (const auto& s : samples) {
    std::vector<double> padded(b.max_frames * b.dim, 0.0);
    std::copy(s.features.begin(), s.features.end(), padded.begin());
    b.features.push_back(Tensor::from({b.max_frames, b.dim}, std::move(padded)));
    b.lengths.push_back(s.frames);
    b.targets.push_back(s.target);
    b.ids.push_back(s.id);
  }
  return b;
}

// ---- WAV --------------------------------------------------------------------

WavAudio wav_parse(std::span<const std::uint8_t> b) {
  if (b.size() < 12) throw IngestionError("wav: file shorter than RIFF header");
  if (!tag_is(b, 0, "RIFF")) throw IngestionError("wav: missing 'RIFF' chunk id");
  if (!tag_is(b, 8, "WAVE")) throw IngestionError("wav: RIFF form type is not 'WAVE'");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) {
      throw IngestionError("wav: chunk size exceeds file length");
    }
    if (tag_is(b, pos, "fmt ")) {
      if (size < 16) throw IngestionError("wav: 'fmt ' chunk shorter than 16 bytes");
      format = read_u16(b, body);
      channels = read_u16(b, body + 2);
      rate = read_u32(b, body + 4);
      bits = read_u16(b, body + 14);
      if (format != 1) {
        throw IngestionError("wav: unsupported audio_format " + std::to_string(format) +
                             " (only PCM = 1)");
      }
      if (channels != 1 && channels != 2) {
        throw IngestionError("wav: unsupported num_channels " + std::to_string(channels));
      }
      if (bits != 16) {
        throw IngestionError("wav: unsupported bits_per_sample " + std::to_string(bits));
      }
      if (rate == 0) throw IngestionError("wav: sample_rate is 0");
      have_fmt = true;
    } else if (tag_is(b, pos, "data")) {
      if (!have_fmt) throw IngestionError("wav: 'data' chunk before 'fmt ' chunk");
      const std::size_t frame_bytes = 2u * channels;
      if (size % frame_bytes != 0) {
        throw IngestionError("wav: data size not a multiple of block_align");
      }
      WavAudio out;
      out.sample_rate = rate;
      const std::size_t n = size / frame_bytes;
      out.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < channels; ++ch) {
          const auto raw = static_cast<std::int16_t>(read_u16(b, body + i * frame_bytes + 2 * ch));
          acc += static_cast<double>(raw) / 32768.0;
        }
        out.samples[i] = acc / channels;
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw IngestionError(have_fmt ? "wav: missing 'data' chunk" : "wav: missing 'fmt ' chunk");
}

WavAudio wav_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("wav: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return wav_parse(bytes);
}

void wav_write(const std::filesystem::path& path, std::uint32_t sample_rate,
               std::span<const double> samples) {
  std::vector<std::uint8_t> b;
  auto put_tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto put16 = [&](std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  put_tag("RIFF");
  put32(36 + data_bytes);
  put_tag("WAVE");
  put_tag("fmt ");
  put32(16);
  put16(1);
  put16(1);
  put32(sample_rate);
  put32(sample_rate * 2);
  put16(2);
  put16(16);
  put_tag("data");
  put32(data_bytes);
  for (double s : samples) {
    const double q = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IngestionError("wav: cannot write " + path.string());
}

// ---- log-mel ----------------------------------------------------------------

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(std::size_t n_mels, std::size_t frame_len,
                                   double sample_rate) {
  const std::size_t bins = frame_len / 2 + 1;
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  std::vector<double> fb(n_mels * bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(frame_len);
      double w = 0.0;
      if (f > lo && f <= center) {
        w = (f - lo) / (center - lo);
      } else if (f > center && f < hi) {
        w = (hi - f) / (hi - center);
      }
      fb[m * bins + k] = w;
    }
  }
  return fb;
}

LogMel log_mel(std::span<const double> samples, double sample_rate,
               const LogMelConfig& cfg) {
  if (cfg.hop == 0 || cfg.frame_len < cfg.hop) {
    throw ContractViolation("log_mel: need frame_len >= hop > 0");
  }
  if (cfg.n_mels == 0) throw ContractViolation("log_mel: n_mels must be > 0");
  LogMel out;
  out.n_mels = cfg.n_mels;
  if (samples.size() < cfg.frame_len) {
    out.frames = 1;
    out.padded_short_input = true;
  } else {
    out.frames = 1 + (samples.size() - cfg.frame_len) / cfg.hop;
  }
  const std::size_t n = cfg.frame_len;
  const std::size_t bins = n / 2 + 1;
  std::vector<double> window(n);
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(n));
  }
  const auto fb = mel_filterbank(cfg.n_mels, n, sample_rate);
  out.values.resize(out.frames * cfg.n_mels);
  std::vector<double> frame(n);
  for (std::size_t t = 0; t < out.frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t src = t * cfg.hop + i;
      frame[i] = src < samples.size() ? samples[src] * window[i] : 0.0;
    }
    const auto mag = magnitude_spectrum(frame);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m * bins + k] * mag[k];
      out.values[t * cfg.n_mels + m] = std::log(e + 1e-6);
    }
  }
  return out;
}

// ---- manifests --------------------------------------------------------------

std::vector<Sample> read_manifest(const std::filesystem::path& path, TaskKind task,
                                  const LogMelConfig& mel) {
  std::ifstream in(path);
  if (!in) throw IngestionError("manifest: cannot open " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IngestionError("manifest " + where + ": " + e.what());
    }
    Sample s;
    try {
      s.id = j.at("id").get<std::uint64_t>();
      if (j.contains("features")) {
        const auto& rows = j.at("features");
        s.frames = rows.size();
        s.dim = s.frames ? rows[0].size() : 0;
        for (const auto& r : rows) {
          if (r.size() != s.dim) throw IngestionError("manifest " + where + ": ragged features");
          for (const auto& v : r) s.features.push_back(v.get<double>());
        }
      } else if (j.contains("path")) {
        auto wav_path = std::filesystem::path(j.at("path").get<std::string>());
        if (wav_path.is_relative()) wav_path = path.parent_path() / wav_path;
        const auto audio = wav_read(wav_path);
        auto feats = log_mel(audio.samples, audio.sample_rate, mel);
        s.frames = feats.frames;
        s.dim = feats.n_mels;
        s.features = std::move(feats.values);
      } else {
        throw IngestionError("manifest " + where + ": needs 'features' or 'path'");
      }
      const auto& target = j.at("target");
      if (task == TaskKind::ctc) {
        s.target = target.get<std::vector<int>>();
        for (int label : s.target) {
          if (label <= 0) throw IngestionError("manifest " + where + ": target uses blank/negative label");
        }
      } else {
        s.target = {target.get<int>()};
      }
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError("manifest " + where + ": " + e.what());
    }
    if (s.frames == 0) throw IngestionError("manifest " + where + ": no frames");
    out.push_back(std::move(s));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const Sample> samples,
                    TaskKind task) {
  std::ofstream out(path);
  if (!out) throw IngestionError("manifest: cannot write " + path.string());
  for (const auto& s : samples) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t t = 0; t < s.frames; ++t) {
      rows.push_back(std::vector<double>(
          s.features.begin() + static_cast<std::ptrdiff_t>(t * s.dim),
          s.features.begin() + static_cast<std::ptrdiff_t>((t + 1) * s.dim)));
    }
    nlohmann::json j;
    j["id"] = s.id;
    j["features"] = std::move(rows);
    if (task == TaskKind::ctc) {
      j["target"] = s.target;
    } else {
      j["target"] = s.target.at(0);
    }
    out << j.dump() << '\n';
  }
}

}  // namespace idld
