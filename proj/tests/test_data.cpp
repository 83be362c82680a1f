#include <gtest/gtest.h>
#include <algorithm>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "idld/data.hpp"
#include "idld/errors.hpp"
#include "idld/losses.hpp"
#include "oracles.hpp"

using namespace idld;
namespace fs = std::filesystem;

namespace {

SynthTaskConfig ctc_cfg() {
  SynthTaskConfig c;
  c.task = TaskKind::ctc;
  c.num_symbols = 5;
  c.feature_dim = 8;
  c.num_train = 40;
  c.num_dev = 10;
  c.num_test = 10;
  c.seed = 3;
  return c;
}

SynthTaskConfig cls_cfg() {
  SynthTaskConfig c;
  c.task = TaskKind::classification;
  c.num_train = 60;
  c.num_dev = 20;
  c.num_test = 20;
  c.seed = 4;
  return c;
}

bool same(const Dataset& a, const Dataset& b) {
  auto eq = [](const std::vector<Sample>& x, const std::vector<Sample>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].id != y[i].id || x[i].features != y[i].features || x[i].target != y[i].target) {
        return false;
      }
    }
    return true;
  };
  return eq(a.train, b.train) && eq(a.dev, b.dev) && eq(a.test, b.test);
}

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back(v >> 8);
}

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

std::vector<std::uint8_t> wav_bytes(std::uint16_t channels, std::uint16_t bits,
                                    const std::vector<std::int16_t>& pcm,
                                    std::uint16_t format = 1) {
  std::vector<std::uint8_t> b;
  const std::uint32_t data_len = static_cast<std::uint32_t>(pcm.size() * 2);
  for (char c : std::string("RIFF")) b.push_back(c);
  put32(b, 36 + data_len);
  for (char c : std::string("WAVEfmt ")) b.push_back(c);
  put32(b, 16);
  put16(b, format);
  put16(b, channels);
  put32(b, 16000);
  put32(b, 16000 * channels * bits / 8);
  put16(b, static_cast<std::uint16_t>(channels * bits / 8));
  put16(b, bits);
  for (char c : std::string("data")) b.push_back(c);
  put32(b, data_len);
  for (auto s : pcm) put16(b, static_cast<std::uint16_t>(s));
  return b;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "idld_test_data";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(SynthCtc, NoiselessSingleSymbolIsPrototypeRepeated) {
  SynthTaskConfig c = ctc_cfg();
  c.noise_std = 0.0;
  c.symbols_per_utterance = {1, 1};
  c.frames_per_symbol = {2, 2};
  const Dataset d = gen_ctc_task(c);
  for (const Sample& s : d.train) {
    ASSERT_EQ(s.frames, 2u);
    ASSERT_EQ(s.target.size(), 1u);
    const auto proto = prototype(static_cast<std::size_t>(s.target[0] - 1), c.feature_dim);
    for (std::size_t t = 0; t < 2; ++t) {
      for (std::size_t i = 0; i < c.feature_dim; ++i) {
        EXPECT_EQ(s.features[t * c.feature_dim + i], proto[i]);
      }
    }
  }
}

TEST(SynthCtc, DeterministicGivenSeed) {
  EXPECT_TRUE(same(gen_ctc_task(ctc_cfg()), gen_ctc_task(ctc_cfg())));
  SynthTaskConfig other = ctc_cfg();
  other.seed = 99;
  EXPECT_FALSE(same(gen_ctc_task(ctc_cfg()), gen_ctc_task(other)));
}

TEST(SynthCtc, TargetsAreFeasibleAndBlankFree) {
  const Dataset d = gen_ctc_task(ctc_cfg());
  for (const auto* split : {&d.train, &d.dev, &d.test}) {
    for (const Sample& s : *split) {
      EXPECT_GE(s.frames, ctc_min_frames(s.target));
      for (std::size_t i = 0; i < s.target.size(); ++i) {
        EXPECT_GE(s.target[i], 1);
        EXPECT_LE(s.target[i], 5);
        if (i > 0) {
          EXPECT_NE(s.target[i], s.target[i - 1]);
        }
      }
    }
  }
}

TEST(SynthCtc, PrototypesAreOrthonormal) {
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = 0; b < 6; ++b) {
      const auto pa = prototype(a, 8), pb = prototype(b, 8);
      double dot = 0;
      for (std::size_t i = 0; i < 8; ++i) dot += pa[i] * pb[i];
      EXPECT_EQ(dot, a == b ? 1.0 : 0.0);
    }
  }
}

TEST(Splits, IdRangesAreDisjoint) {
  const Dataset d = gen_task(cls_cfg());
  std::set<std::uint64_t> ids;
  for (const auto* split : {&d.train, &d.dev, &d.test}) {
    for (const Sample& s : *split) EXPECT_TRUE(ids.insert(s.id).second);
  }
  EXPECT_EQ(ids.size(), 100u);
  EXPECT_EQ(d.train.back().id + 1, d.dev.front().id);
  EXPECT_EQ(d.dev.back().id + 1, d.test.front().id);
}

TEST(SynthCls, NoiselessTaskIsPerfectlySeparable) {
  SynthTaskConfig c = cls_cfg();
  c.noise_std = 0.0;
  c.num_train = 500;
  const Dataset d = gen_cls_task(c);
  // The salient span is the only place a prototype appears at full amplitude.
  for (const Sample& s : d.train) {
    std::set<std::size_t> full;
    for (std::size_t t = 0; t < s.frames; ++t) {
      for (std::size_t i = 0; i < s.dim; ++i) {
        if (s.features[t * s.dim + i] == 1.0) full.insert(i);
      }
    }
    ASSERT_EQ(full.size(), 1u);
    EXPECT_EQ(static_cast<int>(*full.begin()), s.target[0]);
  }
}

TEST(SynthCls, LabelsAreUniform) {
  SynthTaskConfig c = cls_cfg();
  c.num_train = 10000;
  c.num_dev = 1;
  c.num_test = 1;
  const Dataset d = gen_cls_task(c);
  std::map<int, double> counts;
  for (const Sample& s : d.train) counts[s.target[0]] += 1;
  const double n = 10000, p = 1.0 / static_cast<double>(c.num_symbols);
  const double sigma = std::sqrt(n * p * (1 - p));
  ASSERT_EQ(counts.size(), c.num_symbols);
  for (const auto& [label, count] : counts) EXPECT_LE(std::abs(count - n * p), 3 * sigma) << label;
}

TEST(SynthCls, DeterministicGivenSeed) {
  EXPECT_TRUE(same(gen_cls_task(cls_cfg()), gen_cls_task(cls_cfg())));
}

TEST(SynthConfig, InvalidRangesAreConfigErrors) {
  SynthTaskConfig c = cls_cfg();
  c.noise_std = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = cls_cfg();
  c.frames = {10, 4};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PadBatch, EqualLengthsNeedNoPadding) {
  const Dataset d = gen_ctc_task([] {
    SynthTaskConfig c = ctc_cfg();
    c.symbols_per_utterance = {2, 2};
    c.frames_per_symbol = {3, 3};
    return c;
  }());
  const Batch b = pad_batch(std::span(d.train).subspan(0, 3));
  EXPECT_EQ(b.max_frames, 6u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(b.lengths[i], 6u);
    const auto data = b.features[i].data();
    EXPECT_TRUE(std::equal(data.begin(), data.end(), d.train[i].features.begin()));
  }
}

TEST(PadBatch, ShortSamplesGetZeroRows) {
  Sample a{0, 2, 3, std::vector<double>(6, 1.0), {1}};
  Sample b{1, 5, 3, std::vector<double>(15, 2.0), {2}};
  const std::vector<Sample> samples{a, b};
  const Batch batch = pad_batch(samples);
  EXPECT_EQ(batch.max_frames, 5u);
  EXPECT_EQ(batch.lengths, (std::vector<std::size_t>{2, 5}));
  EXPECT_EQ(batch.ids, (std::vector<std::uint64_t>{0, 1}));
  for (std::size_t t = 2; t < 5; ++t) {
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(batch.features[0].at(t, i), 0.0);
  }
}

TEST(PadBatch, EmptyIsContractViolation) {
  EXPECT_THROW(pad_batch(std::span<const Sample>{}), ContractViolation);
}

TEST(Wav, SilenceReadsAsZeros) {
  const auto w = wav_parse(wav_bytes(1, 16, std::vector<std::int16_t>(10, 0)));
  EXPECT_EQ(w.sample_rate, 16000u);
  ASSERT_EQ(w.samples.size(), 10u);
  for (double s : w.samples) EXPECT_EQ(s, 0.0);
}

TEST(Wav, ScalingByFullScale) {
  const auto w = wav_parse(wav_bytes(1, 16, {16384, -32768}));
  EXPECT_EQ(w.samples[0], 0.5);
  EXPECT_EQ(w.samples[1], -1.0);
}

TEST(Wav, StereoChannelsAveraged) {
  const auto w = wav_parse(wav_bytes(2, 16, {16384, 0, -16384, -16384}));
  ASSERT_EQ(w.samples.size(), 2u);
  EXPECT_EQ(w.samples[0], 0.25);
  EXPECT_EQ(w.samples[1], -0.5);
}

TEST(Wav, WriteReadRoundTrip) {
  Rng rng(5);
  const auto samples = oracle::random_values(2000, rng, -1.0, 1.0);
  const fs::path p = temp_path("roundtrip.wav");
  wav_write(p, 8000, samples);
  const auto w = wav_read(p);
  EXPECT_EQ(w.sample_rate, 8000u);
  ASSERT_EQ(w.samples.size(), samples.size());
  double worst = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    worst = std::max(worst, std::abs(w.samples[i] - samples[i]));
  }
  EXPECT_LE(worst, 1.0 / 32768.0);
}

TEST(Wav, MalformedInputsNameTheField) {
  auto expect_field = [](std::vector<std::uint8_t> bytes, const std::string& field) {
    try {
      wav_parse(bytes);
      ADD_FAILURE() << "expected IngestionError for " << field;
    } catch (const IngestionError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  auto good = wav_bytes(1, 16, {1, 2, 3});
  auto bad_riff = good;
  bad_riff[0] = 'X';
  expect_field(bad_riff, "RIFF");
  auto bad_wave = good;
  bad_wave[8] = 'X';
  expect_field(bad_wave, "WAVE");
  expect_field(wav_bytes(1, 16, {1}, 3), "audio_format");
  expect_field(wav_bytes(1, 8, {1}), "bits_per_sample");
  expect_field(wav_bytes(3, 16, {1, 2, 3}), "num_channels");
  expect_field({good.begin(), good.begin() + 8}, "RIFF");
}

TEST(LogMel, FrameCountFormula) {
  const std::vector<double> s(400, 0.0);
  const LogMel m = log_mel(s, 16000, {256, 128, 10});
  EXPECT_EQ(m.frames, 2u);
  EXPECT_FALSE(m.padded_short_input);
}

TEST(LogMel, ShortInputIsSinglePaddedFrame) {
  const std::vector<double> s(100, 0.1);
  const LogMel m = log_mel(s, 16000, {256, 128, 10});
  EXPECT_EQ(m.frames, 1u);
  EXPECT_TRUE(m.padded_short_input);
}

TEST(LogMel, SilenceGivesConstantFloor) {
  const std::vector<double> s(1000, 0.0);
  const LogMel m = log_mel(s, 16000, {256, 128, 12});
  for (double v : m.values) EXPECT_EQ(v, std::log(1e-6));
}

TEST(LogMel, SineAtBandCenterPeaksInThatBand) {
  const double rate = 16000;
  const std::size_t n_mels = 20, frame = 512, band = 9;
  const double mel_hi = hz_to_mel(rate / 2);
  const double center = mel_to_hz(mel_hi * static_cast<double>(band + 1) / (n_mels + 1));
  std::vector<double> s(4096);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = 0.5 * std::sin(2 * M_PI * center * static_cast<double>(i) / rate);
  }
  const LogMel m = log_mel(s, rate, {frame, 256, n_mels});
  for (std::size_t t = 0; t < m.frames; ++t) {
    const auto row = m.values.begin() + static_cast<std::ptrdiff_t>(t * n_mels);
    EXPECT_EQ(static_cast<std::size_t>(std::max_element(row, row + n_mels) - row), band);
  }
}

TEST(LogMel, HtkMelScale) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-9);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
}

TEST(Manifest, WriteReadRoundTrip) {
  for (const SynthTaskConfig& c : {ctc_cfg(), cls_cfg()}) {
    const Dataset d = gen_task(c);
    const fs::path p = temp_path("manifest.jsonl");
    write_manifest(p, d.dev, c.task);
    const auto back = read_manifest(p, c.task);
    ASSERT_EQ(back.size(), d.dev.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      EXPECT_EQ(back[i].id, d.dev[i].id);
      EXPECT_EQ(back[i].frames, d.dev[i].frames);
      EXPECT_EQ(back[i].features, d.dev[i].features);
      EXPECT_EQ(back[i].target, d.dev[i].target);
    }
  }
}

TEST(Manifest, WavPathEntriesAreConvertedToLogMel) {
  const fs::path wav = temp_path("tone.wav");
  std::vector<double> tone(2000);
  for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = 0.3 * std::sin(0.05 * i);
  wav_write(wav, 16000, tone);
  const fs::path p = temp_path("audio.jsonl");
  {
    std::ofstream out(p);
    out << R"({"id": 7, "path": "tone.wav", "target": 2})" << '\n';
  }
  const auto samples = read_manifest(p, TaskKind::classification, {400, 160, 16});
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].dim, 16u);
  EXPECT_EQ(samples[0].frames, 1 + (2000 - 400) / 160);
  EXPECT_EQ(samples[0].target, (std::vector<int>{2}));
}

TEST(Manifest, BlankLabelRejected) {
  const fs::path p = temp_path("bad.jsonl");
  {
    std::ofstream out(p);
    out << R"({"id": 1, "features": [[0.0, 1.0]], "target": [0, 1]})" << '\n';
  }
  EXPECT_THROW(read_manifest(p, TaskKind::ctc), IngestionError);
}
