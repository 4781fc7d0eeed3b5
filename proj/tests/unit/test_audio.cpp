#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "avg/audio.hpp"
#include "avg/rng.hpp"

using namespace avg;
using namespace avg::audio;

namespace {

Waveform sine(double freq, double dur, double sr = 16000.0, double amp = 0.5) {
  Waveform w;
  w.sample_rate = sr;
  auto n = static_cast<int64_t>(std::llround(dur * sr));
  w.samples = Tensor({n});
  for (int64_t i = 0; i < n; ++i)
    w.samples[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / sr);
  return w;
}

std::string tmp(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("WAV round trip within PCM16 quantization") {
  Waveform w = sine(440.0, 0.25);
  auto p = tmp("avg_rt.wav");
  write_wav(w, p);
  Waveform r = read_wav(p);
  CHECK(r.sample_rate == doctest::Approx(16000.0));
  REQUIRE(r.num_samples() == w.num_samples());
  for (int64_t i = 0; i < r.num_samples(); i += 7)
    CHECK(r.samples[i] == doctest::Approx(w.samples[i]).epsilon(0).scale(1).epsilon(1e-3));
  std::remove(p.c_str());
}

TEST_CASE("WAV reader rejects malformed files") {
  auto p = tmp("avg_bad.wav");
  {
    std::ofstream out(p, std::ios::binary);
    out << "JUNKJUNKJUNKJUNK";
  }
  CHECK_THROWS_AS(read_wav(p), ParseError);

  // valid file then truncated mid-payload
  write_wav(sine(440.0, 0.1), p);
  auto size = std::filesystem::file_size(p);
  std::filesystem::resize_file(p, size - 64);
  CHECK_THROWS_AS(read_wav(p), ParseError);
  CHECK_THROWS_AS(read_wav(tmp("avg_nosuch.wav")), IoError);
  std::remove(p.c_str());
}

TEST_CASE("log-mel shapes: 1 second at 50 Hz and 64 bins") {
  auto enc = make_logmel_encoder(64, 50.0);
  Waveform w = sine(300.0, 1.0);
  AudioFeatures f = extract_features(w, *enc);
  CHECK(f.features.shape() == std::vector<int64_t>{50, 64});
  CHECK(f.rate == doctest::Approx(50.0));
  // T' = floor(duration * rate)
  Waveform w2 = sine(300.0, 0.73);
  CHECK(extract_features(w2, *enc).features.dim(0) == 36);
}

TEST_CASE("log-mel silence hits the log floor everywhere") {
  auto enc = make_logmel_encoder(64, 50.0);
  Waveform w;
  w.sample_rate = 16000.0;
  w.samples = Tensor({16000});
  AudioFeatures f = extract_features(w, *enc);
  double floor_val = std::log(1e-10);
  for (int64_t t = 0; t < f.features.dim(0); ++t)
    for (int64_t d = 0; d < f.features.dim(1); ++d)
      CHECK(f.features.at(t, d) == doctest::Approx(floor_val));
}

TEST_CASE("log-mel is deterministic and distinguishes tones") {
  auto enc = make_logmel_encoder(64, 50.0);
  Waveform w = sine(500.0, 0.5);
  AudioFeatures a = extract_features(w, *enc);
  AudioFeatures b = extract_features(w, *enc);
  for (int64_t i = 0; i < a.features.numel(); ++i) CHECK(a.features[i] == b.features[i]);

  auto peak_bin = [&](double freq) {
    AudioFeatures f = extract_features(sine(freq, 0.5), *enc);
    int64_t best = 0;
    for (int64_t d = 1; d < f.features.dim(1); ++d)
      if (f.features.at(10, d) > f.features.at(10, best)) best = d;
    return best;
  };
  CHECK(peak_bin(400.0) < peak_bin(3000.0));
}

TEST_CASE("conv encoder is trainable and seed deterministic") {
  auto e1 = make_conv_encoder(16, 50.0, 42);
  auto e2 = make_conv_encoder(16, 50.0, 42);
  auto e3 = make_conv_encoder(16, 50.0, 43);
  Waveform w = sine(600.0, 0.3);
  Tensor a = e1->encode(w).value();
  Tensor b = e2->encode(w).value();
  CHECK(a.shape() == std::vector<int64_t>{15, 16});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  Tensor c = e3->encode(w).value();
  bool differs = false;
  for (int64_t i = 0; i < a.numel(); ++i) differs = differs || a[i] != c[i];
  CHECK(differs);

  CHECK(e1->parameters().size() == 4);
  CHECK(e1->parameter_names().size() == 4);
  ag::Var y = ag::sum(e1->encode(w));
  ag::backward(y);
  bool any_nonzero = false;
  for (auto& p : e1->parameters()) {
    REQUIRE(!p.grad().empty());
    for (int64_t i = 0; i < p.grad().numel(); ++i)
      any_nonzero = any_nonzero || p.grad()[i] != 0.0;
  }
  CHECK(any_nonzero);
}

TEST_CASE("encoder factory") {
  CHECK(make_encoder("logmel", 64, 50.0, 1)->kind() == "logmel");
  CHECK(make_encoder("conv", 32, 50.0, 1)->kind() == "conv");
  CHECK_THROWS_AS(make_encoder("wav2vec", 64, 50.0, 1), ConfigError);
}

TEST_CASE("feature resampling: decimation, identity, interpolation") {
  AudioFeatures f;
  f.rate = 50.0;
  f.features = Tensor({50, 3});
  for (int64_t t = 0; t < 50; ++t)
    for (int64_t d = 0; d < 3; ++d) f.features.at(t, d) = static_cast<double>(t * 10 + d);

  AudioFeatures half = resample_features(f, 25.0);
  CHECK(half.features.dim(0) == 25);
  CHECK(half.rate == doctest::Approx(25.0));
  for (int64_t t = 0; t < 25; ++t)
    CHECK(half.features.at(t, 0) == doctest::Approx(f.features.at(2 * t, 0)));

  AudioFeatures same = resample_features(f, 50.0);
  REQUIRE(same.features.dim(0) == 50);
  for (int64_t i = 0; i < f.features.numel(); ++i)
    CHECK(same.features[i] == doctest::Approx(f.features[i]));

  AudioFeatures tiny;
  tiny.rate = 3.0;
  tiny.features = Tensor::from_vector({3, 1}, {0.0, 2.0, 4.0});
  AudioFeatures up = resample_features(tiny, 6.0);
  REQUIRE(up.features.dim(0) == 6);
  CHECK(up.features[0] == doctest::Approx(0.0));
  CHECK(up.features[1] == doctest::Approx(1.0));
  CHECK(up.features[2] == doctest::Approx(2.0));
  CHECK(up.features[3] == doctest::Approx(3.0));
  CHECK(up.features[4] == doctest::Approx(4.0));
  CHECK(up.features[5] == doctest::Approx(4.0));  // clamped tail
}

TEST_CASE("feature resampling backpropagates linearly") {
  Rng r(77);
  Tensor x = Tensor::randn({7, 4}, r);
  double err = ag::gradient_check(
      [](const ag::Var& v) { return ag::sum(resample_features(v, 50.0, 36.0)); }, x, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("waveform resampling halves the length") {
  Waveform w = sine(200.0, 0.5);
  Waveform h = resample_waveform(w, 8000.0);
  CHECK(h.sample_rate == doctest::Approx(8000.0));
  CHECK(h.num_samples() == 4000);
  CHECK(h.samples.all_finite());
  Waveform same = resample_waveform(w, 16000.0);
  CHECK(same.num_samples() == w.num_samples());
}

TEST_CASE("empty waveform is rejected") {
  auto enc = make_logmel_encoder(64, 50.0);
  Waveform w;
  w.sample_rate = 16000.0;
  w.samples = Tensor({0});
  CHECK_THROWS_AS(extract_features(w, *enc), ContractError);
}
