#include "avg/audio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "avg/error.hpp"
#include "avg/rng.hpp"

namespace avg::audio {

void Waveform::validate() const {
  AVG_CHECK(samples.ndim() == 1, ContractError, "waveform must be 1-D");
  AVG_CHECK(num_samples() >= 1, ContractError, "waveform is empty");
  AVG_CHECK(sample_rate > 0.0, ContractError, "waveform sample_rate must be positive");
  AVG_CHECK(samples.all_finite(), ValidationError, "waveform has non-finite samples");
}

void AudioFeatures::validate() const {
  AVG_CHECK(features.ndim() == 2 && features.dim(0) >= 1, ContractError,
            "features must be [T',D] with T' >= 1");
  AVG_CHECK(rate > 0.0, ContractError, "feature rate must be positive");
  AVG_CHECK(features.all_finite(), ValidationError, "features have non-finite values");
}

// ---------------------------------------------------------------------------
// WAV PCM16 mono

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  AVG_CHECK(in.gcount() == sizeof(T), ParseError, path + ": truncated WAV header");
  return v;
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  AVG_CHECK(in.good(), IoError, "cannot open WAV file: " + path);
  char tag[4];
  in.read(tag, 4);
  AVG_CHECK(in.gcount() == 4 && std::memcmp(tag, "RIFF", 4) == 0, ParseError,
            path + ": missing RIFF header");
  get<uint32_t>(in, path);  // riff size, unused
  in.read(tag, 4);
  AVG_CHECK(in.gcount() == 4 && std::memcmp(tag, "WAVE", 4) == 0, ParseError,
            path + ": not a WAVE file");

  uint32_t sample_rate = 0;
  uint16_t channels = 0, bits = 0;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    uint32_t size = get<uint32_t>(in, path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      auto format = get<uint16_t>(in, path);
      channels = get<uint16_t>(in, path);
      sample_rate = get<uint32_t>(in, path);
      get<uint32_t>(in, path);  // byte rate
      get<uint16_t>(in, path);  // block align
      bits = get<uint16_t>(in, path);
      AVG_CHECK(format == 1, ParseError, path + ": only PCM WAV is supported");
      AVG_CHECK(channels == 1, ParseError, path + ": only mono WAV is supported");
      AVG_CHECK(bits == 16, ParseError, path + ": only 16-bit WAV is supported");
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      AVG_CHECK(have_fmt, ParseError, path + ": data chunk before fmt chunk");
      AVG_CHECK(size % 2 == 0, ParseError, path + ": odd data chunk size");
      int64_t n = static_cast<int64_t>(size / 2);
      AVG_CHECK(n >= 1, ParseError, path + ": empty data chunk");
      std::vector<int16_t> raw(static_cast<size_t>(n));
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
      AVG_CHECK(in.gcount() == static_cast<std::streamsize>(size), ParseError,
                path + ": corrupt payload, truncated data chunk");
      Waveform w;
      w.sample_rate = static_cast<double>(sample_rate);
      w.samples = Tensor({n});
      for (int64_t i = 0; i < n; ++i)
        w.samples[i] = static_cast<double>(raw[static_cast<size_t>(i)]) / 32768.0;
      w.validate();
      return w;
    } else {
      in.seekg(size + (size % 2), std::ios::cur);  // skip unknown chunk (word aligned)
    }
  }
  throw ParseError(path + ": no data chunk found");
}

void write_wav(const Waveform& w, const std::string& path) {
  w.validate();
  std::ofstream out(path, std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write WAV file: " + path);
  uint32_t sr = static_cast<uint32_t>(std::lround(w.sample_rate));
  uint32_t data_bytes = static_cast<uint32_t>(w.num_samples() * 2);
  out.write("RIFF", 4);
  put<uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put<uint32_t>(out, 16);
  put<uint16_t>(out, 1);   // PCM
  put<uint16_t>(out, 1);   // mono
  put<uint32_t>(out, sr);
  put<uint32_t>(out, sr * 2);
  put<uint16_t>(out, 2);
  put<uint16_t>(out, 16);
  out.write("data", 4);
  put<uint32_t>(out, data_bytes);
  for (int64_t i = 0; i < w.num_samples(); ++i) {
    double v = std::max(-1.0, std::min(1.0, w.samples[i]));
    auto s = static_cast<int16_t>(std::lround(v * 32767.0));
    put<int16_t>(out, s);
  }
  AVG_CHECK(out.good(), IoError, "failed writing WAV file: " + path);
}

Waveform resample_waveform(const Waveform& w, double target_rate) {
  w.validate();
  AVG_CHECK(target_rate > 0.0, ContractError, "target sample rate must be positive");
  if (w.sample_rate == target_rate) return w;
  int64_t n_in = w.num_samples();
  auto n_out = static_cast<int64_t>(
      std::llround(static_cast<double>(n_in) * target_rate / w.sample_rate));
  n_out = std::max<int64_t>(n_out, 1);
  Waveform out;
  out.sample_rate = target_rate;
  out.samples = Tensor({n_out});
  for (int64_t i = 0; i < n_out; ++i) {
    double s = static_cast<double>(i) * w.sample_rate / target_rate;
    auto i0 = static_cast<int64_t>(std::floor(s));
    double frac = s - static_cast<double>(i0);
    i0 = std::min(i0, n_in - 1);
    int64_t i1 = std::min(i0 + 1, n_in - 1);
    out.samples[i] = (1.0 - frac) * w.samples[i0] + frac * w.samples[i1];
  }
  return out;
}

// ---------------------------------------------------------------------------
// framing shared by both encoders

namespace {

struct Framing {
  int64_t win = 0, num_frames = 0;
  double hop = 0.0;  // samples per feature frame

  static Framing of(const Waveform& w, double rate) {
    Framing f;
    f.win = std::max<int64_t>(8, static_cast<int64_t>(std::lround(0.025 * w.sample_rate)));
    f.hop = w.sample_rate / rate;
    f.num_frames = std::max<int64_t>(
        1, static_cast<int64_t>(std::floor(w.duration() * rate)));
    return f;
  }

  int64_t start(int64_t t) const {
    return static_cast<int64_t>(std::llround(static_cast<double>(t) * hop));
  }
};

// windowed frame matrix [T', win], zero padded past the signal tail
Tensor frame_signal(const Waveform& w, const Framing& fr, const std::vector<double>& window) {
  Tensor out({fr.num_frames, fr.win});
  int64_t n = w.num_samples();
  for (int64_t t = 0; t < fr.num_frames; ++t) {
    int64_t s0 = fr.start(t);
    for (int64_t i = 0; i < fr.win; ++i) {
      int64_t s = s0 + i;
      double v = (s < n) ? w.samples[s] : 0.0;
      out.at(t, i) = v * window[static_cast<size_t>(i)];
    }
  }
  return out;
}

std::vector<double> hann(int64_t win) {
  std::vector<double> h(static_cast<size_t>(win));
  for (int64_t i = 0; i < win; ++i)
    h[static_cast<size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(win - 1));
  return h;
}

// ---------------------------------------------------------------------------
// log-mel filterbank

constexpr double kLogFloor = 1e-10;

double mel_of(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double hz_of(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

class LogMelEncoder final : public SpeechEncoder {
 public:
  LogMelEncoder(int64_t dim, double rate) : dim_(dim), rate_(rate) {
    AVG_CHECK(dim >= 4, ContractError, "log-mel needs at least 4 bins");
    AVG_CHECK(rate > 0.0, ContractError, "encoder rate must be positive");
  }

  ag::Var encode(const Waveform& w) override {
    w.validate();
    Framing fr = Framing::of(w, rate_);
    auto window = hann(fr.win);
    Tensor frames = frame_signal(w, fr, window);

    ensure_tables(fr.win, w.sample_rate);
    int64_t bins = fr.win / 2 + 1;
    Tensor feats({fr.num_frames, dim_});
    std::vector<double> power(static_cast<size_t>(bins));
    for (int64_t t = 0; t < fr.num_frames; ++t) {
      for (int64_t b = 0; b < bins; ++b) {
        double re = 0.0, im = 0.0;
        const double* row = frames.data() + t * fr.win;
        const double* ct = cos_.data() + b * fr.win;
        const double* st = sin_.data() + b * fr.win;
        for (int64_t i = 0; i < fr.win; ++i) {
          re += row[i] * ct[i];
          im += row[i] * st[i];
        }
        power[static_cast<size_t>(b)] = re * re + im * im;
      }
      for (int64_t m = 0; m < dim_; ++m) {
        double acc = 0.0;
        const double* f = filters_.data() + m * bins;
        for (int64_t b = 0; b < bins; ++b) acc += f[b] * power[static_cast<size_t>(b)];
        feats.at(t, m) = std::log(std::max(acc, kLogFloor));
      }
    }
    return ag::Var::constant(std::move(feats));
  }

  double rate() const override { return rate_; }
  int64_t dim() const override { return dim_; }
  std::string kind() const override { return "logmel"; }

 private:
  void ensure_tables(int64_t win, double sample_rate) {
    if (win == table_win_ && sample_rate == table_sr_) return;
    table_win_ = win;
    table_sr_ = sample_rate;
    int64_t bins = win / 2 + 1;
    cos_ = Tensor({bins, win});
    sin_ = Tensor({bins, win});
    for (int64_t b = 0; b < bins; ++b)
      for (int64_t i = 0; i < win; ++i) {
        double a = 2.0 * M_PI * static_cast<double>(b) * static_cast<double>(i) /
                   static_cast<double>(win);
        cos_.at(b, i) = std::cos(a);
        sin_.at(b, i) = -std::sin(a);
      }
    // triangular mel filters spanning [0, nyquist]
    filters_ = Tensor({dim_, bins});
    double mel_lo = mel_of(0.0), mel_hi = mel_of(sample_rate / 2.0);
    std::vector<double> centers(static_cast<size_t>(dim_ + 2));
    for (int64_t m = 0; m < dim_ + 2; ++m)
      centers[static_cast<size_t>(m)] =
          hz_of(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m) /
                             static_cast<double>(dim_ + 1));
    for (int64_t m = 0; m < dim_; ++m) {
      double lo = centers[static_cast<size_t>(m)];
      double mid = centers[static_cast<size_t>(m + 1)];
      double hi = centers[static_cast<size_t>(m + 2)];
      for (int64_t b = 0; b < bins; ++b) {
        double hz = static_cast<double>(b) * sample_rate / static_cast<double>(win);
        double v = 0.0;
        if (hz > lo && hz < mid)
          v = (hz - lo) / (mid - lo);
        else if (hz >= mid && hz < hi)
          v = (hi - hz) / (hi - mid);
        filters_.at(m, b) = v;
      }
    }
  }

  int64_t dim_;
  double rate_;
  int64_t table_win_ = -1;
  double table_sr_ = -1.0;
  Tensor cos_, sin_, filters_;
};

// ---------------------------------------------------------------------------
// trainable conv encoder

class ConvEncoder final : public SpeechEncoder {
 public:
  ConvEncoder(int64_t dim, double rate, uint64_t seed) : dim_(dim), rate_(rate) {
    AVG_CHECK(dim >= 1, ContractError, "conv encoder dim must be positive");
    Rng rng(derive_seed(seed, "conv_encoder"));
    // lazily sized input projection: window length depends on sample rate,
    // so parameters materialize on the first encode and then stay fixed
    rng_state_ = rng.next_u64();
  }

  ag::Var encode(const Waveform& w) override {
    w.validate();
    Framing fr = Framing::of(w, rate_);
    ensure_params(fr.win);
    auto window = hann(fr.win);
    Tensor frames = frame_signal(w, fr, window);
    ag::Var x = ag::Var::constant(std::move(frames));
    ag::Var h = ag::tanh_op(ag::add_rowvec(ag::matmul(x, w1_), b1_));
    ag::Var y = ag::tanh_op(ag::conv1d_same(h, wc_, bc_));
    return y;
  }

  double rate() const override { return rate_; }
  int64_t dim() const override { return dim_; }
  std::string kind() const override { return "conv"; }
  std::vector<ag::Var> parameters() override {
    AVG_CHECK(w1_.defined(), StateError, "conv encoder parameters not materialized yet");
    return {w1_, b1_, wc_, bc_};
  }
  std::vector<std::string> parameter_names() override {
    return {"enc.w1", "enc.b1", "enc.wc", "enc.bc"};
  }

 private:
  void ensure_params(int64_t win) {
    if (w1_.defined()) {
      AVG_CHECK(w1_.value().dim(0) == win, ContractError,
                "conv encoder was built for a different sample rate");
      return;
    }
    Rng rng(rng_state_);
    double s1 = 1.0 / std::sqrt(static_cast<double>(win));
    w1_ = ag::Var::param(Tensor::randn({win, dim_}, rng, s1));
    b1_ = ag::Var::param(Tensor::zeros({dim_}));
    double s2 = 1.0 / std::sqrt(static_cast<double>(dim_ * 5));
    wc_ = ag::Var::param(Tensor::randn({dim_, dim_, 5}, rng, s2));
    bc_ = ag::Var::param(Tensor::zeros({dim_}));
  }

  int64_t dim_;
  double rate_;
  uint64_t rng_state_;
  ag::Var w1_, b1_, wc_, bc_;
};

}  // namespace

std::unique_ptr<SpeechEncoder> make_logmel_encoder(int64_t dim, double rate) {
  return std::make_unique<LogMelEncoder>(dim, rate);
}

std::unique_ptr<SpeechEncoder> make_conv_encoder(int64_t dim, double rate, uint64_t seed) {
  return std::make_unique<ConvEncoder>(dim, rate, seed);
}

std::unique_ptr<SpeechEncoder> make_encoder(const std::string& kind_name, int64_t dim,
                                            double rate, uint64_t seed) {
  if (kind_name == "logmel") return make_logmel_encoder(dim, rate);
  if (kind_name == "conv") return make_conv_encoder(dim, rate, seed);
  throw ConfigError("unknown speech_encoder '" + kind_name + "' (expected logmel | conv)");
}

AudioFeatures extract_features(const Waveform& w, SpeechEncoder& encoder) {
  AVG_CHECK(w.num_samples() >= 1, ContractError, "extract_features: empty waveform");
  ag::NoGradGuard ng;
  AudioFeatures f;
  f.features = encoder.encode(w).value();
  f.rate = encoder.rate();
  f.validate();
  return f;
}

ag::Var resample_features(const ag::Var& features, double rate, double target_fps) {
  AVG_CHECK(target_fps > 0.0 && rate > 0.0, ContractError,
            "resample_features: rates must be positive");
  const Tensor& F = features.value();
  AVG_CHECK(F.ndim() == 2, ContractError, "resample_features expects [T',D]");
  int64_t tin = F.dim(0), D = F.dim(1);
  auto tout = static_cast<int64_t>(
      std::llround(static_cast<double>(tin) * target_fps / rate));
  tout = std::max<int64_t>(tout, 1);

  // output frame t sits at time t/target_fps -> source index t*rate/target_fps
  std::vector<int64_t> lo(static_cast<size_t>(tout)), hi(static_cast<size_t>(tout));
  std::vector<double> frac(static_cast<size_t>(tout));
  for (int64_t t = 0; t < tout; ++t) {
    double s = static_cast<double>(t) * rate / target_fps;
    auto i0 = static_cast<int64_t>(std::floor(s));
    double fr = s - static_cast<double>(i0);
    if (i0 >= tin - 1) {
      i0 = tin - 1;
      fr = 0.0;
    }
    lo[static_cast<size_t>(t)] = i0;
    hi[static_cast<size_t>(t)] = std::min(i0 + 1, tin - 1);
    frac[static_cast<size_t>(t)] = fr;
  }

  Tensor out({tout, D});
  for (int64_t t = 0; t < tout; ++t)
    for (int64_t d = 0; d < D; ++d)
      out.at(t, d) = (1.0 - frac[static_cast<size_t>(t)]) * F.at(lo[static_cast<size_t>(t)], d) +
                     frac[static_cast<size_t>(t)] * F.at(hi[static_cast<size_t>(t)], d);

  return ag::make_custom(
      {features}, std::move(out),
      [lo, hi, frac, D](const Tensor& og, const std::vector<ag::NodeRef>&,
                        const std::vector<Tensor*>& gs) {
        if (!gs[0]) return;
        Tensor& g = *gs[0];
        for (size_t t = 0; t < lo.size(); ++t)
          for (int64_t d = 0; d < D; ++d) {
            double dy = og.at(static_cast<int64_t>(t), d);
            g.at(lo[t], d) += (1.0 - frac[t]) * dy;
            g.at(hi[t], d) += frac[t] * dy;
          }
      });
}

AudioFeatures resample_features(const AudioFeatures& f, double target_fps) {
  f.validate();
  ag::NoGradGuard ng;
  AudioFeatures out;
  out.features = resample_features(ag::Var::constant(f.features), f.rate, target_fps).value();
  out.rate = target_fps;
  return out;
}

}  // namespace avg::audio
