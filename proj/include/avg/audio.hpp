#pragma once

#include <memory>
#include <string>
#include <vector>

#include "avg/autograd.hpp"
#include "avg/tensor.hpp"

namespace avg::audio {

struct Waveform {
  Tensor samples;  // [N], values in [-1, 1]
  double sample_rate = 0.0;

  int64_t num_samples() const { return samples.numel(); }
  double duration() const { return static_cast<double>(num_samples()) / sample_rate; }
  void validate() const;
};

struct AudioFeatures {
  Tensor features;  // [T', D]
  double rate = 0.0;  // feature frames per second

  int64_t num_frames() const { return features.dim(0); }
  int64_t dim() const { return features.dim(1); }
  void validate() const;
};

// PCM16 mono WAV.
Waveform read_wav(const std::string& path);
void write_wav(const Waveform& w, const std::string& path);

// Linear-interpolation sample-rate conversion (used when a manifest declares
// a different rate than the file).
Waveform resample_waveform(const Waveform& w, double target_rate);

// Pluggable waveform-to-features seam. The trainable variant exposes its
// parameters so a trainer can optionally unfreeze them.
class SpeechEncoder {
 public:
  virtual ~SpeechEncoder() = default;
  virtual ag::Var encode(const Waveform& w) = 0;  // [T', dim]
  virtual double rate() const = 0;
  virtual int64_t dim() const = 0;
  virtual std::vector<ag::Var> parameters() { return {}; }
  virtual std::vector<std::string> parameter_names() { return {}; }
  virtual std::string kind() const = 0;
};

// Deterministic 64-bin log-mel filterbank at 50 feature frames per second.
// No trainable state; silence maps every frame to the log floor vector.
std::unique_ptr<SpeechEncoder> make_logmel_encoder(int64_t dim = 64, double rate = 50.0);

// Small trainable front-end: windowed frames -> linear -> tanh -> temporal
// conv -> tanh, at the same frame rate contract as the filterbank.
std::unique_ptr<SpeechEncoder> make_conv_encoder(int64_t dim, double rate, uint64_t seed);

// Factory over the config value `speech_encoder = logmel | conv`.
std::unique_ptr<SpeechEncoder> make_encoder(const std::string& kind_name, int64_t dim,
                                            double rate, uint64_t seed);

AudioFeatures extract_features(const Waveform& w, SpeechEncoder& encoder);

// Rate alignment T' -> T = round(T' * target_fps / rate), minimum 1, by
// linear interpolation at output-frame timestamps (clamped at the tail).
ag::Var resample_features(const ag::Var& features, double rate, double target_fps);
AudioFeatures resample_features(const AudioFeatures& f, double target_fps);

}  // namespace avg::audio
