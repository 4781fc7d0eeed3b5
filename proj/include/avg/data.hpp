#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "avg/audio.hpp"
#include "avg/config.hpp"
#include "avg/mesh.hpp"
#include "avg/tensor.hpp"
#include "avg/toyface.hpp"

namespace avg::data {

// Timed phoneme sequence driving both the articulator and the tone synth.
// Labels come from the bundled inventory; silence only exists as the fixed
// lead-in / tail padding around the scripted phonemes.
struct PhonemeScript {
  std::vector<std::pair<std::string, double>> entries;  // (label, seconds)
  double lead_pad = 0.08;
  double tail_pad = 0.08;

  double total_duration() const;
  void validate() const;
};

void write_script(const PhonemeScript& s, const std::string& path);
PhonemeScript read_script(const std::string& path);

// Per-subject articulation/voice personality, derived deterministically.
// The voice shift is additive in Hz so phoneme classes stay parallel across
// subjects (a multiplicative shift would swap neighboring classes at the top
// of the frequency ladder).
struct SubjectTraits {
  double width_scale = 1.0;
  double protrusion_scale = 1.0;
  double pitch_shift_hz = 0.0;
};
SubjectTraits subject_traits(uint64_t seed, int64_t subject);

// Mouth pose at utterance time t (pads included): steady per-phoneme targets
// with cosine cross-fades across segment boundaries.
mesh::ToyfacePose articulation_at(const PhonemeScript& s, double t,
                                  const SubjectTraits& traits = {});

mesh::VertexSequence synthesize_vertices(const PhonemeScript& s, const SubjectTraits& traits,
                                         double fps);
audio::Waveform synthesize_audio(const PhonemeScript& s, const SubjectTraits& traits,
                                 double sample_rate, Rng& noise_rng);

// Phoneme index under each frame center at the given frame rate, or -1 when
// the center falls in silence or inside a cross-fade window.
std::vector<int> phoneme_frame_labels(const PhonemeScript& s, double rate, int64_t T);

// Frames whose center time lies in a bilabial (/p/ /b/ /m/) steady state.
std::vector<uint8_t> bilabial_frame_mask(const PhonemeScript& s, double fps, int64_t T);

// ---------------------------------------------------------------------------
// manifests

struct SampleRef {
  std::string id;
  std::string wav_path, vseq_path, transcript_path, script_path;  // relative
  int64_t subject_id = 0;
  std::string split;  // train | val | test-seen | test-unseen
};

struct Manifest {
  double fps = 0.0;
  double sample_rate = 0.0;
  int64_t num_subjects = 0;
  std::string root;  // directory paths are resolved against
  std::vector<SampleRef> samples;

  void validate() const;
  std::vector<SampleRef> split(const std::string& name) const;
};

struct LoadedSample {
  audio::Waveform wav;
  mesh::VertexSequence vertices;
  std::string transcript;
  mesh::StyleLabel style;
  PhonemeScript script;
};

struct CorpusParams {
  std::string dir;
  int64_t num_subjects = 3;
  int64_t sentences_per_subject = 30;
  int64_t words_min = 2, words_max = 4;
  double fps = 25.0;
  double sample_rate = 16000.0;
  double val_fraction = 0.15, test_fraction = 0.15;
};
CorpusParams corpus_params(const cfg::Config& c);

Manifest generate_synthetic_corpus(const CorpusParams& p, uint64_t seed);
Manifest read_manifest(const std::string& path);
void write_manifest(const Manifest& m, const std::string& path);
LoadedSample load_sample(const Manifest& m, const SampleRef& ref);

// ---------------------------------------------------------------------------
// batching

// Seeded permutation of the split, chunked; covers every sample exactly once.
std::vector<std::vector<SampleRef>> make_batches(const Manifest& m, const std::string& split,
                                                 int64_t batch_size, uint64_t seed);

// Dense batch views with explicit padding masks.
struct PaddedBatch {
  Tensor vertices;    // [B, Tmax, V, 3]
  Tensor frame_mask;  // [B, Tmax], 1 = real frame
  Tensor audio;       // [B, Nmax]
  Tensor tokens;      // [B, Umax], pad-filled token ids
  std::vector<int64_t> frame_len, audio_len, token_len;
};
PaddedBatch pad_batch(const std::vector<LoadedSample>& items);

// Ingestion descriptor for real-dataset layouts (no bundled data).
struct DatasetDescriptor {
  std::string name;
  double fps = 0.0;
  int64_t vertex_count = 0;
  std::string topology_file;     // user supplied
  std::string lip_indices_file;  // user supplied
};
DatasetDescriptor load_dataset_descriptor(const std::string& path);

}  // namespace avg::data
