#include "avg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "avg/error.hpp"
#include "avg/lang.hpp"
#include "avg/rng.hpp"

namespace avg::data {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;
constexpr double kBlendHalfWindow = 0.05;  // seconds, capped by half segment

// Steady-state articulation targets and tone recipe per phoneme, in
// phoneme_inventory() order. Bilabials pin aperture to exactly 0 so closure
// frames reach full lip contact; round phonemes pin width near 0. Tone
// frequencies are distinct per phoneme so classes stay separable in
// filterbank space.
struct Synth {
  double aperture, width, protrusion;
  double f1, f2;
  double amp, noise;
};

const Synth kSilenceSynth{0.25, 0.5, 0.15, 180.0, 850.0, 0.0, 0.004};

const std::vector<Synth>& synth_table() {
  // Tone class ladder: f1 = 230 + 55k, f2 = 1400 + 80k. Spacing comfortably
  // exceeds the +-25 Hz per-subject shift so classes never collide.
  static const std::vector<Synth> table = {
      // p b m
      {0.00, 0.50, 0.30, 230, 1400, 0.22, 0.030},
      {0.00, 0.48, 0.32, 285, 1480, 0.30, 0.030},
      {0.00, 0.52, 0.28, 340, 1560, 0.30, 0.012},
      // f v
      {0.08, 0.58, 0.18, 395, 1640, 0.22, 0.060},
      {0.10, 0.55, 0.22, 450, 1720, 0.30, 0.060},
      // t d s n
      {0.30, 0.62, 0.10, 505, 1800, 0.22, 0.030},
      {0.32, 0.58, 0.12, 560, 1880, 0.30, 0.030},
      {0.26, 0.66, 0.08, 615, 1960, 0.22, 0.060},
      {0.30, 0.55, 0.10, 670, 2040, 0.30, 0.012},
      // k g
      {0.42, 0.52, 0.10, 725, 2120, 0.22, 0.030},
      {0.44, 0.50, 0.12, 780, 2200, 0.30, 0.030},
      // aa ae
      {1.00, 0.58, 0.10, 835, 2280, 0.42, 0.012},
      {0.88, 0.72, 0.08, 890, 2360, 0.42, 0.012},
      // eh er
      {0.56, 0.55, 0.15, 945, 2440, 0.42, 0.012},
      {0.48, 0.42, 0.38, 1000, 2520, 0.42, 0.012},
      // ih iy
      {0.30, 0.92, 0.02, 1055, 2600, 0.42, 0.012},
      {0.22, 1.00, 0.00, 1110, 2680, 0.42, 0.012},
      // uw ow w
      {0.26, 0.00, 1.00, 1165, 2760, 0.42, 0.012},
      {0.55, 0.12, 0.80, 1220, 2840, 0.42, 0.012},
      {0.18, 0.05, 0.90, 1275, 2920, 0.38, 0.012},
  };
  return table;
}

struct Seg {
  int ph = -1;  // -1 = silence padding
  double start = 0.0, dur = 0.0;
  Synth s = kSilenceSynth;
};

Synth apply_traits(Synth s, const SubjectTraits& tr) {
  s.width = std::clamp(0.5 + (s.width - 0.5) * tr.width_scale, 0.0, 1.0);
  s.protrusion = std::clamp(s.protrusion * tr.protrusion_scale, 0.0, 1.0);
  s.f1 = std::max(40.0, s.f1 + tr.pitch_shift_hz);
  s.f2 = std::max(200.0, s.f2 + tr.pitch_shift_hz);
  return s;
}

std::vector<Seg> build_segments(const PhonemeScript& script, const SubjectTraits& traits) {
  script.validate();
  std::vector<Seg> segs;
  double t = 0.0;
  auto push = [&](int ph, double dur, const Synth& s) {
    if (dur <= 0.0) return;
    segs.push_back({ph, t, dur, s});
    t += dur;
  };
  push(-1, script.lead_pad, kSilenceSynth);
  for (const auto& [label, dur] : script.entries) {
    int idx = lang::phoneme_index(label);
    push(idx, dur, apply_traits(synth_table()[static_cast<size_t>(idx)], traits));
  }
  push(-1, script.tail_pad, kSilenceSynth);
  AVG_CHECK(!segs.empty(), ContractError, "phoneme script has zero duration");
  return segs;
}

double boundary_window(const std::vector<Seg>& segs, size_t k) {
  // Half-width of the cross-fade around the boundary entering segs[k].
  return std::min({kBlendHalfWindow, segs[k - 1].dur * 0.5, segs[k].dur * 0.5});
}

Synth mix(const Synth& a, const Synth& b, double c) {
  auto m = [c](double x, double y) { return x + (y - x) * c; };
  return {m(a.aperture, b.aperture), m(a.width, b.width), m(a.protrusion, b.protrusion),
          m(a.f1, b.f1), m(a.f2, b.f2), m(a.amp, b.amp), m(a.noise, b.noise)};
}

Synth params_at(const std::vector<Seg>& segs, double t) {
  const Seg& last = segs.back();
  double total = last.start + last.dur;
  t = std::clamp(t, 0.0, std::nexttoward(total, 0.0));
  size_t k = segs.size() - 1;
  for (size_t i = 0; i < segs.size(); ++i) {
    if (t < segs[i].start + segs[i].dur) {
      k = i;
      break;
    }
  }
  if (k > 0) {
    double b = segs[k].start, w = boundary_window(segs, k);
    if (w > 0.0 && t < b + w) {
      double u = (t - (b - w)) / (2.0 * w);
      return mix(segs[k - 1].s, segs[k].s, 0.5 - 0.5 * std::cos(kPi * u));
    }
  }
  if (k + 1 < segs.size()) {
    double b = segs[k + 1].start, w = boundary_window(segs, k + 1);
    if (w > 0.0 && t >= b - w) {
      double u = (t - (b - w)) / (2.0 * w);
      return mix(segs[k].s, segs[k + 1].s, 0.5 - 0.5 * std::cos(kPi * u));
    }
  }
  return segs[k].s;
}

std::string sample_id(int64_t subject, int64_t sentence) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "s%02lld_%04lld", static_cast<long long>(subject),
                static_cast<long long>(sentence));
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  AVG_CHECK(in.good(), IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

double PhonemeScript::total_duration() const {
  double t = lead_pad + tail_pad;
  for (const auto& [_, d] : entries) t += d;
  return t;
}

void PhonemeScript::validate() const {
  AVG_CHECK(lead_pad >= 0.0 && tail_pad >= 0.0, ValidationError, "negative script padding");
  AVG_CHECK(!entries.empty(), ValidationError, "phoneme script is empty");
  for (const auto& [label, dur] : entries) {
    AVG_CHECK(lang::phoneme_index(label) >= 0, ValidationError,
              "script uses unknown phoneme '" + label + "'");
    AVG_CHECK(dur > 0.0 && std::isfinite(dur), ValidationError,
              "non-positive duration for phoneme '" + label + "'");
  }
}

void write_script(const PhonemeScript& s, const std::string& path) {
  s.validate();
  std::ofstream out(path, std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write " + path);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "pad %.9g %.9g\n", s.lead_pad, s.tail_pad);
  out << buf;
  for (const auto& [label, dur] : s.entries) {
    std::snprintf(buf, sizeof(buf), "%s %.9g\n", label.c_str(), dur);
    out << buf;
  }
  AVG_CHECK(out.good(), IoError, "write failed for " + path);
}

PhonemeScript read_script(const std::string& path) {
  std::ifstream in(path);
  AVG_CHECK(in.good(), IoError, "cannot open " + path);
  PhonemeScript s;
  std::string line;
  int lineno = 0;
  bool saw_pad = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string head;
    ss >> head;
    if (head == "pad") {
      AVG_CHECK(!saw_pad, ParseError, path + ":" + std::to_string(lineno) + ": duplicate pad");
      AVG_CHECK(static_cast<bool>(ss >> s.lead_pad >> s.tail_pad), ParseError,
                path + ":" + std::to_string(lineno) + ": malformed pad line");
      saw_pad = true;
      continue;
    }
    double dur = 0.0;
    AVG_CHECK(static_cast<bool>(ss >> dur), ParseError,
              path + ":" + std::to_string(lineno) + ": expected 'phoneme duration'");
    s.entries.emplace_back(head, dur);
  }
  s.validate();
  return s;
}

SubjectTraits subject_traits(uint64_t seed, int64_t subject) {
  Rng rng(derive_seed(seed, "subject-traits", static_cast<uint64_t>(subject)));
  SubjectTraits tr;
  tr.width_scale = 0.92 + 0.16 * rng.uniform();
  tr.protrusion_scale = 0.85 + 0.30 * rng.uniform();
  tr.pitch_shift_hz = rng.uniform(-25.0, 25.0);
  return tr;
}

mesh::ToyfacePose articulation_at(const PhonemeScript& s, double t, const SubjectTraits& traits) {
  Synth p = params_at(build_segments(s, traits), t);
  return {p.aperture, p.width, p.protrusion};
}

mesh::VertexSequence synthesize_vertices(const PhonemeScript& s, const SubjectTraits& traits,
                                         double fps) {
  AVG_CHECK(fps > 0.0, ContractError, "fps must be positive");
  auto segs = build_segments(s, traits);
  int64_t frames = std::max<int64_t>(1, static_cast<int64_t>(s.total_duration() * fps));
  mesh::VertexSequence seq;
  seq.fps = fps;
  seq.frames = Tensor({frames, mesh::kToyfaceVertices, 3});
  for (int64_t i = 0; i < frames; ++i) {
    Synth p = params_at(segs, (i + 0.5) / fps);
    Tensor verts = mesh::toyface_pose({p.aperture, p.width, p.protrusion});
    std::copy(verts.data(), verts.data() + verts.numel(),
              seq.frames.data() + i * verts.numel());
  }
  seq.validate();
  return seq;
}

audio::Waveform synthesize_audio(const PhonemeScript& s, const SubjectTraits& traits,
                                 double sample_rate, Rng& noise_rng) {
  AVG_CHECK(sample_rate > 0.0, ContractError, "sample_rate must be positive");
  auto segs = build_segments(s, traits);
  int64_t n = std::max<int64_t>(1, std::llround(s.total_duration() * sample_rate));
  audio::Waveform w;
  w.sample_rate = sample_rate;
  w.samples = Tensor({n});
  double ph1 = 0.0, ph2 = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    Synth p = params_at(segs, i / sample_rate);
    ph1 += 2.0 * kPi * p.f1 / sample_rate;
    ph2 += 2.0 * kPi * p.f2 / sample_rate;
    double x = p.amp * (0.6 * std::sin(ph1) + 0.4 * std::sin(ph2)) + p.noise * noise_rng.normal();
    w.samples[i] = std::clamp(x, -0.98, 0.98);
  }
  w.validate();
  return w;
}

std::vector<int> phoneme_frame_labels(const PhonemeScript& s, double rate, int64_t T) {
  AVG_CHECK(rate > 0.0 && T >= 0, ContractError, "bad frame grid");
  auto segs = build_segments(s, {});
  std::vector<int> labels(static_cast<size_t>(T), -1);
  for (size_t k = 0; k < segs.size(); ++k) {
    if (segs[k].ph < 0) continue;
    double lo = segs[k].start + (k > 0 ? boundary_window(segs, k) : 0.0);
    double hi = segs[k].start + segs[k].dur -
                (k + 1 < segs.size() ? boundary_window(segs, k + 1) : 0.0);
    for (int64_t i = 0; i < T; ++i) {
      double t = (i + 0.5) / rate;
      if (t >= lo && t <= hi) labels[static_cast<size_t>(i)] = segs[k].ph;
    }
  }
  return labels;
}

std::vector<uint8_t> bilabial_frame_mask(const PhonemeScript& s, double fps, int64_t T) {
  std::vector<int> labels = phoneme_frame_labels(s, fps, T);
  std::vector<uint8_t> mask(labels.size(), 0);
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0 &&
        lang::phoneme_inventory()[static_cast<size_t>(labels[i])].group == "bilabial")
      mask[i] = 1;
  return mask;
}

// ---------------------------------------------------------------------------
// manifests

void Manifest::validate() const {
  AVG_CHECK(fps > 0.0, ValidationError, "manifest fps must be positive");
  AVG_CHECK(sample_rate > 0.0, ValidationError, "manifest sample_rate must be positive");
  AVG_CHECK(num_subjects >= 1, ValidationError, "manifest needs at least one subject");
  AVG_CHECK(!samples.empty(), ValidationError, "manifest has no samples");
  static const std::vector<std::string> kSplits = {"train", "val", "test-seen", "test-unseen"};
  std::vector<std::string> ids;
  std::vector<bool> seen_subject(static_cast<size_t>(num_subjects), false);
  std::vector<bool> in_train(static_cast<size_t>(num_subjects), false);
  std::vector<bool> in_unseen(static_cast<size_t>(num_subjects), false);
  for (const auto& r : samples) {
    AVG_CHECK(!r.id.empty(), ValidationError, "manifest sample with empty id");
    ids.push_back(r.id);
    AVG_CHECK(std::find(kSplits.begin(), kSplits.end(), r.split) != kSplits.end(),
              ValidationError, "unknown split '" + r.split + "' for sample " + r.id);
    AVG_CHECK(r.subject_id >= 0 && r.subject_id < num_subjects, ValidationError,
              "subject id out of range for sample " + r.id);
    seen_subject[static_cast<size_t>(r.subject_id)] = true;
    if (r.split == "train") in_train[static_cast<size_t>(r.subject_id)] = true;
    if (r.split == "test-unseen") in_unseen[static_cast<size_t>(r.subject_id)] = true;
  }
  std::sort(ids.begin(), ids.end());
  AVG_CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ValidationError,
            "duplicate sample ids in manifest");
  for (int64_t s = 0; s < num_subjects; ++s)
    AVG_CHECK(seen_subject[static_cast<size_t>(s)], ValidationError,
              "subject ids not dense: missing subject " + std::to_string(s));
  for (int64_t s = 0; s < num_subjects; ++s)
    AVG_CHECK(!(in_train[static_cast<size_t>(s)] && in_unseen[static_cast<size_t>(s)]),
              ValidationError,
              "subject " + std::to_string(s) + " appears in both train and test-unseen");
}

std::vector<SampleRef> Manifest::split(const std::string& name) const {
  std::vector<SampleRef> out;
  for (const auto& r : samples)
    if (r.split == name) out.push_back(r);
  return out;
}

CorpusParams corpus_params(const cfg::Config& c) {
  CorpusParams p;
  p.dir = c.get_str("corpus.dir");
  p.num_subjects = c.get_int("corpus.num_subjects");
  p.sentences_per_subject = c.get_int("corpus.sentences");
  p.words_min = c.get_int("corpus.words_min");
  p.words_max = c.get_int("corpus.words_max");
  p.fps = c.get_num("corpus.fps");
  p.sample_rate = c.get_num("corpus.sample_rate");
  p.val_fraction = c.get_num("corpus.val_fraction");
  p.test_fraction = c.get_num("corpus.test_fraction");
  return p;
}

Manifest generate_synthetic_corpus(const CorpusParams& p, uint64_t seed) {
  AVG_CHECK(p.num_subjects >= 2, ConfigError,
            "corpus needs num_subjects >= 2 (one subject is held out entirely)");
  AVG_CHECK(p.sentences_per_subject >= 1, ConfigError, "corpus.sentences must be >= 1");
  AVG_CHECK(p.num_subjects * p.sentences_per_subject >= 20, ConfigError,
            "corpus too small: need at least 20 sentences in total");
  AVG_CHECK(p.words_min >= 1 && p.words_max >= p.words_min, ConfigError,
            "bad words_min/words_max range");
  AVG_CHECK(p.fps > 0.0 && p.sample_rate > 0.0, ConfigError, "fps and sample_rate must be > 0");
  AVG_CHECK(p.val_fraction >= 0.0 && p.test_fraction >= 0.0 &&
                p.val_fraction + p.test_fraction < 1.0,
            ConfigError, "val/test fractions must be nonnegative and sum below 1");

  // Vocabulary = built-in lexicon; every pronunciation must stay inside the
  // bundled phoneme inventory.
  const auto& lex = lang::builtin_lexicon();
  std::vector<std::string> vocab;
  for (const auto& [word, phones] : lex) {
    for (const auto& ph : phones)
      AVG_CHECK(lang::phoneme_index(ph) >= 0, ConfigError,
                "vocabulary word '" + word + "' uses unknown phoneme '" + ph + "'");
    vocab.push_back(word);
  }
  AVG_CHECK(!vocab.empty(), ConfigError, "empty vocabulary");

  fs::create_directories(fs::path(p.dir) / "wav");
  fs::create_directories(fs::path(p.dir) / "vseq");
  fs::create_directories(fs::path(p.dir) / "txt");
  fs::create_directories(fs::path(p.dir) / "script");

  Manifest m;
  m.fps = p.fps;
  m.sample_rate = p.sample_rate;
  m.num_subjects = p.num_subjects;
  m.root = p.dir;

  int64_t n_sent = p.sentences_per_subject;
  for (int64_t subj = 0; subj < p.num_subjects; ++subj) {
    SubjectTraits traits = subject_traits(seed, subj);
    bool unseen = subj == p.num_subjects - 1;

    // Per-subject split assignment over a seeded sentence permutation.
    std::vector<std::string> split_of(static_cast<size_t>(n_sent), "train");
    if (unseen) {
      std::fill(split_of.begin(), split_of.end(), "test-unseen");
    } else {
      std::vector<int64_t> order(static_cast<size_t>(n_sent));
      for (int64_t i = 0; i < n_sent; ++i) order[static_cast<size_t>(i)] = i;
      Rng rng(derive_seed(seed, "split", static_cast<uint64_t>(subj)));
      for (int64_t i = n_sent - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[rng.below(static_cast<uint64_t>(i + 1))]);
      int64_t n_val = std::max<int64_t>(1, std::llround(p.val_fraction * n_sent));
      int64_t n_test = std::max<int64_t>(1, std::llround(p.test_fraction * n_sent));
      AVG_CHECK(n_sent - n_val - n_test >= 1, ConfigError,
                "val/test fractions leave no training sentences");
      for (int64_t i = 0; i < n_val; ++i) split_of[static_cast<size_t>(order[i])] = "val";
      for (int64_t i = n_val; i < n_val + n_test; ++i)
        split_of[static_cast<size_t>(order[i])] = "test-seen";
    }

    for (int64_t sent = 0; sent < n_sent; ++sent) {
      uint64_t tag = static_cast<uint64_t>(subj) * 1000000 + static_cast<uint64_t>(sent);
      Rng rng(derive_seed(seed, "sentence", tag));

      int64_t n_words =
          p.words_min + static_cast<int64_t>(rng.below(static_cast<uint64_t>(
                            p.words_max - p.words_min + 1)));
      std::string transcript;
      PhonemeScript script;
      for (int64_t wi = 0; wi < n_words; ++wi) {
        const std::string& word = vocab[rng.below(vocab.size())];
        if (wi) transcript += ' ';
        transcript += word;
        for (const auto& ph : lang::g2p(word, lex))
          script.entries.emplace_back(ph, rng.uniform(0.12, 0.20));
      }

      std::string id = sample_id(subj, sent);
      SampleRef ref;
      ref.id = id;
      ref.wav_path = "wav/" + id + ".wav";
      ref.vseq_path = "vseq/" + id + ".vseq";
      ref.transcript_path = "txt/" + id + ".txt";
      ref.script_path = "script/" + id + ".script";
      ref.subject_id = subj;
      ref.split = split_of[static_cast<size_t>(sent)];

      Rng noise_rng(derive_seed(seed, "audio-noise", tag));
      audio::Waveform wav = synthesize_audio(script, traits, p.sample_rate, noise_rng);
      mesh::VertexSequence vseq = synthesize_vertices(script, traits, p.fps);

      fs::path root(p.dir);
      audio::write_wav(wav, (root / ref.wav_path).string());
      mesh::write_vseq(vseq, (root / ref.vseq_path).string());
      write_script(script, (root / ref.script_path).string());
      {
        std::ofstream out(root / ref.transcript_path, std::ios::binary);
        AVG_CHECK(out.good(), IoError, "cannot write transcript for " + id);
        out << transcript << "\n";
      }
      m.samples.push_back(std::move(ref));
    }
  }

  m.validate();
  write_manifest(m, (fs::path(p.dir) / "manifest.jsonl").string());
  return m;
}

void write_manifest(const Manifest& m, const std::string& path) {
  m.validate();
  std::ofstream out(path, std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write " + path);
  json meta = {{"type", "meta"},
               {"version", 1},
               {"fps", m.fps},
               {"sample_rate", m.sample_rate},
               {"num_subjects", m.num_subjects}};
  out << meta.dump() << "\n";
  for (const auto& r : m.samples) {
    json row = {{"id", r.id},          {"wav", r.wav_path},      {"vseq", r.vseq_path},
                {"text", r.transcript_path}, {"script", r.script_path},
                {"subject", r.subject_id},   {"split", r.split}};
    out << row.dump() << "\n";
  }
  AVG_CHECK(out.good(), IoError, "write failed for " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  AVG_CHECK(in.good(), IoError, "cannot open " + path);
  Manifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  std::string line;
  int lineno = 0;
  bool saw_meta = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!saw_meta) {
        AVG_CHECK(j.value("type", "") == "meta", ParseError,
                  path + ":1: first line must be the meta record");
        AVG_CHECK(j.value("version", 0) == 1, ParseError,
                  path + ": unsupported manifest version");
        m.fps = j.at("fps").get<double>();
        m.sample_rate = j.at("sample_rate").get<double>();
        m.num_subjects = j.at("num_subjects").get<int64_t>();
        saw_meta = true;
        continue;
      }
      SampleRef r;
      r.id = j.at("id").get<std::string>();
      r.wav_path = j.at("wav").get<std::string>();
      r.vseq_path = j.at("vseq").get<std::string>();
      r.transcript_path = j.at("text").get<std::string>();
      r.script_path = j.value("script", "");
      r.subject_id = j.at("subject").get<int64_t>();
      r.split = j.at("split").get<std::string>();
      m.samples.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  AVG_CHECK(saw_meta, ParseError, path + ": missing meta record");
  m.validate();
  return m;
}

LoadedSample load_sample(const Manifest& m, const SampleRef& ref) {
  fs::path root(m.root);
  LoadedSample s;
  s.wav = audio::read_wav((root / ref.wav_path).string());
  if (std::abs(s.wav.sample_rate - m.sample_rate) > 1e-9)
    s.wav = audio::resample_waveform(s.wav, m.sample_rate);
  s.vertices = mesh::read_vseq((root / ref.vseq_path).string());
  AVG_CHECK(std::abs(s.vertices.fps - m.fps) < 1e-6, ValidationError,
            "sample " + ref.id + " fps disagrees with manifest");
  double dur_gap = std::abs(s.wav.duration() -
                            static_cast<double>(s.vertices.num_frames()) / m.fps);
  AVG_CHECK(dur_gap <= 1.0 / m.fps + 1e-9, ValidationError,
            "sample " + ref.id + " audio and vertex durations disagree");
  s.transcript = trim(read_text_file((root / ref.transcript_path).string()));
  AVG_CHECK(!s.transcript.empty(), ValidationError, "sample " + ref.id + " has empty transcript");
  if (!ref.script_path.empty()) s.script = read_script((root / ref.script_path).string());
  s.style = {ref.subject_id, m.num_subjects};
  return s;
}

// ---------------------------------------------------------------------------
// batching

std::vector<std::vector<SampleRef>> make_batches(const Manifest& m, const std::string& split,
                                                 int64_t batch_size, uint64_t seed) {
  AVG_CHECK(batch_size >= 1, ConfigError, "batch_size must be >= 1");
  std::vector<SampleRef> refs = m.split(split);
  AVG_CHECK(!refs.empty(), ContractError, "split '" + split + "' is empty");
  Rng rng(derive_seed(seed, "batch-order", 0));
  for (size_t i = refs.size() - 1; i > 0; --i) std::swap(refs[i], refs[rng.below(i + 1)]);
  std::vector<std::vector<SampleRef>> batches;
  for (size_t i = 0; i < refs.size(); i += static_cast<size_t>(batch_size)) {
    size_t j = std::min(refs.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(refs.begin() + static_cast<int64_t>(i),
                         refs.begin() + static_cast<int64_t>(j));
  }
  return batches;
}

PaddedBatch pad_batch(const std::vector<LoadedSample>& items) {
  AVG_CHECK(!items.empty(), ContractError, "cannot pad an empty batch");
  int64_t B = static_cast<int64_t>(items.size());
  int64_t V = items[0].vertices.num_vertices();
  int64_t Tmax = 0, Nmax = 0, Umax = 1;
  std::vector<std::vector<int>> tokens;
  for (const auto& it : items) {
    AVG_CHECK(it.vertices.num_vertices() == V, ContractError,
              "mixed vertex counts in one batch");
    Tmax = std::max(Tmax, it.vertices.num_frames());
    Nmax = std::max(Nmax, it.wav.num_samples());
    tokens.push_back(lang::encode_text(it.transcript));
    Umax = std::max(Umax, static_cast<int64_t>(tokens.back().size()));
  }
  PaddedBatch b;
  b.vertices = Tensor({B, Tmax, V, 3});
  b.frame_mask = Tensor({B, Tmax});
  b.audio = Tensor({B, Nmax});
  b.tokens = Tensor::full({B, Umax}, static_cast<double>(lang::kPad));
  for (int64_t i = 0; i < B; ++i) {
    const auto& it = items[static_cast<size_t>(i)];
    int64_t T = it.vertices.num_frames(), N = it.wav.num_samples();
    int64_t U = static_cast<int64_t>(tokens[static_cast<size_t>(i)].size());
    b.frame_len.push_back(T);
    b.audio_len.push_back(N);
    b.token_len.push_back(U);
    std::copy(it.vertices.frames.data(), it.vertices.frames.data() + T * V * 3,
              b.vertices.data() + i * Tmax * V * 3);
    for (int64_t t = 0; t < T; ++t) b.frame_mask.at(i, t) = 1.0;
    std::copy(it.wav.samples.data(), it.wav.samples.data() + N, b.audio.data() + i * Nmax);
    for (int64_t u = 0; u < U; ++u)
      b.tokens.at(i, u) = static_cast<double>(tokens[static_cast<size_t>(i)][static_cast<size_t>(u)]);
  }
  return b;
}

DatasetDescriptor load_dataset_descriptor(const std::string& path) {
  std::ifstream in(path);
  AVG_CHECK(in.good(), IoError, "cannot open " + path);
  DatasetDescriptor d;
  std::string line;
  int lineno = 0;
  bool saw_name = false, saw_fps = false, saw_verts = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    AVG_CHECK(eq != std::string::npos, ParseError,
              path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "name") {
      d.name = val;
      saw_name = true;
    } else if (key == "fps") {
      try {
        d.fps = std::stod(val);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad fps value");
      }
      saw_fps = true;
    } else if (key == "vertices") {
      try {
        d.vertex_count = std::stoll(val);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad vertex count");
      }
      saw_verts = true;
    } else if (key == "topology") {
      d.topology_file = val;
    } else if (key == "lip_indices") {
      d.lip_indices_file = val;
    } else {
      throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  AVG_CHECK(saw_name && saw_fps && saw_verts, ValidationError,
            path + ": descriptor needs name, fps and vertices");
  AVG_CHECK(d.fps > 0.0 && d.vertex_count > 0, ValidationError,
            path + ": fps and vertices must be positive");
  return d;
}

}  // namespace avg::data
