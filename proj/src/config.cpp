#include "avg/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "avg/rng.hpp"

namespace avg::cfg {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void Config::declare(const std::string& key, const std::string& default_value,
                     const std::string& doc) {
  AVG_CHECK(!schema_.count(key), ContractError, "config key declared twice: " + key);
  schema_[key] = Entry{default_value, doc};
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = schema_.find(key);
  AVG_CHECK(it != schema_.end(), ConfigError, "unknown config key: " + key);
  it->second.value = value;
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  AVG_CHECK(in.good(), IoError, "cannot open config file: " + path);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError(path + ":" + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::apply_override(const std::string& spec) {
  auto eq = spec.find('=');
  AVG_CHECK(eq != std::string::npos && eq > 0, ConfigError,
            "override must look like key=value, got: " + spec);
  set(trim(spec.substr(0, eq)), trim(spec.substr(eq + 1)));
}

const std::string& Config::get_str(const std::string& key) const {
  auto it = schema_.find(key);
  AVG_CHECK(it != schema_.end(), ContractError, "config key not declared: " + key);
  return it->second.value;
}

double Config::get_num(const std::string& key) const {
  const std::string& v = get_str(key);
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  AVG_CHECK(end && *end == '\0' && !v.empty(), ConfigError,
            "config key " + key + " is not a number: '" + v + "'");
  return x;
}

int64_t Config::get_int(const std::string& key) const {
  const std::string& v = get_str(key);
  char* end = nullptr;
  long long x = std::strtoll(v.c_str(), &end, 10);
  AVG_CHECK(end && *end == '\0' && !v.empty(), ConfigError,
            "config key " + key + " is not an integer: '" + v + "'");
  return static_cast<int64_t>(x);
}

bool Config::get_bool(const std::string& key) const {
  std::string v = get_str(key);
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + " is not a boolean: '" + v + "'");
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, entry] : schema_) {
    out += key;
    out += " = ";
    out += entry.value;
    out += "\n";
  }
  return out;
}

uint64_t Config::hash() const { return fnv1a(canonical()); }

void Config::echo_to(const std::string& path) const {
  std::ofstream out(path);
  AVG_CHECK(out.good(), IoError, "cannot write config echo: " + path);
  out << canonical();
  AVG_CHECK(out.good(), IoError, "failed writing config echo: " + path);
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  out.reserve(schema_.size());
  for (const auto& [key, entry] : schema_) out.push_back(key);
  return out;
}

const std::string& Config::doc(const std::string& key) const {
  auto it = schema_.find(key);
  AVG_CHECK(it != schema_.end(), ContractError, "config key not declared: " + key);
  return it->second.doc;
}

Config default_config() {
  Config c;
  // corpus
  c.declare("corpus.dir", "data/corpus", "directory the synthetic corpus is written to / read from");
  c.declare("corpus.num_subjects", "3", "speakers; the last one is held out as test-unseen");
  c.declare("corpus.sentences", "30", "sentences per subject");
  c.declare("corpus.words_min", "2", "minimum words per sentence");
  c.declare("corpus.words_max", "4", "maximum words per sentence");
  c.declare("corpus.fps", "25", "mesh frame rate");
  c.declare("corpus.sample_rate", "16000", "audio sample rate (Hz)");
  c.declare("corpus.val_fraction", "0.15", "fraction of seen-subject sentences for validation");
  c.declare("corpus.test_fraction", "0.15", "fraction of seen-subject sentences for test-seen");
  // audio front-end
  c.declare("audio.speech_encoder", "logmel", "logmel | conv");
  c.declare("audio.feature_dim", "64", "speech feature dimension D");
  c.declare("audio.feature_rate", "50", "speech feature frames per second");
  c.declare("audio.freeze_encoder", "true", "keep encoder parameters fixed during training");
  // animator
  c.declare("animator.model_dim", "128", "transformer width");
  c.declare("animator.layers", "4", "decoder layers");
  c.declare("animator.heads", "4", "attention heads");
  c.declare("animator.dropout", "0.1", "dropout rate during training");
  c.declare("animator.max_seq", "512", "maximum supported frame count");
  // lip expert
  c.declare("expert.width", "192", "fused model width");
  c.declare("expert.visual_channels", "8", "3-D conv front-end channels");
  c.declare("expert.decoder_layers", "3", "transformer decoder layers");
  c.declare("expert.heads", "4", "attention heads");
  c.declare("expert.dropout", "0.1", "dropout rate during training");
  c.declare("expert.label_smoothing", "0.1", "cross-entropy label smoothing");
  // renderer
  c.declare("render.image_size", "128", "square render resolution (pixels)");
  c.declare("render.crop_size", "88", "square lip-crop resolution (pixels)");
  c.declare("render.sigma", "1e-4", "soft rasterizer edge softness (normalized device units)");
  c.declare("render.margin", "0.3", "lip crop inflation fraction");
  c.declare("render.pixels_per_mm", "0.72", "orthographic camera scale");
  // trainer
  c.declare("trainer.lambda_mse", "1.0", "weight of the vertex regression loss");
  c.declare("trainer.lambda_av", "0.01", "weight of the audio-visual perceptual loss");
  c.declare("trainer.lambda_rlv", "1.0", "weight of the lip-region regression loss");
  c.declare("trainer.lambda_ctc", "0.1", "CTC share inside the perceptual loss");
  c.declare("trainer.lambda_ce", "0.9", "attention share inside the perceptual loss");
  c.declare("trainer.lr", "1e-4", "animator Adam learning rate");
  c.declare("trainer.expert_lr", "1e-5", "expert Adam learning rate during joint training");
  c.declare("trainer.pretrain_lr", "1e-3", "expert Adam learning rate during pretraining");
  c.declare("trainer.epochs", "100", "joint training epochs");
  c.declare("trainer.pretrain_epochs", "60", "expert pretraining epochs");
  c.declare("trainer.batch_size", "4", "samples per optimizer step");
  c.declare("trainer.clip_norm", "1.0", "global gradient-norm clip (0 disables)");
  c.declare("trainer.no_prior", "false", "ablation: skip stage-1 expert pretraining");
  c.declare("trainer.no_rlv", "false", "ablation: drop the lip-region regression term");
  c.declare("trainer.visual_only", "false", "ablation: expert ignores the audio branch");
  c.declare("trainer.log_every", "1", "epochs between RunRecord rows");
  // evaluation
  c.declare("eval.decode", "attention", "transcript scoring head: attention | ctc");
  c.declare("eval.judge", "stage1", "CER/VER judge checkpoint: stage1 | finetuned");
  c.declare("eval.split", "test-seen", "default evaluation split");
  return c;
}

void apply_profile(Config& c, const std::string& profile) {
  if (profile.empty() || profile == "desk") return;  // desk is the default scale
  if (profile == "smoke") {
    c.set("corpus.num_subjects", "2");
    c.set("corpus.sentences", "10");  // generator floor: 20 sentences in total
    c.set("corpus.words_max", "3");
    c.set("audio.feature_dim", "16");
    c.set("animator.model_dim", "32");
    c.set("animator.layers", "1");
    c.set("animator.heads", "2");
    c.set("expert.width", "32");
    c.set("expert.visual_channels", "2");
    c.set("expert.decoder_layers", "1");
    c.set("expert.heads", "2");
    c.set("trainer.epochs", "4");
    c.set("trainer.pretrain_epochs", "6");
    c.set("trainer.batch_size", "2");
    c.set("render.image_size", "48");
    c.set("render.crop_size", "24");
    c.set("render.pixels_per_mm", "0.27");
    return;
  }
  throw ConfigError("unknown profile '" + profile + "' (expected smoke | desk)");
}

}  // namespace avg::cfg
