#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "avg/animator.hpp"
#include "avg/audio.hpp"
#include "avg/config.hpp"
#include "avg/data.hpp"
#include "avg/error.hpp"
#include "avg/expert.hpp"
#include "avg/lang.hpp"
#include "avg/mesh.hpp"
#include "avg/metrics.hpp"
#include "avg/render.hpp"
#include "avg/toyface.hpp"
#include "avg/train.hpp"

namespace fs = std::filesystem;
using namespace avg;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const char* kUsage = R"(usage: avguide <command> [options]

commands
  gen            generate the synthetic corpus and its manifest
  pretrain       stage 1: train the lip-reading expert on ground-truth renders
  train          stage 2: joint animator + expert training
  eval           score an animator checkpoint on a corpus split
  ablate         full objective plus three ablations, with a comparison table
  render         write ground-truth and predicted frames for one sample
  plot-features  2-D projection of expert features for chosen words (CSV)

options
  --config PATH        key=value file applied over the built-in defaults
  --override KEY=VAL   single config override, repeatable
  --run-dir DIR        output directory (default runs/<command>)
  --seed N             master seed (default 1)
  --profile NAME       budget preset: smoke | desk
  --force              redo a run directory that holds earlier results
  --expert-init PATH   stage-1 expert checkpoint consumed by `train`
  --checkpoint PATH    model checkpoint for eval / render / plot-features
  --judge-checkpoint PATH  stage-1 expert that judges transcripts in `eval`
  --split NAME         corpus split for eval / render / plot-features
  --sample ID          sample id for `render` (default: first of the split)
  --words a,b,c        words whose features `plot-features` projects
  --variants a,b,c     subset of ablate rows (default: full,no_prior,no_rlv,visual_only)

exit codes: 0 success, 2 usage, 3 run-directory or config-state conflict,
1 runtime failure
)";

struct Cli {
  std::string command;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir;
  uint64_t seed = 1;
  std::string profile;
  bool force = false;
  std::string expert_init;
  std::string checkpoint;
  std::string judge_checkpoint;
  std::string split;
  std::string sample;
  std::string words;
  std::string variants;
};

std::string fmt_num(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  AVG_CHECK(res.ec == std::errc(), NumericError, "number formatting failed");
  return std::string(buf, res.ptr);
}

std::string hash_hex(uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

uint64_t parse_seed(const std::string& s) {
  uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw UsageError("--seed expects an unsigned integer, got '" + s + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Cli parse_args(int argc, char** argv) {
  if (argc < 2) throw UsageError("missing command");
  Cli cli;
  cli.command = argv[1];
  if (cli.command == "help" || cli.command == "--help" || cli.command == "-h") {
    cli.command = "help";
    return cli;
  }
  const std::vector<std::string> known = {"gen",    "pretrain", "train",        "eval",
                                          "ablate", "render",   "plot-features"};
  if (std::find(known.begin(), known.end(), cli.command) == known.end())
    throw UsageError("unknown command '" + cli.command + "'");

  auto need_value = [&](int& i, const char* flag) -> std::string {
    if (i + 1 >= argc) throw UsageError(std::string(flag) + " expects a value");
    return argv[++i];
  };
  for (int i = 2; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--config") {
      cli.config_path = need_value(i, "--config");
    } else if (a == "--override") {
      cli.overrides.push_back(need_value(i, "--override"));
    } else if (a == "--run-dir") {
      cli.run_dir = need_value(i, "--run-dir");
    } else if (a == "--seed") {
      cli.seed = parse_seed(need_value(i, "--seed"));
    } else if (a == "--profile") {
      cli.profile = need_value(i, "--profile");
    } else if (a == "--force") {
      cli.force = true;
    } else if (a == "--expert-init") {
      cli.expert_init = need_value(i, "--expert-init");
    } else if (a == "--checkpoint") {
      cli.checkpoint = need_value(i, "--checkpoint");
    } else if (a == "--judge-checkpoint") {
      cli.judge_checkpoint = need_value(i, "--judge-checkpoint");
    } else if (a == "--split") {
      cli.split = need_value(i, "--split");
    } else if (a == "--sample") {
      cli.sample = need_value(i, "--sample");
    } else if (a == "--words") {
      cli.words = need_value(i, "--words");
    } else if (a == "--variants") {
      cli.variants = need_value(i, "--variants");
    } else {
      throw UsageError("unknown option '" + a + "'");
    }
  }
  return cli;
}

cfg::Config resolve_config(const Cli& cli) {
  cfg::Config c = cfg::default_config();
  if (!cli.profile.empty()) cfg::apply_profile(c, cli.profile);
  if (!cli.config_path.empty()) {
    if (!fs::exists(cli.config_path))
      throw UsageError("config file not found: " + cli.config_path);
    c.load_file(cli.config_path);
  }
  for (const auto& ov : cli.overrides) c.apply_override(ov);
  return c;
}

fs::path resolve_run_dir(const Cli& cli) {
  return cli.run_dir.empty() ? fs::path("runs") / cli.command : fs::path(cli.run_dir);
}

// ---------------------------------------------------------------------------
// run-directory protocol: a run is complete once index.json says so; redoing
// a completed run, or writing over a checkpoint whose config hash disagrees,
// needs --force

bool index_complete(const fs::path& rd) {
  std::ifstream in(rd / "index.json", std::ios::binary);
  if (!in.good()) return false;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str().find("\"status\": \"complete\"") != std::string::npos;
}

void guard_run_dir(const fs::path& rd, bool force, uint64_t config_hash,
                   const std::vector<std::string>& checkpoints) {
  if (!force) {
    if (index_complete(rd))
      throw StateError(rd.string() +
                       " already holds a completed run (rerun with --force or pick a fresh "
                       "--run-dir)");
    for (const auto& name : checkpoints) {
      fs::path p = rd / name;
      if (!fs::exists(p)) continue;
      train::CheckpointInfo info = train::peek_checkpoint(p.string());
      if (info.config_hash != config_hash)
        throw StateError(p.string() + " was written under config " +
                         hash_hex(info.config_hash) + " but this invocation hashes to " +
                         hash_hex(config_hash) + " (rerun with --force or pick a fresh --run-dir)");
    }
  }
  fs::create_directories(rd);
}

void write_index(const fs::path& rd, const std::string& command, uint64_t seed,
                 uint64_t config_hash, const std::vector<std::string>& artifacts) {
  std::ofstream out(rd / "index.json", std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write " + (rd / "index.json").string());
  out << "{\n  \"command\": \"" << command << "\",\n  \"status\": \"complete\",\n  \"seed\": "
      << seed << ",\n  \"config_hash\": \"" << hash_hex(config_hash) << "\",\n  \"artifacts\": [";
  for (size_t i = 0; i < artifacts.size(); ++i)
    out << (i ? ", " : "") << "\"" << artifacts[i] << "\"";
  out << "]\n}\n";
  AVG_CHECK(out.good(), IoError, "failed writing " + (rd / "index.json").string());
}

// ---------------------------------------------------------------------------
// shared assembly

data::Manifest load_manifest(const cfg::Config& c) {
  fs::path path = fs::path(c.get_str("corpus.dir")) / "manifest.jsonl";
  if (!fs::exists(path))
    throw StateError("no corpus manifest at " + path.string() + " (run `avguide gen` first)");
  return data::read_manifest(path.string());
}

struct Stack {
  mesh::MeshTopology topo = mesh::toyface_topology();
  Tensor tmpl = mesh::toyface_template();
  nn::ParamStore ps;
  std::unique_ptr<anim::Animator> model;
  std::unique_ptr<expert::Expert> xp;
  std::unique_ptr<audio::SpeechEncoder> enc;
};

Stack make_stack(const cfg::Config& c, int64_t num_subjects, uint64_t seed, bool with_animator) {
  Stack s;
  Rng init(derive_seed(seed, "init"));
  if (with_animator)
    s.model = std::make_unique<anim::Animator>(
        anim::animator_config(c, num_subjects, mesh::kToyfaceVertices), &s.ps, init);
  s.xp = std::make_unique<expert::Expert>(expert::expert_config(c), &s.ps, init);
  s.enc = audio::make_encoder(c.get_str("audio.speech_encoder"), c.get_int("audio.feature_dim"),
                              c.get_num("audio.feature_rate"), derive_seed(seed, "encoder"));
  return s;
}

Tensor aligned_features(const data::LoadedSample& s, double fps, audio::SpeechEncoder& enc) {
  ag::NoGradGuard guard;
  audio::AudioFeatures f = audio::extract_features(s.wav, enc);
  return expert::fit_rows(audio::resample_features(f, fps).features, s.vertices.num_frames());
}

// ---------------------------------------------------------------------------
// stage runners shared by the plain commands and the ablation harness

train::StageResult run_pretrain(const cfg::Config& c, const data::Manifest& m, uint64_t seed,
                                const fs::path& dir) {
  fs::create_directories(dir);
  Stack s = make_stack(c, m.num_subjects, seed, /*with_animator=*/false);
  train::TrainConfig tc = train::train_config(c, seed);
  train::RenderSetup rs = train::render_setup(c);
  train::StageResult r =
      train::pretrain_expert(*s.xp, s.ps, m, s.topo, rs, *s.enc, tc, 0, 0, "train",
                             (dir / "pretrain.jsonl").string());
  train::save_checkpoint((dir / "expert.ckpt").string(), s.ps, nullptr, tc.config_hash,
                         static_cast<uint64_t>(r.record.summary.count("steps")
                                                   ? r.record.summary.at("steps")
                                                   : 0.0));
  return r;
}

train::StageResult run_joint(const cfg::Config& c, const data::Manifest& m, uint64_t seed,
                             const fs::path& dir, const std::string& expert_init) {
  fs::create_directories(dir);
  Stack s = make_stack(c, m.num_subjects, seed, /*with_animator=*/true);
  train::TrainConfig tc = train::train_config(c, seed);
  train::RenderSetup rs = train::render_setup(c);
  if (!tc.no_prior) {
    AVG_CHECK(!expert_init.empty(), ConfigError,
              "stage 2 needs --expert-init with a stage-1 expert checkpoint "
              "(or trainer.no_prior=true)");
    train::load_params_into(expert_init, s.ps);
  }
  train::StageResult r =
      train::joint_train(*s.model, *s.xp, s.ps, m, s.topo, s.tmpl, rs, *s.enc, tc, 0, "train",
                         (dir / "train.jsonl").string());
  train::save_checkpoint((dir / "model.ckpt").string(), s.ps, nullptr, tc.config_hash,
                         static_cast<uint64_t>(r.record.summary.at("steps")));
  return r;
}

metrics::SplitReport run_eval(const cfg::Config& c, const data::Manifest& m, uint64_t seed,
                              const std::string& model_ckpt, const expert::Expert* judge,
                              const std::string& split, const metrics::EvalOptions& opt,
                              const fs::path& dir) {
  fs::create_directories(dir);
  Stack s = make_stack(c, m.num_subjects, seed, /*with_animator=*/true);
  train::load_params_into(model_ckpt, s.ps);
  const expert::Expert& j = judge ? *judge : *s.xp;
  metrics::SplitReport rep =
      metrics::evaluate_split(*s.model, j, *s.enc, s.topo, s.tmpl, m, split, opt);
  metrics::write_report(rep, (dir / "report.json").string(), (dir / "report.csv").string());
  return rep;
}

// ---------------------------------------------------------------------------
// commands

int cmd_gen(const Cli& cli) {
  cfg::Config c = resolve_config(cli);
  fs::path rd = resolve_run_dir(cli);
  guard_run_dir(rd, cli.force, c.hash(), {});
  c.echo_to((rd / "config.cfg").string());
  data::CorpusParams params = data::corpus_params(c);
  data::Manifest m = data::generate_synthetic_corpus(params, cli.seed);
  fs::path manifest = fs::path(params.dir) / "manifest.jsonl";
  write_index(rd, "gen", cli.seed, c.hash(), {"config.cfg"});
  std::cout << manifest.string() << "\n";
  return 0;
}

int cmd_pretrain(const Cli& cli) {
  cfg::Config c = resolve_config(cli);
  fs::path rd = resolve_run_dir(cli);
  guard_run_dir(rd, cli.force, c.hash(), {"expert.ckpt"});
  c.echo_to((rd / "config.cfg").string());
  data::Manifest m = load_manifest(c);
  train::StageResult r = run_pretrain(c, m, cli.seed, rd);
  write_index(rd, "pretrain", cli.seed, c.hash(),
              {"config.cfg", "pretrain.jsonl", "expert.ckpt"});
  if (r.record.summary.count("skipped"))
    std::cout << "pretrain skipped (trainer.no_prior); checkpoint keeps the random init\n";
  else
    std::cout << "pretrain: " << fmt_num(r.record.summary.at("steps")) << " steps, final loss "
              << fmt_num(r.final_loss) << "\n";
  std::cout << (rd / "expert.ckpt").string() << "\n";
  return 0;
}

int cmd_train(const Cli& cli) {
  cfg::Config c = resolve_config(cli);
  fs::path rd = resolve_run_dir(cli);
  guard_run_dir(rd, cli.force, c.hash(), {"model.ckpt"});
  c.echo_to((rd / "config.cfg").string());
  data::Manifest m = load_manifest(c);
  train::StageResult r = run_joint(c, m, cli.seed, rd, cli.expert_init);
  write_index(rd, "train", cli.seed, c.hash(), {"config.cfg", "train.jsonl", "model.ckpt"});
  std::cout << "train: " << fmt_num(r.record.summary.at("steps")) << " steps, final loss "
            << fmt_num(r.final_loss) << "\n"
            << (rd / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const Cli& cli) {
  if (cli.checkpoint.empty()) throw UsageError("eval needs --checkpoint");
  cfg::Config c = resolve_config(cli);
  fs::path rd = resolve_run_dir(cli);
  guard_run_dir(rd, cli.force, c.hash(), {});
  c.echo_to((rd / "config.cfg").string());
  data::Manifest m = load_manifest(c);
  metrics::EvalOptions opt = metrics::eval_options(c);
  std::string split = cli.split.empty() ? c.get_str("eval.split") : cli.split;

  Stack judge_stack;
  const expert::Expert* judge = nullptr;
  if (opt.judge_tag == "stage1") {
    if (cli.judge_checkpoint.empty())
      throw UsageError("eval.judge = stage1 needs --judge-checkpoint (or set eval.judge = "
                       "finetuned to reuse the model checkpoint's expert)");
    judge_stack = make_stack(c, m.num_subjects, cli.seed, /*with_animator=*/false);
    train::load_params_into(cli.judge_checkpoint, judge_stack.ps);
    judge = judge_stack.xp.get();
  }
  metrics::SplitReport rep = run_eval(c, m, cli.seed, cli.checkpoint, judge, split, opt, rd);
  write_index(rd, "eval", cli.seed, c.hash(), {"config.cfg", "report.json", "report.csv"});
  std::cout << "eval " << split << ": lve " << fmt_num(rep.mean_lve) << " mm^2, cer "
            << fmt_num(rep.pooled_cer) << ", ver " << fmt_num(rep.pooled_ver) << "\n"
            << (rd / "report.json").string() << "\n";
  return 0;
}

int cmd_ablate(const Cli& cli) {
  const std::vector<std::string> all = {"full", "no_prior", "no_rlv", "visual_only"};
  std::vector<std::string> selected = cli.variants.empty() ? all : split_csv(cli.variants);
  for (const auto& name : selected)
    if (std::find(all.begin(), all.end(), name) == all.end())
      throw UsageError("unknown ablation variant '" + name +
                       "' (expected full, no_prior, no_rlv, visual_only)");
  if (selected.empty()) throw UsageError("--variants names no variants");
  auto picked = [&](const std::string& name) {
    return std::find(selected.begin(), selected.end(), name) != selected.end();
  };

  cfg::Config base = resolve_config(cli);
  fs::path rd = resolve_run_dir(cli);
  guard_run_dir(rd, cli.force, base.hash(), {});
  base.echo_to((rd / "config.cfg").string());
  data::Manifest m = load_manifest(base);

  struct Cell {
    std::string name;
    bool ok = false;
    std::string note;
    double lve = 0.0, cer = 0.0, ver = 0.0;
  };
  std::vector<Cell> table;

  // one audio-visual stage-1 expert shared by `full` and `no_rlv`, one
  // visual-only stage-1 expert for the speech ablation, and a fixed
  // audio-visual judge so every row is scored the same way
  std::string av_expert, visual_expert;
  std::string pretrain_err;
  try {
    run_pretrain(base, m, cli.seed, rd / "pretrain_av");
    av_expert = (rd / "pretrain_av" / "expert.ckpt").string();
    if (picked("visual_only")) {
      cfg::Config vis = base;
      vis.set("trainer.visual_only", "true");
      run_pretrain(vis, m, cli.seed, rd / "pretrain_visual");
      visual_expert = (rd / "pretrain_visual" / "expert.ckpt").string();
    }
  } catch (const std::exception& e) {
    pretrain_err = e.what();
  }

  Stack judge_stack;
  const expert::Expert* judge = nullptr;
  if (!av_expert.empty()) {
    judge_stack = make_stack(base, m.num_subjects, cli.seed, /*with_animator=*/false);
    train::load_params_into(av_expert, judge_stack.ps);
    judge = judge_stack.xp.get();
  }
  metrics::EvalOptions opt = metrics::eval_options(base);
  opt.judge_tag = "stage1";
  opt.visual_only = false;  // rows differ in training, never in scoring
  std::string split = cli.split.empty() ? base.get_str("eval.split") : cli.split;

  struct Variant {
    std::string name, flag, expert_init;
  };
  const std::vector<Variant> candidates = {
      {"full", "", av_expert},
      {"no_prior", "trainer.no_prior", ""},
      {"no_rlv", "trainer.no_rlv", av_expert},
      {"visual_only", "trainer.visual_only", visual_expert},
  };
  std::vector<Variant> variants;
  for (const auto& v : candidates)
    if (picked(v.name)) variants.push_back(v);
  for (const auto& v : variants) {
    Cell cell;
    cell.name = v.name;
    try {
      if (!pretrain_err.empty() && (v.name != "no_prior"))
        throw StateError("stage 1 failed: " + pretrain_err);
      if (!judge) throw StateError("no judge expert: " + pretrain_err);
      cfg::Config c = base;
      if (!v.flag.empty()) c.set(v.flag, "true");
      run_joint(c, m, cli.seed, rd / v.name, v.expert_init);
      metrics::SplitReport rep =
          run_eval(c, m, cli.seed, (rd / v.name / "model.ckpt").string(), judge, split, opt,
                   rd / v.name);
      cell.ok = true;
      cell.lve = rep.mean_lve;
      cell.cer = rep.pooled_cer;
      cell.ver = rep.pooled_ver;
    } catch (const std::exception& e) {
      cell.note = e.what();
    }
    table.push_back(std::move(cell));
  }

  // comparison table: stdout, CSV and JSON carry identical rows
  std::ostringstream csv, json, text;
  csv << "variant,status,lve,cer,ver\n";
  json << "{\n  \"split\": \"" << split << "\",\n  \"rows\": [\n";
  text << "variant        lve (mm^2)      cer        ver\n";
  for (size_t i = 0; i < table.size(); ++i) {
    const Cell& cell = table[i];
    if (cell.ok) {
      csv << cell.name << ",ok," << fmt_num(cell.lve) << "," << fmt_num(cell.cer) << ","
          << fmt_num(cell.ver) << "\n";
      json << "    {\"variant\": \"" << cell.name << "\", \"status\": \"ok\", \"lve\": "
           << fmt_num(cell.lve) << ", \"cer\": " << fmt_num(cell.cer)
           << ", \"ver\": " << fmt_num(cell.ver) << "}";
      char line[128];
      std::snprintf(line, sizeof line, "%-14s %-15s %-10s %s\n", cell.name.c_str(),
                    fmt_num(cell.lve).c_str(), fmt_num(cell.cer).c_str(),
                    fmt_num(cell.ver).c_str());
      text << line;
    } else {
      csv << cell.name << ",failed,,,\n";
      json << "    {\"variant\": \"" << cell.name << "\", \"status\": \"failed\"}";
      char line[128];
      std::snprintf(line, sizeof line, "%-14s failed: %s\n", cell.name.c_str(),
                    cell.note.c_str());
      text << line;
    }
    json << (i + 1 < table.size() ? ",\n" : "\n");
  }
  json << "  ]\n}\n";
  {
    std::ofstream out(rd / "ablate.csv", std::ios::binary);
    AVG_CHECK(out.good(), IoError, "cannot write ablate.csv");
    out << csv.str();
  }
  {
    std::ofstream out(rd / "ablate.json", std::ios::binary);
    AVG_CHECK(out.good(), IoError, "cannot write ablate.json");
    out << json.str();
  }
  write_index(rd, "ablate", cli.seed, base.hash(), {"config.cfg", "ablate.csv", "ablate.json"});
  std::cout << text.str() << (rd / "ablate.csv").string() << "\n";
  for (const auto& cell : table)
    if (!cell.ok) {
      std::cerr << "avguide: variant " << cell.name << " failed: " << cell.note << "\n";
      return 1;
    }
  return 0;
}

int cmd_render(const Cli& cli) {
  cfg::Config c = resolve_config(cli);
  fs::path rd = resolve_run_dir(cli);
  guard_run_dir(rd, cli.force, c.hash(), {});
  c.echo_to((rd / "config.cfg").string());
  data::Manifest m = load_manifest(c);
  metrics::EvalOptions opt = metrics::eval_options(c);
  std::string split = cli.split.empty() ? c.get_str("eval.split") : cli.split;

  data::SampleRef ref;
  if (cli.sample.empty()) {
    std::vector<data::SampleRef> refs = m.split(split);
    AVG_CHECK(!refs.empty(), ValidationError, "split '" + split + "' has no samples");
    ref = refs.front();
  } else {
    bool found = false;
    for (const auto& r : m.samples)
      if (r.id == cli.sample) {
        ref = r;
        found = true;
        break;
      }
    AVG_CHECK(found, ValidationError, "no sample with id '" + cli.sample + "' in the manifest");
  }

  data::LoadedSample s = data::load_sample(m, ref);
  mesh::MeshTopology topo = mesh::toyface_topology();
  render::FrameSequence gt = render::render_frames(s.vertices, topo, opt.cam, opt.sigma);

  const int64_t T = gt.images.dim(0), H = gt.images.dim(1), W = gt.images.dim(2);
  auto frame = [&](const Tensor& stack, int64_t t) {
    Tensor img({H, W});
    for (int64_t i = 0; i < H * W; ++i) img[i] = stack[t * H * W + i];
    return img;
  };
  auto path_of = [&](const char* tag, int64_t t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04lld.png", tag, static_cast<long long>(t));
    return (rd / buf).string();
  };
  for (int64_t t = 0; t < T; ++t) render::write_png_gray(frame(gt.images, t), path_of("gt", t));

  std::vector<std::string> artifacts = {"config.cfg"};
  if (!cli.checkpoint.empty()) {
    Stack st = make_stack(c, m.num_subjects, cli.seed, /*with_animator=*/true);
    train::load_params_into(cli.checkpoint, st.ps);
    Tensor feats = aligned_features(s, m.fps, *st.enc);
    Tensor pred = st.model->predict(feats, s.vertices.num_frames(), st.tmpl,
                                    s.style.subject_id);
    render::FrameSequence pr =
        render::render_frames(mesh::VertexSequence{pred, m.fps}, topo, opt.cam, opt.sigma);
    for (int64_t t = 0; t < T; ++t) {
      render::write_png_gray(frame(pr.images, t), path_of("pred", t));
      Tensor pair({H, 2 * W + 4});
      for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) pair[y * (2 * W + 4) + x] = gt.images[t * H * W + y * W + x];
        for (int64_t x = 0; x < 4; ++x) pair[y * (2 * W + 4) + W + x] = 1.0;
        for (int64_t x = 0; x < W; ++x)
          pair[y * (2 * W + 4) + W + 4 + x] = pr.images[t * H * W + y * W + x];
      }
      render::write_png_gray(pair, path_of("pair", t));
    }
    artifacts.push_back("pred + pair frames");
  }
  artifacts.push_back("gt frames");
  write_index(rd, "render", cli.seed, c.hash(), artifacts);
  std::cout << ref.id << ": " << T << " frames under " << rd.string() << "\n";
  return 0;
}

int cmd_plot_features(const Cli& cli) {
  if (cli.words.empty()) throw UsageError("plot-features needs --words a,b,c");
  std::vector<std::string> wanted = split_csv(cli.words);
  if (wanted.empty()) throw UsageError("--words names no words");

  cfg::Config c = resolve_config(cli);
  fs::path rd = resolve_run_dir(cli);
  guard_run_dir(rd, cli.force, c.hash(), {});
  c.echo_to((rd / "config.cfg").string());
  data::Manifest m = load_manifest(c);
  metrics::EvalOptions opt = metrics::eval_options(c);
  std::string split = cli.split.empty() ? "train" : cli.split;

  Stack st = make_stack(c, m.num_subjects, cli.seed, /*with_animator=*/false);
  if (!cli.checkpoint.empty()) train::load_params_into(cli.checkpoint, st.ps);
  const auto& lex = lang::builtin_lexicon();

  // feature rows labeled (word, sample, frame); word spans come from the
  // per-word phoneme runs the corpus scripts are concatenated from
  std::vector<std::vector<double>> rows;
  std::vector<std::string> row_word, row_sample;
  std::vector<int64_t> row_frame;
  ag::NoGradGuard guard;
  Rng drop(0);
  for (const auto& ref : m.split(split)) {
    data::LoadedSample s = data::load_sample(m, ref);
    if (s.script.entries.empty()) continue;
    std::vector<std::pair<std::string, std::pair<int64_t, int64_t>>> spans;
    {
      std::istringstream words(s.transcript);
      std::string w;
      size_t pos = 0;
      double t0 = s.script.lead_pad;
      bool parsed = true;
      while (words >> w) {
        size_t n = lang::g2p(w, lex).size();
        if (pos + n > s.script.entries.size()) {
          parsed = false;
          break;
        }
        double dur = 0.0;
        for (size_t k = 0; k < n; ++k) dur += s.script.entries[pos + k].second;
        int64_t f0 = static_cast<int64_t>(std::floor(t0 * m.fps));
        int64_t f1 = static_cast<int64_t>(std::ceil((t0 + dur) * m.fps));
        spans.push_back({w, {f0, f1}});
        pos += n;
        t0 += dur;
      }
      if (!parsed) continue;  // script does not match the transcript
    }
    bool relevant = false;
    for (const auto& sp : spans)
      for (const auto& w : wanted)
        if (sp.first == w) relevant = true;
    if (!relevant) continue;

    mesh::MeshTopology topo = mesh::toyface_topology();
    render::FrameSequence fr = render::render_frames(s.vertices, topo, opt.cam, opt.sigma);
    render::LipFrames lips = render::crop_lips(fr, s.vertices, topo, opt.cam, opt.margin,
                                               opt.crop_size, opt.crop_size);
    Tensor feats = aligned_features(s, m.fps, *st.enc);
    std::vector<int> ids = lang::encode_text(s.transcript);
    expert::ExpertOutput eo =
        st.xp->forward(ag::Var::constant(lips.crops), feats,
                       std::vector<int64_t>(ids.begin(), ids.end()), opt.visual_only, drop);
    const Tensor& feat = eo.features.value();
    const int64_t T = feat.dim(0), D = feat.dim(1);
    for (const auto& sp : spans) {
      bool hit = false;
      for (const auto& w : wanted)
        if (sp.first == w) hit = true;
      if (!hit) continue;
      for (int64_t t = std::max<int64_t>(0, sp.second.first);
           t < std::min(T, sp.second.second); ++t) {
        std::vector<double> row(static_cast<size_t>(D));
        for (int64_t d = 0; d < D; ++d) row[size_t(d)] = feat[t * D + d];
        rows.push_back(std::move(row));
        row_word.push_back(sp.first);
        row_sample.push_back(ref.id);
        row_frame.push_back(t);
      }
    }
  }
  AVG_CHECK(!rows.empty(), ValidationError,
            "no occurrences of the requested words in split '" + split + "'");

  const int64_t N = static_cast<int64_t>(rows.size());
  const int64_t D = static_cast<int64_t>(rows.front().size());
  Tensor mat({N, D});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t d = 0; d < D; ++d) mat[i * D + d] = rows[size_t(i)][size_t(d)];
  Tensor proj = metrics::pca_project(mat, 2);

  fs::path out_path = rd / "features.csv";
  std::ofstream out(out_path, std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write " + out_path.string());
  out << "word,sample,frame,x,y\n";
  for (int64_t i = 0; i < N; ++i)
    out << row_word[size_t(i)] << "," << row_sample[size_t(i)] << "," << row_frame[size_t(i)]
        << "," << fmt_num(proj[i * 2]) << "," << fmt_num(proj[i * 2 + 1]) << "\n";
  AVG_CHECK(out.good(), IoError, "failed writing " + out_path.string());

  write_index(rd, "plot-features", cli.seed, c.hash(), {"config.cfg", "features.csv"});
  std::cout << N << " feature rows -> " << out_path.string() << "\n";
  return 0;
}

int dispatch(const Cli& cli) {
  if (cli.command == "help") {
    std::cout << kUsage;
    return 0;
  }
  if (cli.command == "gen") return cmd_gen(cli);
  if (cli.command == "pretrain") return cmd_pretrain(cli);
  if (cli.command == "train") return cmd_train(cli);
  if (cli.command == "eval") return cmd_eval(cli);
  if (cli.command == "ablate") return cmd_ablate(cli);
  if (cli.command == "render") return cmd_render(cli);
  if (cli.command == "plot-features") return cmd_plot_features(cli);
  throw UsageError("unknown command '" + cli.command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(parse_args(argc, argv));
  } catch (const UsageError& e) {
    std::cerr << "avguide: " << e.what() << "\n\n" << kUsage;
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "avguide: config error: " << e.what() << "\n";
    return 2;
  } catch (const StateError& e) {
    std::cerr << "avguide: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "avguide: error: " << e.what() << "\n";
    return 1;
  }
}
