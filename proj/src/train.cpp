#include "avg/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "avg/lang.hpp"

namespace avg::train {

namespace {

std::string fmt_num(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  AVG_CHECK(res.ec == std::errc(), NumericError, "number formatting failed");
  return std::string(buf, res.ptr);
}

}  // namespace

void TrainConfig::validate() const {
  AVG_CHECK(lambda_mse >= 0.0 && lambda_av >= 0.0 && lambda_rlv >= 0.0, ConfigError,
            "loss weights must be nonnegative");
  AVG_CHECK(lambda_ctc >= 0.0 && lambda_ce >= 0.0, ConfigError,
            "perceptual shares must be nonnegative");
  AVG_CHECK(lr > 0.0 && expert_lr > 0.0 && pretrain_lr > 0.0, ConfigError,
            "learning rates must be positive");
  AVG_CHECK(epochs >= 1 && pretrain_epochs >= 1, ConfigError, "epochs must be at least 1");
  AVG_CHECK(batch_size >= 1, ConfigError, "batch_size must be at least 1");
  AVG_CHECK(clip_norm >= 0.0, ConfigError, "clip_norm must be nonnegative");
  AVG_CHECK(log_every >= 1, ConfigError, "log_every must be at least 1");
}

TrainConfig train_config(const cfg::Config& c, uint64_t seed) {
  TrainConfig t;
  t.lambda_mse = c.get_num("trainer.lambda_mse");
  t.lambda_av = c.get_num("trainer.lambda_av");
  t.lambda_rlv = c.get_num("trainer.lambda_rlv");
  t.lambda_ctc = c.get_num("trainer.lambda_ctc");
  t.lambda_ce = c.get_num("trainer.lambda_ce");
  t.lr = c.get_num("trainer.lr");
  t.expert_lr = c.get_num("trainer.expert_lr");
  t.pretrain_lr = c.get_num("trainer.pretrain_lr");
  t.epochs = c.get_int("trainer.epochs");
  t.pretrain_epochs = c.get_int("trainer.pretrain_epochs");
  t.batch_size = c.get_int("trainer.batch_size");
  t.clip_norm = c.get_num("trainer.clip_norm");
  t.no_prior = c.get_bool("trainer.no_prior");
  t.no_rlv = c.get_bool("trainer.no_rlv");
  t.visual_only = c.get_bool("trainer.visual_only");
  t.log_every = c.get_int("trainer.log_every");
  if (t.no_rlv) t.lambda_rlv = 0.0;
  t.seed = seed;
  t.config_hash = c.hash();
  t.validate();
  return t;
}

RenderSetup render_setup(const cfg::Config& c) {
  RenderSetup r;
  r.cam = render::make_camera(c);
  r.sigma = c.get_num("render.sigma");
  r.margin = c.get_num("render.margin");
  r.crop_size = c.get_int("render.crop_size");
  return r;
}

std::vector<std::string> names_with_prefix(const nn::ParamStore& ps, const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& n : ps.names())
    if (n.rfind(prefix, 0) == 0) out.push_back(n);
  return out;
}

// ---------------------------------------------------------------------------
// optimizer

Adam::Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
  AVG_CHECK(0.0 <= beta1 && beta1 < 1.0 && 0.0 <= beta2 && beta2 < 1.0, ConfigError,
            "Adam betas must lie in [0, 1)");
  AVG_CHECK(eps > 0.0, ConfigError, "Adam eps must be positive");
}

void Adam::add_group(const std::vector<std::string>& names, const nn::ParamStore& ps, double lr) {
  AVG_CHECK(lr > 0.0, ConfigError, "learning rate must be positive");
  for (const auto& n : names) {
    AVG_CHECK(ps.has(n), ContractError, "optimizer group names unknown parameter " + n);
    for (const auto& s : slots_)
      AVG_CHECK(s.name != n, ContractError, "parameter " + n + " already belongs to a group");
    Slot s;
    s.name = n;
    s.var = ps.at(n);
    s.m = Tensor(s.var.value().shape());
    s.v = Tensor(s.var.value().shape());
    s.lr = lr;
    slots_.push_back(std::move(s));
  }
}

double Adam::clip_global_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& s : slots_) {
    ag::Var var = s.var;
    for (double g : var.grad().store()) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (auto& s : slots_) {
      ag::Var var = s.var;
      if (!var.grad().empty())
        for (double& g : var.grad_buffer().store()) g *= scale;
    }
  }
  return norm;
}

void Adam::step() {
  AVG_CHECK(!slots_.empty(), ContractError, "optimizer has no parameters");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    ag::Var var = s.var;
    Tensor& val = var.mutable_value();
    const Tensor& g = var.grad();
    const bool has_g = !g.empty();
    for (int64_t i = 0; i < val.numel(); ++i) {
      double gi = has_g ? g[i] : 0.0;
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
      val[i] -= s.lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// objective

double weighted_total(double mse, double av, double rlv, const TrainConfig& cfg) {
  return (cfg.lambda_mse * mse + cfg.lambda_av * av) + cfg.lambda_rlv * rlv;
}

PreparedSample prepare_sample(const data::Manifest& m, const data::SampleRef& r,
                              audio::SpeechEncoder& enc) {
  data::LoadedSample s = data::load_sample(m, r);
  PreparedSample p;
  p.id = r.id;
  p.gt = s.vertices.frames;
  p.fps = m.fps;
  {
    ag::NoGradGuard guard;
    audio::AudioFeatures f = audio::extract_features(s.wav, enc);
    p.feats =
        expert::fit_rows(audio::resample_features(f, m.fps).features, s.vertices.num_frames());
  }
  std::vector<int> ids = lang::encode_text(s.transcript);
  p.tokens.assign(ids.begin(), ids.end());
  p.style = s.style.subject_id;
  AVG_CHECK(!p.tokens.empty(), ValidationError, "sample " + p.id + " has an empty transcript");
  return p;
}

void check_av_feasible(const PreparedSample& s) {
  int64_t repeats = 0;
  for (size_t i = 1; i < s.tokens.size(); ++i)
    if (s.tokens[i] == s.tokens[i - 1]) ++repeats;
  int64_t need = static_cast<int64_t>(s.tokens.size()) + repeats;
  AVG_CHECK(s.gt.dim(0) >= need, ValidationError,
            "sample " + s.id + ": " + std::to_string(s.gt.dim(0)) +
                " frames cannot emit a transcript needing " + std::to_string(need));
}

ag::Var total_loss(const ag::Var& pred, const PreparedSample& s, const mesh::MeshTopology& topo,
                   const expert::Expert* xp, const RenderSetup& rs, const TrainConfig& cfg,
                   Rng& drop_rng, LossBreakdown* bd) {
  AVG_CHECK(pred.defined(), ContractError, "total_loss: undefined prediction");
  AVG_CHECK(pred.value().shape() == s.gt.shape(), ContractError,
            "total_loss: prediction " + pred.value().shape_str() + " vs ground truth " +
                s.gt.shape_str());
  LossBreakdown out;
  auto guarded = [&](const char* name, const ag::Var& t) {
    double v = t.item();
    AVG_CHECK(std::isfinite(v), NumericError,
              std::string(name) + " term is not finite (sample " + s.id + ")");
    return v;
  };

  // regression terms stay cheap, so their values are always reported even
  // when they carry no weight
  ag::Var mse_t, rlv_t, av_t;
  if (cfg.lambda_mse != 0.0) {
    mse_t = anim::mse_loss(pred, s.gt);
  } else {
    ag::NoGradGuard guard;
    mse_t = anim::mse_loss(pred, s.gt);
  }
  out.mse = guarded("mse", mse_t);
  if (cfg.lambda_rlv != 0.0) {
    rlv_t = anim::rlv_loss(pred, s.gt, topo.lip_vertex_indices);
  } else {
    ag::NoGradGuard guard;
    rlv_t = anim::rlv_loss(pred, s.gt, topo.lip_vertex_indices);
  }
  out.rlv = guarded("rlv", rlv_t);

  if (cfg.lambda_av != 0.0) {
    AVG_CHECK(xp != nullptr, ContractError, "total_loss: lambda_av > 0 needs the expert");
    ag::Var crops = render::render_lip_crops(pred, topo, rs.cam, rs.sigma, rs.margin,
                                             rs.crop_size, rs.crop_size);
    expert::ExpertOutput eo = xp->forward(crops, s.feats, s.tokens, cfg.visual_only, drop_rng);
    ag::Var ctc_t = ctc::ctc_loss(eo.ctc_logits, s.tokens, lang::kCtcBlank);
    out.ctc = guarded("ctc", ctc_t);
    ag::Var ce_t = ctc::attention_ce_loss(eo.dec_logits, expert::decoder_labels(s.tokens),
                                          xp->config().label_smoothing);
    out.ce = guarded("ce", ce_t);
    av_t = ctc::av_loss(ctc_t, ce_t, cfg.lambda_ctc, cfg.lambda_ce);
    out.av = guarded("av", av_t);
  }

  ag::Var total;
  auto chain = [&](const ag::Var& term, double w) {
    if (w == 0.0 || !term.defined()) return;
    ag::Var wt = ag::mul_scalar(term, w);
    total = total.defined() ? ag::add(total, wt) : wt;
  };
  chain(mse_t, cfg.lambda_mse);
  chain(av_t, cfg.lambda_av);
  chain(rlv_t, cfg.lambda_rlv);
  AVG_CHECK(total.defined(), ContractError, "total_loss: every loss weight is zero");
  out.total = guarded("total", total);
  if (bd) *bd = out;
  return total;
}

// ---------------------------------------------------------------------------
// run records

std::string RunRecord::to_jsonl() const {
  std::ostringstream out;
  char hash_hex[20];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx", static_cast<unsigned long long>(config_hash));
  out << "{\"stage\": \"" << stage << "\", \"config_hash\": \"" << hash_hex
      << "\", \"seed\": " << seed << ", \"flags\": [";
  for (size_t i = 0; i < flags.size(); ++i) out << (i ? ", " : "") << "\"" << flags[i] << "\"";
  out << "]}\n";
  for (const auto& row : epochs) {
    out << "{";
    bool first = true;
    for (const auto& [k, v] : row) {
      out << (first ? "" : ", ") << "\"" << k << "\": " << fmt_num(v);
      first = false;
    }
    out << "}\n";
  }
  out << "{\"summary\": {";
  bool first = true;
  for (const auto& [k, v] : summary) {
    out << (first ? "" : ", ") << "\"" << k << "\": " << fmt_num(v);
    first = false;
  }
  out << "}}\n";
  return out.str();
}

void RunRecord::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  AVG_CHECK(out.good(), IoError, "cannot write " + path);
  out << to_jsonl();
  AVG_CHECK(out.good(), IoError, "failed writing " + path);
}

// ---------------------------------------------------------------------------
// stages

namespace {

void note_flags(RunRecord& rec, const TrainConfig& cfg) {
  if (cfg.no_prior) rec.flags.push_back("no_prior");
  if (cfg.no_rlv) rec.flags.push_back("no_rlv");
  if (cfg.visual_only) rec.flags.push_back("visual_only");
}

}  // namespace

StageResult pretrain_expert(expert::Expert& xp, nn::ParamStore& ps, const data::Manifest& m,
                            const mesh::MeshTopology& topo, const RenderSetup& rs,
                            audio::SpeechEncoder& enc, const TrainConfig& cfg, int64_t max_steps,
                            int64_t decode_check_every, const std::string& split,
                            const std::string& record_path) {
  cfg.validate();
  RunRecord rec;
  rec.stage = "pretrain";
  rec.config_hash = cfg.config_hash;
  rec.seed = cfg.seed;
  note_flags(rec, cfg);
  if (cfg.no_prior) {
    rec.summary["skipped"] = 1.0;
    if (!record_path.empty()) rec.write(record_path);
    return {rec, 0.0};
  }

  std::vector<data::SampleRef> refs = m.split(split);
  AVG_CHECK(!refs.empty(), ValidationError, "pretrain: split '" + split + "' has no samples");

  struct Cached {
    Tensor crops, feats;
    std::vector<int64_t> tokens;
  };
  std::map<std::string, Cached> cache;
  {
    ag::NoGradGuard guard;
    for (const auto& r : refs) {
      PreparedSample p = prepare_sample(m, r, enc);
      check_av_feasible(p);
      mesh::VertexSequence seq{p.gt, p.fps};
      render::FrameSequence fr = render::render_frames(seq, topo, rs.cam, rs.sigma);
      render::LipFrames lips =
          render::crop_lips(fr, seq, topo, rs.cam, rs.margin, rs.crop_size, rs.crop_size);
      cache.emplace(p.id, Cached{lips.crops, p.feats, p.tokens});
    }
  }

  Adam opt;
  opt.add_group(names_with_prefix(ps, "expert."), ps, cfg.pretrain_lr);
  Rng drop(derive_seed(cfg.seed, "pretrain.dropout"));

  auto all_exact = [&] {
    for (const auto& [id, c] : cache)
      if (xp.decode_greedy(c.crops, c.feats, cfg.visual_only) != c.tokens) return false;
    return true;
  };

  int64_t steps = 0, exact_at = -1;
  double final_loss = 0.0;
  bool done = false;
  for (int64_t epoch = 0; epoch < cfg.pretrain_epochs && !done; ++epoch) {
    auto batches = data::make_batches(m, split, cfg.batch_size,
                                      derive_seed(cfg.seed, "pretrain.order", uint64_t(epoch)));
    double ep_loss = 0.0, ep_ctc = 0.0, ep_ce = 0.0, ep_gn = 0.0;
    int64_t ep_steps = 0;
    for (const auto& batch : batches) {
      ps.zero_grads();
      double lv = 0.0, b_ctc = 0.0, b_ce = 0.0;
      try {
        ag::Var loss;
        for (const auto& r : batch) {
          const Cached& c = cache.at(r.id);
          expert::ExpertOutput eo =
              xp.forward(ag::Var::constant(c.crops), c.feats, c.tokens, cfg.visual_only, drop);
          ag::Var ctc_t = ctc::ctc_loss(eo.ctc_logits, c.tokens, lang::kCtcBlank);
          ag::Var ce_t = ctc::attention_ce_loss(eo.dec_logits, expert::decoder_labels(c.tokens),
                                                xp.config().label_smoothing);
          b_ctc += ctc_t.item();
          b_ce += ce_t.item();
          ag::Var one = ctc::av_loss(ctc_t, ce_t, cfg.lambda_ctc, cfg.lambda_ce);
          loss = loss.defined() ? ag::add(loss, one) : one;
        }
        loss = ag::mul_scalar(loss, 1.0 / static_cast<double>(batch.size()));
        lv = loss.item();
        AVG_CHECK(std::isfinite(lv), NumericError,
                  "pretrain: loss is not finite at step " + std::to_string(steps));
        ag::backward(loss);
      } catch (const NumericError&) {
        rec.summary["aborted_step"] = static_cast<double>(steps);
        if (!record_path.empty()) rec.write(record_path);
        throw;
      }
      double gn = opt.clip_global_norm(cfg.clip_norm);
      opt.step();
      ++steps;
      ++ep_steps;
      final_loss = lv;
      ep_loss += lv;
      ep_ctc += b_ctc / static_cast<double>(batch.size());
      ep_ce += b_ce / static_cast<double>(batch.size());
      ep_gn += gn;
      if (decode_check_every > 0 && steps % decode_check_every == 0 && all_exact()) {
        exact_at = steps;
        done = true;
        break;
      }
      if (max_steps > 0 && steps >= max_steps) {
        done = true;
        break;
      }
    }
    if (ep_steps > 0 &&
        (epoch % cfg.log_every == 0 || done || epoch + 1 == cfg.pretrain_epochs)) {
      std::map<std::string, double> row;
      row["epoch"] = static_cast<double>(epoch);
      row["steps"] = static_cast<double>(ep_steps);
      row["loss"] = ep_loss / static_cast<double>(ep_steps);
      row["ctc"] = ep_ctc / static_cast<double>(ep_steps);
      row["ce"] = ep_ce / static_cast<double>(ep_steps);
      row["grad_norm"] = ep_gn / static_cast<double>(ep_steps);
      rec.epochs.push_back(std::move(row));
      if (!record_path.empty()) rec.write(record_path);
    }
  }
  rec.summary["final_loss"] = final_loss;
  rec.summary["steps"] = static_cast<double>(steps);
  if (decode_check_every > 0) rec.summary["steps_to_exact"] = static_cast<double>(exact_at);
  if (!record_path.empty()) rec.write(record_path);
  return {rec, final_loss};
}

StageResult joint_train(anim::Animator& model, expert::Expert& xp, nn::ParamStore& ps,
                        const data::Manifest& m, const mesh::MeshTopology& topo,
                        const Tensor& tmpl, const RenderSetup& rs, audio::SpeechEncoder& enc,
                        const TrainConfig& cfg, int64_t max_steps, const std::string& split,
                        const std::string& record_path) {
  cfg.validate();
  RunRecord rec;
  rec.stage = "joint";
  rec.config_hash = cfg.config_hash;
  rec.seed = cfg.seed;
  note_flags(rec, cfg);

  std::vector<data::SampleRef> refs = m.split(split);
  AVG_CHECK(!refs.empty(), ValidationError, "joint: split '" + split + "' has no samples");

  std::map<std::string, PreparedSample> cache;
  for (const auto& r : refs) {
    PreparedSample p = prepare_sample(m, r, enc);
    if (cfg.lambda_av != 0.0) check_av_feasible(p);
    cache.emplace(r.id, std::move(p));
  }

  Adam opt;
  opt.add_group(names_with_prefix(ps, "anim."), ps, cfg.lr);
  opt.add_group(names_with_prefix(ps, "expert."), ps, cfg.expert_lr);
  Rng drop(derive_seed(cfg.seed, "joint.dropout"));

  int64_t steps = 0;
  double final_loss = 0.0;
  bool done = false;
  for (int64_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    auto batches = data::make_batches(m, split, cfg.batch_size,
                                      derive_seed(cfg.seed, "joint.order", uint64_t(epoch)));
    LossBreakdown ep{};
    double ep_gn = 0.0;
    int64_t ep_steps = 0;
    for (const auto& batch : batches) {
      ps.zero_grads();
      const double inv = 1.0 / static_cast<double>(batch.size());
      double lv = 0.0;
      LossBreakdown bsum{};
      try {
        ag::Var loss;
        for (const auto& r : batch) {
          const PreparedSample& p = cache.at(r.id);
          ag::Var pred = model.forward_teacher(p.feats, p.gt, tmpl, p.style, drop);
          LossBreakdown bd;
          ag::Var one = total_loss(pred, p, topo, &xp, rs, cfg, drop, &bd);
          bsum.total += bd.total;
          bsum.mse += bd.mse;
          bsum.av += bd.av;
          bsum.rlv += bd.rlv;
          bsum.ctc += bd.ctc;
          bsum.ce += bd.ce;
          loss = loss.defined() ? ag::add(loss, one) : one;
        }
        loss = ag::mul_scalar(loss, inv);
        lv = loss.item();
        AVG_CHECK(std::isfinite(lv), NumericError,
                  "joint: loss is not finite at step " + std::to_string(steps));
        ag::backward(loss);
      } catch (const NumericError&) {
        rec.summary["aborted_step"] = static_cast<double>(steps);
        if (!record_path.empty()) rec.write(record_path);
        throw;
      }
      double gn = opt.clip_global_norm(cfg.clip_norm);
      opt.step();
      ++steps;
      ++ep_steps;
      final_loss = lv;
      ep.total += lv;
      ep.mse += bsum.mse * inv;
      ep.av += bsum.av * inv;
      ep.rlv += bsum.rlv * inv;
      ep.ctc += bsum.ctc * inv;
      ep.ce += bsum.ce * inv;
      ep_gn += gn;
      if (max_steps > 0 && steps >= max_steps) {
        done = true;
        break;
      }
    }
    if (ep_steps > 0 && (epoch % cfg.log_every == 0 || done || epoch + 1 == cfg.epochs)) {
      const double n = static_cast<double>(ep_steps);
      std::map<std::string, double> row;
      row["epoch"] = static_cast<double>(epoch);
      row["steps"] = n;
      row["loss"] = ep.total / n;
      row["mse"] = ep.mse / n;
      row["av"] = ep.av / n;
      row["rlv"] = ep.rlv / n;
      row["ctc"] = ep.ctc / n;
      row["ce"] = ep.ce / n;
      row["grad_norm"] = ep_gn / n;
      rec.epochs.push_back(std::move(row));
      if (!record_path.empty()) rec.write(record_path);
    }
  }
  rec.summary["final_loss"] = final_loss;
  rec.summary["steps"] = static_cast<double>(steps);
  if (!record_path.empty()) rec.write(record_path);
  return {rec, final_loss};
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[] = "AVG-CKPT-1\n";
constexpr size_t kMagicLen = 11;

void put_bytes(std::ostream& o, const void* p, size_t n) {
  o.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename T>
void put_pod(std::ostream& o, T v) {
  put_bytes(o, &v, sizeof v);
}
void put_str(std::ostream& o, const std::string& s) {
  put_pod<uint32_t>(o, static_cast<uint32_t>(s.size()));
  put_bytes(o, s.data(), s.size());
}
void put_tensor(std::ostream& o, const Tensor& t) {
  put_pod<uint32_t>(o, static_cast<uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) put_pod<int64_t>(o, t.dim(i));
  put_bytes(o, t.data(), sizeof(double) * static_cast<size_t>(t.numel()));
}

struct Reader {
  std::ifstream f;
  std::string path;

  void bytes(void* p, size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    AVG_CHECK(f.gcount() == static_cast<std::streamsize>(n), ParseError,
              "truncated checkpoint: " + path);
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    uint32_t n = pod<uint32_t>();
    AVG_CHECK(n < (1u << 20), ParseError, "corrupt string length in " + path);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Tensor tensor() {
    uint32_t nd = pod<uint32_t>();
    AVG_CHECK(nd <= 8, ParseError, "corrupt tensor rank in " + path);
    std::vector<int64_t> dims(nd);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = pod<int64_t>();
      AVG_CHECK(0 <= d && d < (int64_t(1) << 32), ParseError, "corrupt tensor shape in " + path);
      numel *= d;
    }
    Tensor t(dims);
    bytes(t.data(), sizeof(double) * static_cast<size_t>(numel));
    return t;
  }
};

CheckpointInfo read_checkpoint(const std::string& path, nn::ParamStore* ps, Adam* opt,
                               const uint64_t* expect_hash, bool exact) {
  Reader in;
  in.path = path;
  in.f.open(path, std::ios::binary);
  AVG_CHECK(in.f.good(), IoError, "cannot open " + path);
  char magic[kMagicLen];
  in.bytes(magic, kMagicLen);
  AVG_CHECK(std::memcmp(magic, kMagic, kMagicLen) == 0, ParseError,
            path + " is not an AVG-CKPT-1 file");
  CheckpointInfo info;
  info.config_hash = in.pod<uint64_t>();
  info.step = in.pod<uint64_t>();
  info.has_optimizer = in.pod<uint8_t>() != 0;
  info.num_params = in.pod<int64_t>();
  AVG_CHECK(info.num_params >= 0, ParseError, "corrupt checkpoint: " + path);
  if (expect_hash)
    AVG_CHECK(*expect_hash == info.config_hash, StateError,
              "checkpoint " + path + " was written under a different config");
  if (!ps) return info;
  if (exact)
    AVG_CHECK(info.num_params == static_cast<int64_t>(ps->names().size()), StateError,
              "checkpoint " + path + " stores a different parameter set");
  for (int64_t i = 0; i < info.num_params; ++i) {
    std::string name = in.str();
    Tensor t = in.tensor();
    AVG_CHECK(ps->has(name), StateError,
              "checkpoint parameter '" + name + "' is unknown to this model");
    ag::Var p = ps->at(name);
    AVG_CHECK(p.value().shape() == t.shape(), StateError,
              "checkpoint parameter '" + name + "' has shape " + t.shape_str() + ", expected " +
                  p.value().shape_str());
    p.mutable_value() = std::move(t);
  }
  if (opt && info.has_optimizer) {
    double b1 = in.pod<double>(), b2 = in.pod<double>(), eps = in.pod<double>();
    AVG_CHECK(b1 == opt->beta1() && b2 == opt->beta2() && eps == opt->eps(), StateError,
              "checkpoint " + path + " stores different optimizer hyperparameters");
    int64_t t = in.pod<int64_t>();
    int64_t n = in.pod<int64_t>();
    AVG_CHECK(n == opt->slot_count(), StateError,
              "checkpoint " + path + " stores a different optimizer slot set");
    for (int64_t i = 0; i < n; ++i) {
      std::string name = in.str();
      in.pod<double>();  // stored lr is informational; the config supplies it
      Tensor m = in.tensor();
      Tensor v = in.tensor();
      int64_t idx = -1;
      for (int64_t k = 0; k < opt->slot_count(); ++k)
        if (opt->slot_name(k) == name) {
          idx = k;
          break;
        }
      AVG_CHECK(idx >= 0, StateError, "optimizer slot '" + name + "' is unknown to this run");
      AVG_CHECK(opt->slot_m(idx).shape() == m.shape() && opt->slot_v(idx).shape() == v.shape(),
                StateError, "optimizer slot '" + name + "' has a mismatched shape");
      opt->slot_m(idx) = std::move(m);
      opt->slot_v(idx) = std::move(v);
    }
    opt->set_step_count(t);
  }
  return info;
}

}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamStore& ps, const Adam* opt,
                     uint64_t config_hash, uint64_t step) {
  std::ofstream o(path, std::ios::binary);
  AVG_CHECK(o.good(), IoError, "cannot write " + path);
  put_bytes(o, kMagic, kMagicLen);
  put_pod<uint64_t>(o, config_hash);
  put_pod<uint64_t>(o, step);
  put_pod<uint8_t>(o, opt ? 1 : 0);
  put_pod<int64_t>(o, static_cast<int64_t>(ps.names().size()));
  for (const auto& n : ps.names()) {
    put_str(o, n);
    put_tensor(o, ps.at(n).value());
  }
  if (opt) {
    put_pod<double>(o, opt->beta1());
    put_pod<double>(o, opt->beta2());
    put_pod<double>(o, opt->eps());
    put_pod<int64_t>(o, opt->step_count());
    put_pod<int64_t>(o, opt->slot_count());
    for (int64_t i = 0; i < opt->slot_count(); ++i) {
      put_str(o, opt->slot_name(i));
      put_pod<double>(o, opt->slot_lr(i));
      put_tensor(o, opt->slot_m(i));
      put_tensor(o, opt->slot_v(i));
    }
  }
  AVG_CHECK(o.good(), IoError, "failed writing " + path);
}

CheckpointInfo load_checkpoint(const std::string& path, nn::ParamStore& ps, Adam* opt,
                               const uint64_t* expect_hash) {
  return read_checkpoint(path, &ps, opt, expect_hash, true);
}

CheckpointInfo load_params_into(const std::string& path, nn::ParamStore& ps) {
  return read_checkpoint(path, &ps, nullptr, nullptr, false);
}

CheckpointInfo peek_checkpoint(const std::string& path) {
  return read_checkpoint(path, nullptr, nullptr, nullptr, false);
}

}  // namespace avg::train
