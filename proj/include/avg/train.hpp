#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avg/animator.hpp"
#include "avg/audio.hpp"
#include "avg/config.hpp"
#include "avg/ctc.hpp"
#include "avg/data.hpp"
#include "avg/expert.hpp"
#include "avg/mesh.hpp"
#include "avg/nn.hpp"
#include "avg/render.hpp"
#include "avg/tensor.hpp"

namespace avg::train {

struct TrainConfig {
  double lambda_mse = 1.0, lambda_av = 0.01, lambda_rlv = 1.0;
  double lambda_ctc = 0.1, lambda_ce = 0.9;  // shares inside the perceptual term
  double lr = 1e-4, expert_lr = 1e-5, pretrain_lr = 1e-3;
  int64_t epochs = 100, pretrain_epochs = 60, batch_size = 4;
  double clip_norm = 1.0;  // global-norm clip; 0 disables
  bool no_prior = false, no_rlv = false, visual_only = false;
  int64_t log_every = 1;
  uint64_t seed = 1;
  uint64_t config_hash = 0;
  void validate() const;
};
// Resolves trainer.* keys; the no_rlv flag zeroes lambda_rlv here so the
// flag and the effective weight never disagree downstream.
TrainConfig train_config(const cfg::Config& c, uint64_t seed);

// Rendering parameters shared by the perceptual-loss path and evaluation.
struct RenderSetup {
  render::Camera cam;
  double sigma = 1e-4;
  double margin = 0.3;
  int64_t crop_size = 88;
};
RenderSetup render_setup(const cfg::Config& c);

std::vector<std::string> names_with_prefix(const nn::ParamStore& ps, const std::string& prefix);

// Adam over named parameter groups with per-group learning rates. Empty
// grad buffers count as zero gradients.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void add_group(const std::vector<std::string>& names, const nn::ParamStore& ps, double lr);
  // Scales every gradient so the joint norm is at most max_norm (no-op when
  // max_norm <= 0); returns the pre-clip global norm.
  double clip_global_norm(double max_norm);
  void step();

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

  // checkpoint access, slots in registration order
  int64_t slot_count() const { return static_cast<int64_t>(slots_.size()); }
  const std::string& slot_name(int64_t i) const { return slots_[size_t(i)].name; }
  double slot_lr(int64_t i) const { return slots_[size_t(i)].lr; }
  const Tensor& slot_m(int64_t i) const { return slots_[size_t(i)].m; }
  const Tensor& slot_v(int64_t i) const { return slots_[size_t(i)].v; }
  Tensor& slot_m(int64_t i) { return slots_[size_t(i)].m; }
  Tensor& slot_v(int64_t i) { return slots_[size_t(i)].v; }

 private:
  struct Slot {
    std::string name;
    ag::Var var;
    Tensor m, v;
    double lr = 0.0;
  };
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Slot> slots_;
};

// ---------------------------------------------------------------------------
// objective

struct LossBreakdown {
  double total = 0.0;
  double mse = 0.0, av = 0.0, rlv = 0.0;  // unweighted term values
  double ctc = 0.0, ce = 0.0;             // raw components inside av
};

// The exact scalar combination used for the total, exposed so tests can pin
// the arithmetic: ((lambda_mse*mse + lambda_av*av) + lambda_rlv*rlv).
double weighted_total(double mse, double av, double rlv, const TrainConfig& cfg);

struct PreparedSample {
  std::string id;
  Tensor gt;     // [T,V,3] vertices (mm)
  Tensor feats;  // [T,F] speech features aligned to the frame count
  std::vector<int64_t> tokens;
  int64_t style = 0;
  double fps = 0.0;
};
PreparedSample prepare_sample(const data::Manifest& m, const data::SampleRef& r,
                              audio::SpeechEncoder& enc);
// The alignment-marginal loss needs enough frames for the token sequence;
// raises naming the sample when the corpus clip is too short.
void check_av_feasible(const PreparedSample& s);

// Full objective on one sample. The regression terms always produce
// diagnostic values, but only terms with nonzero weight join the gradient
// graph; the perceptual pathway (render -> crop -> expert -> ctc/attention)
// is built only when lambda_av > 0, in which case `xp` must be set. Any
// non-finite term raises naming the term.
ag::Var total_loss(const ag::Var& pred, const PreparedSample& s, const mesh::MeshTopology& topo,
                   const expert::Expert* xp, const RenderSetup& rs, const TrainConfig& cfg,
                   Rng& drop_rng, LossBreakdown* bd = nullptr);

// ---------------------------------------------------------------------------
// run records

struct RunRecord {
  std::string stage;  // pretrain | joint
  uint64_t config_hash = 0, seed = 0;
  std::vector<std::string> flags;  // active ablation switches
  std::vector<std::map<std::string, double>> epochs;
  std::map<std::string, double> summary;

  // header line, one line per epoch, summary line; deterministic bytes
  std::string to_jsonl() const;
  void write(const std::string& path) const;
};

// ---------------------------------------------------------------------------
// training stages

struct StageResult {
  RunRecord record;
  double final_loss = 0.0;
};

// Stage 1: the expert learns to read ground-truth renders plus speech with
// the perceptual loss only. GT crops and features are computed once and
// cached across epochs. With cfg.no_prior the expert keeps its random
// initialization and the record notes the skip. `max_steps` caps optimizer
// steps when positive; `decode_check_every` > 0 decodes the training split
// every that many steps and stops early once every transcript is exact
// (summary key "steps_to_exact", -1 when never reached). A nonempty
// `record_path` is rewritten at every logged epoch, so aborts leave the
// last flushed record behind.
StageResult pretrain_expert(expert::Expert& xp, nn::ParamStore& ps, const data::Manifest& m,
                            const mesh::MeshTopology& topo, const RenderSetup& rs,
                            audio::SpeechEncoder& enc, const TrainConfig& cfg,
                            int64_t max_steps = 0, int64_t decode_check_every = 0,
                            const std::string& split = "train",
                            const std::string& record_path = "");

// Stage 2: teacher-forced animator forward, total objective, one backward,
// one Adam step over both parameter groups (animator at cfg.lr, expert at
// cfg.expert_lr). Expert parameters only ever receive gradients through the
// perceptual term.
StageResult joint_train(anim::Animator& model, expert::Expert& xp, nn::ParamStore& ps,
                        const data::Manifest& m, const mesh::MeshTopology& topo,
                        const Tensor& tmpl, const RenderSetup& rs, audio::SpeechEncoder& enc,
                        const TrainConfig& cfg, int64_t max_steps = 0,
                        const std::string& split = "train", const std::string& record_path = "");

// ---------------------------------------------------------------------------
// checkpoints (format AVG-CKPT-1)

struct CheckpointInfo {
  uint64_t config_hash = 0;
  uint64_t step = 0;
  bool has_optimizer = false;
  int64_t num_params = 0;
};

void save_checkpoint(const std::string& path, const nn::ParamStore& ps, const Adam* opt,
                     uint64_t config_hash, uint64_t step);

// Exact resume: the stored parameter set must equal the store's; optimizer
// slots are restored when both sides carry them. A non-null expect_hash
// must match the stored config hash or the load refuses.
CheckpointInfo load_checkpoint(const std::string& path, nn::ParamStore& ps, Adam* opt,
                               const uint64_t* expect_hash);

// Partial init (stage handoff): every stored parameter is copied into the
// store; parameters the store has beyond the file keep their values.
CheckpointInfo load_params_into(const std::string& path, nn::ParamStore& ps);

// Header only.
CheckpointInfo peek_checkpoint(const std::string& path);

}  // namespace avg::train
