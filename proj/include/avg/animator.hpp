#pragma once

#include <cstdint>
#include <vector>

#include "avg/autograd.hpp"
#include "avg/config.hpp"
#include "avg/nn.hpp"
#include "avg/rng.hpp"
#include "avg/tensor.hpp"

namespace avg::anim {

struct AnimatorConfig {
  int64_t model_dim = 128;
  int64_t layers = 4;
  int64_t heads = 4;
  double dropout = 0.1;
  int64_t max_seq = 512;
  int64_t feature_dim = 64;   // audio feature width
  int64_t num_subjects = 0;   // style vocabulary
  int64_t vertex_count = 0;
  void validate() const;
};
AnimatorConfig animator_config(const cfg::Config& c, int64_t num_subjects,
                               int64_t vertex_count);

// Autoregressive speech-to-vertex decoder. Audio features form the
// cross-attention memory; the causal self-attention stream consumes the
// previous frame's displacement from the template, a per-subject style
// embedding and sinusoidal positions. The output head starts at zero so the
// untrained model reproduces the template exactly.
class Animator {
 public:
  Animator(const AnimatorConfig& c, nn::ParamStore* ps, Rng& rng);

  // Teacher forcing: the decoder input at frame t is target[t-1] (zeros at
  // t = 0). Differentiable; `drop_rng` drives dropout when gradients are on.
  ag::Var forward_teacher(const Tensor& features, const Tensor& target, const Tensor& tmpl,
                          int64_t style, Rng& drop_rng) const;  // -> [T, V, 3]

  // Rollout feeding back its own predictions; gradient-free.
  Tensor predict(const Tensor& features, int64_t frames, const Tensor& tmpl,
                 int64_t style) const;

  const AnimatorConfig& config() const { return cfg_; }

 private:
  ag::Var decode(const ag::Var& dec_in, const Tensor& features, const Tensor& tmpl,
                 int64_t style, Rng& drop_rng) const;
  void check_inputs(const Tensor& features, int64_t frames, const Tensor& tmpl,
                    int64_t style) const;

  AnimatorConfig cfg_;
  nn::Linear audio_in_;
  nn::LayerNorm mem_ln_;
  nn::Embedding style_;
  nn::Linear vert_in_;
  std::vector<nn::TransformerLayer> layers_;
  nn::LayerNorm out_ln_;
  nn::Linear head_;
};

// Masked reconstruction losses: squared error averaged over the valid frames
// and every coordinate they contain. An empty mask keeps all frames; a mask
// with no valid frame is a contract violation.
ag::Var mse_loss(const ag::Var& pred, const Tensor& target,
                 const std::vector<uint8_t>& frame_mask = {});
// Same average restricted to the listed lip vertices.
ag::Var rlv_loss(const ag::Var& pred, const Tensor& target,
                 const std::vector<int64_t>& lip_indices,
                 const std::vector<uint8_t>& frame_mask = {});

}  // namespace avg::anim
