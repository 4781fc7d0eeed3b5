#pragma once

#include <cstdint>
#include <vector>

#include "avg/autograd.hpp"
#include "avg/config.hpp"
#include "avg/nn.hpp"
#include "avg/rng.hpp"
#include "avg/tensor.hpp"

namespace avg::expert {

struct ExpertConfig {
  int64_t width = 192;          // fused feature width
  int64_t visual_channels = 8;  // 3-D conv channels
  int64_t decoder_layers = 3;
  int64_t heads = 4;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  int64_t crop_size = 88;     // square lip-crop input
  int64_t feature_dim = 64;   // audio feature width
  void validate() const;
};
ExpertConfig expert_config(const cfg::Config& c);

struct ExpertOutput {
  ag::Var ctc_logits;  // [T, kCtcClasses]
  ag::Var dec_logits;  // [len(target)+1, kDecClasses], teacher forced
  ag::Var features;    // [T, width] fused audio-visual memory
};

// Speech-informed lip reader: a 3-D convolutional front-end over the crop
// sequence, a linear audio branch at the same frame rate, a fusion MLP, a
// temporal convolution torso feeding a CTC head, and an attention decoder
// over characters. `visual_only` replaces the audio branch with exact zeros
// so the output provably carries no audio information.
class Expert {
 public:
  Expert(const ExpertConfig& c, nn::ParamStore* ps, Rng& rng);

  // crops: [T, crop, crop] in [0,1]; audio: [T, feature_dim] (may be empty
  // when visual_only); target: token ids the decoder is teacher-forced on.
  ExpertOutput forward(const ag::Var& crops, const Tensor& audio,
                       const std::vector<int64_t>& target, bool visual_only,
                       Rng& drop_rng) const;

  // Autoregressive argmax decode until the end token; `cap` bounds the
  // output length (0 means twice the frame count). Gradient-free.
  std::vector<int64_t> decode_greedy(const Tensor& crops, const Tensor& audio,
                                     bool visual_only, int64_t cap = 0) const;

  const ExpertConfig& config() const { return cfg_; }

 private:
  ag::Var encode(const ag::Var& crops, const Tensor& audio, bool visual_only,
                 Rng& drop_rng) const;  // -> [T, width] memory
  ag::Var decode_step(const ag::Var& memory, const std::vector<int64_t>& tokens,
                      Rng& drop_rng) const;  // -> [tokens.size(), kDecClasses]

  ExpertConfig cfg_;
  ag::Var conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  nn::Linear vis_proj_, aud_proj_;
  nn::Linear fuse_up_, fuse_down_;
  ag::Var temp1_w_, temp1_b_, temp2_w_, temp2_b_;
  nn::LayerNorm mem_ln_;
  nn::Embedding tok_;
  std::vector<nn::TransformerLayer> dec_layers_;
  nn::LayerNorm dec_ln_;
  nn::Linear ctc_head_, dec_head_;
};

// Teacher-forcing helpers: decoder input row i sees tokens[i], the matching
// label is the next symbol, closing with the end token.
std::vector<int64_t> decoder_inputs(const std::vector<int64_t>& target);
std::vector<int64_t> decoder_labels(const std::vector<int64_t>& target);

// Collapse a per-frame argmax path: merge repeats, then drop blanks.
std::vector<int64_t> ctc_collapse(const std::vector<int64_t>& path, int64_t blank);
// Per-row argmax then collapse.
std::vector<int64_t> ctc_greedy(const Tensor& ctc_logits, int64_t blank);

// Trim or edge-pad rows so a feature matrix lines up with the frame count.
Tensor fit_rows(const Tensor& x, int64_t rows);

}  // namespace avg::expert
