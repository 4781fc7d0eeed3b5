#include "avg/animator.hpp"

#include <cmath>
#include <cstring>

#include "avg/error.hpp"

namespace avg::anim {

void AnimatorConfig::validate() const {
  AVG_CHECK(model_dim >= 2 && model_dim % 2 == 0, ConfigError,
            "animator width must be even and at least 2");
  AVG_CHECK(layers >= 1, ConfigError, "animator needs at least one layer");
  AVG_CHECK(heads >= 1 && model_dim % heads == 0, ConfigError,
            "animator width must divide into heads");
  AVG_CHECK(dropout >= 0.0 && dropout < 1.0, ConfigError, "dropout must lie in [0, 1)");
  AVG_CHECK(max_seq >= 1, ConfigError, "max_seq must be positive");
  AVG_CHECK(feature_dim >= 1, ConfigError, "feature_dim must be positive");
  AVG_CHECK(num_subjects >= 1, ConfigError, "animator needs at least one style");
  AVG_CHECK(vertex_count >= 1, ConfigError, "animator needs vertices");
}

AnimatorConfig animator_config(const cfg::Config& c, int64_t num_subjects,
                               int64_t vertex_count) {
  AnimatorConfig a;
  a.model_dim = c.get_int("animator.model_dim");
  a.layers = c.get_int("animator.layers");
  a.heads = c.get_int("animator.heads");
  a.dropout = c.get_num("animator.dropout");
  a.max_seq = c.get_int("animator.max_seq");
  a.feature_dim = c.get_int("audio.feature_dim");
  a.num_subjects = num_subjects;
  a.vertex_count = vertex_count;
  a.validate();
  return a;
}

Animator::Animator(const AnimatorConfig& c, nn::ParamStore* ps, Rng& rng) : cfg_(c) {
  cfg_.validate();
  AVG_CHECK(ps != nullptr, ContractError, "animator needs a parameter store");
  int64_t d = cfg_.model_dim, v3 = cfg_.vertex_count * 3;
  audio_in_ = nn::make_linear(*ps, "anim.audio_in", cfg_.feature_dim, d, rng);
  mem_ln_ = nn::make_layer_norm(*ps, "anim.mem_ln", d);
  style_ = nn::make_embedding(*ps, "anim.style", cfg_.num_subjects, d, rng);
  vert_in_ = nn::make_linear(*ps, "anim.vert_in", v3, d, rng);
  layers_.reserve(size_t(cfg_.layers));
  for (int64_t l = 0; l < cfg_.layers; ++l)
    layers_.push_back(nn::make_transformer_layer(*ps, "anim.layer" + std::to_string(l), d,
                                                 cfg_.heads, 2 * d, cfg_.dropout, true, true,
                                                 rng));
  out_ln_ = nn::make_layer_norm(*ps, "anim.out_ln", d);
  head_ = nn::make_zero_linear(*ps, "anim.head", d, v3);
}

void Animator::check_inputs(const Tensor& features, int64_t frames, const Tensor& tmpl,
                            int64_t style) const {
  AVG_CHECK(features.ndim() == 2 && features.dim(1) == cfg_.feature_dim, ContractError,
            "audio features must be [T, " + std::to_string(cfg_.feature_dim) + "]");
  AVG_CHECK(features.dim(0) >= 1, ContractError, "audio features are empty");
  AVG_CHECK(frames >= 1, ContractError, "need at least one output frame");
  AVG_CHECK(frames <= cfg_.max_seq && features.dim(0) <= cfg_.max_seq, ContractError,
            "sequence exceeds the configured max_seq");
  AVG_CHECK(tmpl.ndim() == 2 && tmpl.dim(0) == cfg_.vertex_count && tmpl.dim(1) == 3,
            ContractError, "template must be [V, 3]");
  AVG_CHECK(style >= 0 && style < cfg_.num_subjects, ContractError,
            "style id out of range");
}

ag::Var Animator::decode(const ag::Var& dec_in, const Tensor& features, const Tensor& tmpl,
                         int64_t style, Rng& drop_rng) const {
  int64_t T = dec_in.value().dim(0);
  ag::Var mem = mem_ln_.apply(nn::add_positions(audio_in_.apply(ag::Var::constant(features))));

  ag::Var style_row = ag::reshape(style_.lookup({style}), {cfg_.model_dim});
  ag::Var x = nn::add_positions(ag::add_rowvec(vert_in_.apply(dec_in), style_row));
  for (const auto& layer : layers_) x = layer.apply(x, &mem, drop_rng);
  ag::Var disp = head_.apply(out_ln_.apply(x));

  Tensor tiled({T, cfg_.vertex_count * 3});
  for (int64_t t = 0; t < T; ++t)
    std::memcpy(tiled.data() + t * tmpl.numel(), tmpl.data(), size_t(tmpl.numel()) * 8);
  return ag::reshape(ag::add_const(disp, tiled), {T, cfg_.vertex_count, 3});
}

ag::Var Animator::forward_teacher(const Tensor& features, const Tensor& target,
                                  const Tensor& tmpl, int64_t style, Rng& drop_rng) const {
  AVG_CHECK(target.ndim() == 3 && target.dim(1) == cfg_.vertex_count && target.dim(2) == 3,
            ContractError, "target must be [T, V, 3]");
  int64_t T = target.dim(0);
  check_inputs(features, T, tmpl, style);
  int64_t v3 = cfg_.vertex_count * 3;
  Tensor dec_in({T, v3});
  for (int64_t t = 1; t < T; ++t)
    for (int64_t i = 0; i < v3; ++i)
      dec_in.at(t, i) = target[(t - 1) * v3 + i] - tmpl[i];
  return decode(ag::Var::constant(dec_in), features, tmpl, style, drop_rng);
}

Tensor Animator::predict(const Tensor& features, int64_t frames, const Tensor& tmpl,
                         int64_t style) const {
  check_inputs(features, frames, tmpl, style);
  ag::NoGradGuard guard;
  Rng drop(0);  // inert: dropout is identity without gradients
  int64_t v3 = cfg_.vertex_count * 3;
  Tensor out({frames, cfg_.vertex_count, 3});
  Tensor dec_in({1, v3});
  for (int64_t t = 0; t < frames; ++t) {
    ag::Var pred = decode(ag::Var::constant(dec_in), features, tmpl, style, drop);
    const Tensor& pv = pred.value();
    std::memcpy(out.data() + t * v3, pv.data() + t * v3, size_t(v3) * 8);
    if (t + 1 < frames) {
      Tensor next({t + 2, v3});
      std::memcpy(next.data(), dec_in.data(), size_t(dec_in.numel()) * 8);
      for (int64_t i = 0; i < v3; ++i) next.at(t + 1, i) = pv[t * v3 + i] - tmpl[i];
      dec_in = std::move(next);
    }
  }
  return out;
}

namespace {

ag::Var masked_mean_sq(const ag::Var& diff2, const std::vector<uint8_t>& frame_mask,
                       int64_t per_frame) {
  int64_t T = diff2.value().dim(0);
  double valid = 0.0;
  Tensor mask({T});
  if (frame_mask.empty()) {
    for (int64_t t = 0; t < T; ++t) mask[t] = 1.0;
    valid = double(T);
  } else {
    AVG_CHECK(int64_t(frame_mask.size()) == T, ContractError,
              "frame mask length does not match prediction");
    for (int64_t t = 0; t < T; ++t) {
      mask[t] = frame_mask[size_t(t)] ? 1.0 : 0.0;
      valid += mask[t];
    }
    AVG_CHECK(valid > 0.0, ContractError, "loss mask keeps no frames");
  }
  ag::Var masked = ag::mul_colvec(diff2, ag::Var::constant(mask));
  return ag::mul_scalar(ag::sum(masked), 1.0 / (valid * double(per_frame)));
}

}  // namespace

ag::Var mse_loss(const ag::Var& pred, const Tensor& target,
                 const std::vector<uint8_t>& frame_mask) {
  const Tensor& P = pred.value();
  AVG_CHECK(P.ndim() == 3 && P.same_shape(target), ContractError,
            "mse_loss expects matching [T, V, 3] tensors");
  int64_t T = P.dim(0), per_frame = P.dim(1) * 3;
  Tensor neg(target.shape());
  for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -target[i];
  ag::Var diff = ag::add_const(pred, neg);
  ag::Var diff2 = ag::reshape(ag::mul(diff, diff), {T, per_frame});
  return masked_mean_sq(diff2, frame_mask, per_frame);
}

ag::Var rlv_loss(const ag::Var& pred, const Tensor& target,
                 const std::vector<int64_t>& lip_indices,
                 const std::vector<uint8_t>& frame_mask) {
  const Tensor& P = pred.value();
  AVG_CHECK(P.ndim() == 3 && P.same_shape(target), ContractError,
            "rlv_loss expects matching [T, V, 3] tensors");
  AVG_CHECK(!lip_indices.empty(), ContractError, "rlv_loss needs lip vertices");
  int64_t T = P.dim(0), V = P.dim(1), L = int64_t(lip_indices.size());
  std::vector<int64_t> rows;
  rows.reserve(size_t(T * L));
  for (int64_t t = 0; t < T; ++t)
    for (int64_t li : lip_indices) {
      AVG_CHECK(li >= 0 && li < V, ContractError, "lip index out of range");
      rows.push_back(t * V + li);
    }
  ag::Var lips = ag::rows_select(ag::reshape(pred, {T * V, 3}), rows);  // [T*L, 3]
  Tensor sub({T * L, 3});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t k = 0; k < L; ++k)
      for (int64_t c = 0; c < 3; ++c)
        sub.at(t * L + k, c) = -target.at(t, lip_indices[size_t(k)], c);
  ag::Var diff = ag::add_const(lips, sub);
  ag::Var diff2 = ag::reshape(ag::mul(diff, diff), {T, L * 3});
  return masked_mean_sq(diff2, frame_mask, L * 3);
}

}  // namespace avg::anim
