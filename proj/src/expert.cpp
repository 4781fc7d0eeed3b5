#include "avg/expert.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "avg/error.hpp"
#include "avg/lang.hpp"

namespace avg::expert {

void ExpertConfig::validate() const {
  AVG_CHECK(width >= 2 && width % 2 == 0, ConfigError, "expert width must be even");
  AVG_CHECK(heads >= 1 && width % heads == 0, ConfigError,
            "expert width must divide into heads");
  AVG_CHECK(visual_channels >= 1, ConfigError, "expert needs conv channels");
  AVG_CHECK(decoder_layers >= 1, ConfigError, "expert needs decoder layers");
  AVG_CHECK(dropout >= 0.0 && dropout < 1.0, ConfigError, "dropout must lie in [0, 1)");
  AVG_CHECK(label_smoothing >= 0.0 && label_smoothing < 1.0, ConfigError,
            "label smoothing must lie in [0, 1)");
  AVG_CHECK(crop_size >= 8, ConfigError, "crop size must be at least 8");
  AVG_CHECK(feature_dim >= 1, ConfigError, "feature_dim must be positive");
}

ExpertConfig expert_config(const cfg::Config& c) {
  ExpertConfig e;
  e.width = c.get_int("expert.width");
  e.visual_channels = c.get_int("expert.visual_channels");
  e.decoder_layers = c.get_int("expert.decoder_layers");
  e.heads = c.get_int("expert.heads");
  e.dropout = c.get_num("expert.dropout");
  e.label_smoothing = c.get_num("expert.label_smoothing");
  e.crop_size = c.get_int("render.crop_size");
  e.feature_dim = c.get_int("audio.feature_dim");
  e.validate();
  return e;
}

Expert::Expert(const ExpertConfig& c, nn::ParamStore* ps, Rng& rng) : cfg_(c) {
  cfg_.validate();
  AVG_CHECK(ps != nullptr, ContractError, "expert needs a parameter store");
  int64_t ch = cfg_.visual_channels, w = cfg_.width;
  conv1_w_ = ps->create("expert.conv1.w",
                        Tensor::randn({ch, 1, 3, 3, 3}, rng, nn::xavier_stddev(27, ch * 27)));
  conv1_b_ = ps->create("expert.conv1.b", Tensor({ch}));
  conv2_w_ = ps->create(
      "expert.conv2.w", Tensor::randn({ch, ch, 3, 3, 3}, rng, nn::xavier_stddev(ch * 27, ch * 27)));
  conv2_b_ = ps->create("expert.conv2.b", Tensor({ch}));
  vis_proj_ = nn::make_linear(*ps, "expert.vis_proj", ch * 4, w, rng);
  aud_proj_ = nn::make_linear(*ps, "expert.aud_proj", cfg_.feature_dim, w, rng);
  fuse_up_ = nn::make_linear(*ps, "expert.fuse_up", 2 * w, w, rng);
  fuse_down_ = nn::make_linear(*ps, "expert.fuse_down", w, w, rng);
  temp1_w_ = ps->create("expert.temp1.w", Tensor::randn({w, w, 5}, rng, nn::xavier_stddev(w * 5, w)));
  temp1_b_ = ps->create("expert.temp1.b", Tensor({w}));
  temp2_w_ = ps->create("expert.temp2.w", Tensor::randn({w, w, 3}, rng, nn::xavier_stddev(w * 3, w)));
  temp2_b_ = ps->create("expert.temp2.b", Tensor({w}));
  mem_ln_ = nn::make_layer_norm(*ps, "expert.mem_ln", w);
  tok_ = nn::make_embedding(*ps, "expert.tok", lang::kDecClasses, w, rng);
  dec_layers_.reserve(size_t(cfg_.decoder_layers));
  for (int64_t l = 0; l < cfg_.decoder_layers; ++l)
    dec_layers_.push_back(nn::make_transformer_layer(*ps, "expert.dec" + std::to_string(l), w,
                                                     cfg_.heads, 2 * w, cfg_.dropout, true,
                                                     true, rng));
  dec_ln_ = nn::make_layer_norm(*ps, "expert.dec_ln", w);
  ctc_head_ = nn::make_linear(*ps, "expert.ctc_head", w, lang::kCtcClasses, rng);
  dec_head_ = nn::make_linear(*ps, "expert.dec_head", w, lang::kDecClasses, rng);
}

ag::Var Expert::encode(const ag::Var& crops, const Tensor& audio, bool visual_only,
                       Rng& drop_rng) const {
  const Tensor& C = crops.value();
  AVG_CHECK(C.ndim() == 3 && C.dim(1) == cfg_.crop_size && C.dim(2) == cfg_.crop_size,
            ContractError, "expert crops must be [T, crop, crop]");
  int64_t T = C.dim(0);
  AVG_CHECK(T >= 1, ContractError, "expert needs at least one frame");
  if (!visual_only)
    AVG_CHECK(audio.ndim() == 2 && audio.dim(0) == T && audio.dim(1) == cfg_.feature_dim,
              ContractError, "expert audio must be [T, feature_dim]");

  ag::Var x = ag::reshape(crops, {1, T, cfg_.crop_size, cfg_.crop_size});
  x = ag::relu(ag::conv3d(x, conv1_w_, conv1_b_, 2));
  x = ag::relu(ag::conv3d(x, conv2_w_, conv2_b_, 2));
  ag::Var vis = vis_proj_.apply(ag::pool_frames(x, 2, 2));  // [T, width]

  ag::Var aud = visual_only ? ag::Var::constant(Tensor({T, cfg_.width}))
                            : aud_proj_.apply(ag::Var::constant(audio));
  ag::Var fused = fuse_down_.apply(ag::relu(fuse_up_.apply(ag::concat_cols({vis, aud}))));
  fused = ag::dropout(fused, cfg_.dropout, drop_rng);
  fused = ag::relu(ag::conv1d_same(fused, temp1_w_, temp1_b_));
  fused = ag::relu(ag::conv1d_same(fused, temp2_w_, temp2_b_));
  return mem_ln_.apply(nn::add_positions(fused));
}

ag::Var Expert::decode_step(const ag::Var& memory, const std::vector<int64_t>& tokens,
                            Rng& drop_rng) const {
  for (int64_t id : tokens)
    AVG_CHECK(id >= 0 && id < lang::kDecClasses, ContractError, "decoder token out of range");
  ag::Var x = nn::add_positions(tok_.lookup(tokens));
  for (const auto& layer : dec_layers_) x = layer.apply(x, &memory, drop_rng);
  return dec_head_.apply(dec_ln_.apply(x));
}

ExpertOutput Expert::forward(const ag::Var& crops, const Tensor& audio,
                             const std::vector<int64_t>& target, bool visual_only,
                             Rng& drop_rng) const {
  ExpertOutput out;
  out.features = encode(crops, audio, visual_only, drop_rng);
  out.ctc_logits = ctc_head_.apply(out.features);
  out.dec_logits = decode_step(out.features, decoder_inputs(target), drop_rng);
  return out;
}

std::vector<int64_t> Expert::decode_greedy(const Tensor& crops, const Tensor& audio,
                                           bool visual_only, int64_t cap) const {
  ag::NoGradGuard guard;
  Rng drop(0);
  ag::Var memory = encode(ag::Var::constant(crops), audio, visual_only, drop);
  if (cap <= 0) cap = 2 * crops.dim(0);
  std::vector<int64_t> tokens{lang::kSos};
  std::vector<int64_t> out;
  for (int64_t step = 0; step < cap; ++step) {
    Tensor logits = decode_step(memory, tokens, drop).value();
    int64_t last = logits.dim(0) - 1, best = 0;
    for (int64_t k = 1; k < logits.dim(1); ++k)
      if (logits.at(last, k) > logits.at(last, best)) best = k;
    if (best == lang::kEos) break;
    out.push_back(best);
    tokens.push_back(best);
  }
  return out;
}

std::vector<int64_t> decoder_inputs(const std::vector<int64_t>& target) {
  std::vector<int64_t> in{lang::kSos};
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

std::vector<int64_t> decoder_labels(const std::vector<int64_t>& target) {
  std::vector<int64_t> lab(target);
  lab.push_back(lang::kEos);
  return lab;
}

std::vector<int64_t> ctc_collapse(const std::vector<int64_t>& path, int64_t blank) {
  std::vector<int64_t> out;
  int64_t prev = blank;
  for (int64_t id : path) {
    if (id != prev && id != blank) out.push_back(id);
    prev = id;
  }
  return out;
}

std::vector<int64_t> ctc_greedy(const Tensor& ctc_logits, int64_t blank) {
  AVG_CHECK(ctc_logits.ndim() == 2, ContractError, "ctc_greedy expects [T, K]");
  std::vector<int64_t> path(size_t(ctc_logits.dim(0)));
  for (int64_t t = 0; t < ctc_logits.dim(0); ++t) {
    int64_t best = 0;
    for (int64_t k = 1; k < ctc_logits.dim(1); ++k)
      if (ctc_logits.at(t, k) > ctc_logits.at(t, best)) best = k;
    path[size_t(t)] = best;
  }
  return ctc_collapse(path, blank);
}

Tensor fit_rows(const Tensor& x, int64_t rows) {
  AVG_CHECK(x.ndim() == 2 && x.dim(0) >= 1, ContractError, "fit_rows expects a [T, D] matrix");
  AVG_CHECK(rows >= 1, ContractError, "fit_rows needs a positive row count");
  if (x.dim(0) == rows) return x;
  Tensor out({rows, x.dim(1)});
  int64_t copy = std::min(rows, x.dim(0));
  std::memcpy(out.data(), x.data(), size_t(copy * x.dim(1)) * 8);
  for (int64_t r = copy; r < rows; ++r)
    std::memcpy(out.data() + r * x.dim(1), x.data() + (x.dim(0) - 1) * x.dim(1),
                size_t(x.dim(1)) * 8);
  return out;
}

}  // namespace avg::expert
