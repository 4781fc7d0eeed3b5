#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "avg/autograd.hpp"
#include "avg/rng.hpp"
#include "avg/tensor.hpp"

namespace avg::nn {

// Named trainable tensors in registration order. Optimizers walk entries();
// checkpoints store name -> value. Names are unique per store.
class ParamStore {
 public:
  ag::Var create(const std::string& name, Tensor init);
  ag::Var at(const std::string& name) const;  // shared handle, cheap to copy
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  int64_t parameter_count() const;
  void zero_grads();

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, ag::Var> index_;
};

inline double xavier_stddev(int64_t fan_in, int64_t fan_out) {
  return std::sqrt(2.0 / double(fan_in + fan_out));
}

struct Linear {
  ag::Var w;  // [in, out]
  ag::Var b;  // [out]
  ag::Var apply(const ag::Var& x) const;  // [n, in] -> [n, out]
};
Linear make_linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng);
// Zero weights and bias; used for output heads that must start at identity.
Linear make_zero_linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out);

// Interleaved sine/cosine position table: [:, 2i] = sin(t / 10000^(2i/dim)),
// [:, 2i+1] = cos(same angle). dim must be even.
Tensor sinusoid_table(int64_t rows, int64_t dim);
ag::Var add_positions(const ag::Var& x);  // x [T, dim] plus the table, x first

struct LayerNorm {
  ag::Var gain, bias;
  ag::Var apply(const ag::Var& x) const;
};
LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int64_t dim);

struct Embedding {
  ag::Var table;  // [count, dim]
  ag::Var lookup(const std::vector<int64_t>& ids) const;  // [ids.size(), dim]
};
Embedding make_embedding(ParamStore& ps, const std::string& name, int64_t count, int64_t dim,
                         Rng& rng);

// Scaled dot-product attention over full sequences (no batch axis; callers
// run one sequence at a time). Causal masking zeroes attention to keys
// strictly after the query position, exactly.
struct Attention {
  Linear q, k, v, o;
  int64_t heads = 1;
  ag::Var apply(const ag::Var& query, const ag::Var& memory, bool causal) const;
};
Attention make_attention(ParamStore& ps, const std::string& name, int64_t dim, int64_t heads,
                         Rng& rng);

struct FeedForward {
  Linear up, down;
  ag::Var apply(const ag::Var& x) const;  // relu between
};
FeedForward make_feed_forward(ParamStore& ps, const std::string& name, int64_t dim,
                              int64_t hidden, Rng& rng);

// Pre-norm residual block: self-attention, optional cross-attention to a
// memory sequence, feed-forward. Dropout applies to each residual branch and
// is identity whenever gradients are off.
struct TransformerLayer {
  LayerNorm ln_self, ln_cross, ln_ff;
  Attention self_attn, cross_attn;
  FeedForward ff;
  double dropout = 0.0;
  bool causal_self = false;
  bool has_cross = false;
  ag::Var apply(const ag::Var& x, const ag::Var* memory, Rng& rng) const;
};
TransformerLayer make_transformer_layer(ParamStore& ps, const std::string& name, int64_t dim,
                                        int64_t heads, int64_t ff_hidden, double dropout,
                                        bool causal_self, bool has_cross, Rng& rng);

}  // namespace avg::nn
