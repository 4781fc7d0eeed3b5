#include "avg/nn.hpp"

#include <cmath>

#include "avg/error.hpp"

namespace avg::nn {

ag::Var ParamStore::create(const std::string& name, Tensor init) {
  AVG_CHECK(!name.empty(), ContractError, "parameter name must not be empty");
  AVG_CHECK(!has(name), ContractError, "duplicate parameter name: " + name);
  ag::Var v = ag::Var::param(std::move(init));
  order_.push_back(name);
  index_.emplace(name, v);
  return v;
}

ag::Var ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  AVG_CHECK(it != index_.end(), ContractError, "unknown parameter: " + name);
  return it->second;
}

int64_t ParamStore::parameter_count() const {
  int64_t n = 0;
  for (const auto& name : order_) n += index_.at(name).value().numel();
  return n;
}

void ParamStore::zero_grads() {
  for (const auto& name : order_) {
    auto it = index_.find(name);
    it->second.zero_grad();
  }
}

ag::Var Linear::apply(const ag::Var& x) const { return ag::add_rowvec(ag::matmul(x, w), b); }

Linear make_linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, Rng& rng) {
  AVG_CHECK(in >= 1 && out >= 1, ContractError, "linear sizes must be positive");
  Linear l;
  l.w = ps.create(name + ".w", Tensor::randn({in, out}, rng, xavier_stddev(in, out)));
  l.b = ps.create(name + ".b", Tensor({out}));
  return l;
}

Linear make_zero_linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out) {
  AVG_CHECK(in >= 1 && out >= 1, ContractError, "linear sizes must be positive");
  Linear l;
  l.w = ps.create(name + ".w", Tensor({in, out}));
  l.b = ps.create(name + ".b", Tensor({out}));
  return l;
}

Tensor sinusoid_table(int64_t rows, int64_t dim) {
  AVG_CHECK(rows >= 1, ContractError, "position table needs at least one row");
  AVG_CHECK(dim >= 2 && dim % 2 == 0, ContractError, "position table dim must be even");
  Tensor t({rows, dim});
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t i = 0; i < dim / 2; ++i) {
      double angle = double(r) * std::pow(10000.0, -2.0 * double(i) / double(dim));
      t.at(r, 2 * i) = std::sin(angle);
      t.at(r, 2 * i + 1) = std::cos(angle);
    }
  }
  return t;
}

ag::Var add_positions(const ag::Var& x) {
  const Tensor& X = x.value();
  AVG_CHECK(X.ndim() == 2, ContractError, "add_positions expects [T, dim]");
  return ag::add_const(x, sinusoid_table(X.dim(0), X.dim(1)));
}

ag::Var LayerNorm::apply(const ag::Var& x) const { return ag::layer_norm_rows(x, gain, bias); }

LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int64_t dim) {
  LayerNorm ln;
  ln.gain = ps.create(name + ".gain", Tensor::full({dim}, 1.0));
  ln.bias = ps.create(name + ".bias", Tensor({dim}));
  return ln;
}

ag::Var Embedding::lookup(const std::vector<int64_t>& ids) const {
  return ag::rows_select(table, ids);
}

Embedding make_embedding(ParamStore& ps, const std::string& name, int64_t count, int64_t dim,
                         Rng& rng) {
  AVG_CHECK(count >= 1 && dim >= 1, ContractError, "embedding sizes must be positive");
  Embedding e;
  e.table = ps.create(name + ".table", Tensor::randn({count, dim}, rng, 0.02));
  return e;
}

ag::Var Attention::apply(const ag::Var& query, const ag::Var& memory, bool causal) const {
  const Tensor& Q = query.value();
  const Tensor& M = memory.value();
  AVG_CHECK(Q.ndim() == 2 && M.ndim() == 2, ContractError, "attention expects 2-D sequences");
  int64_t dim = q.w.value().dim(0);
  AVG_CHECK(Q.dim(1) == dim && M.dim(1) == dim, ContractError, "attention input width mismatch");
  AVG_CHECK(!causal || Q.dim(0) == M.dim(0), ContractError,
            "causal attention requires matching lengths");
  int64_t dh = dim / heads;

  ag::Var qp = q.apply(query), kp = k.apply(memory), vp = v.apply(memory);
  Tensor mask;
  if (causal) {
    mask = Tensor({Q.dim(0), M.dim(0)});
    for (int64_t i = 0; i < Q.dim(0); ++i)
      for (int64_t j = i + 1; j < M.dim(0); ++j) mask.at(i, j) = -1e30;
  }
  std::vector<ag::Var> outs;
  outs.reserve(size_t(heads));
  for (int64_t h = 0; h < heads; ++h) {
    ag::Var qh = ag::slice_cols(qp, h * dh, (h + 1) * dh);
    ag::Var kh = ag::slice_cols(kp, h * dh, (h + 1) * dh);
    ag::Var vh = ag::slice_cols(vp, h * dh, (h + 1) * dh);
    ag::Var scores = ag::mul_scalar(ag::matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
    if (causal) scores = ag::add_const(scores, mask);
    outs.push_back(ag::matmul(ag::softmax_rows(scores), vh));
  }
  return o.apply(ag::concat_cols(outs));
}

Attention make_attention(ParamStore& ps, const std::string& name, int64_t dim, int64_t heads,
                         Rng& rng) {
  AVG_CHECK(heads >= 1 && dim % heads == 0, ContractError,
            "attention dim must be divisible by heads");
  Attention a;
  a.heads = heads;
  a.q = make_linear(ps, name + ".q", dim, dim, rng);
  a.k = make_linear(ps, name + ".k", dim, dim, rng);
  a.v = make_linear(ps, name + ".v", dim, dim, rng);
  a.o = make_linear(ps, name + ".o", dim, dim, rng);
  return a;
}

ag::Var FeedForward::apply(const ag::Var& x) const { return down.apply(ag::relu(up.apply(x))); }

FeedForward make_feed_forward(ParamStore& ps, const std::string& name, int64_t dim,
                              int64_t hidden, Rng& rng) {
  FeedForward f;
  f.up = make_linear(ps, name + ".up", dim, hidden, rng);
  f.down = make_linear(ps, name + ".down", hidden, dim, rng);
  return f;
}

ag::Var TransformerLayer::apply(const ag::Var& x, const ag::Var* memory, Rng& rng) const {
  AVG_CHECK(has_cross == (memory != nullptr), ContractError,
            "layer memory argument does not match its configuration");
  ag::Var xs = ln_self.apply(x);
  ag::Var h = ag::add(x, ag::dropout(self_attn.apply(xs, xs, causal_self), dropout, rng));
  if (has_cross)
    h = ag::add(h, ag::dropout(cross_attn.apply(ln_cross.apply(h), *memory, false), dropout,
                               rng));
  return ag::add(h, ag::dropout(ff.apply(ln_ff.apply(h)), dropout, rng));
}

TransformerLayer make_transformer_layer(ParamStore& ps, const std::string& name, int64_t dim,
                                        int64_t heads, int64_t ff_hidden, double dropout,
                                        bool causal_self, bool has_cross, Rng& rng) {
  AVG_CHECK(dropout >= 0.0 && dropout < 1.0, ContractError, "dropout must lie in [0, 1)");
  TransformerLayer t;
  t.dropout = dropout;
  t.causal_self = causal_self;
  t.has_cross = has_cross;
  t.ln_self = make_layer_norm(ps, name + ".ln_self", dim);
  t.self_attn = make_attention(ps, name + ".self", dim, heads, rng);
  if (has_cross) {
    t.ln_cross = make_layer_norm(ps, name + ".ln_cross", dim);
    t.cross_attn = make_attention(ps, name + ".cross", dim, heads, rng);
  }
  t.ln_ff = make_layer_norm(ps, name + ".ln_ff", dim);
  t.ff = make_feed_forward(ps, name + ".ff", dim, ff_hidden, rng);
  return t;
}

}  // namespace avg::nn
