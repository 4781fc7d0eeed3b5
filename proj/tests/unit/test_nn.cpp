#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "avg/error.hpp"
#include "avg/nn.hpp"

using namespace avg;

namespace {

Tensor randu(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Plain-loop single-sequence attention, the oracle for Attention::apply.
Tensor attention_by_hand(const Tensor& query, const Tensor& memory, const nn::Attention& at,
                         bool causal) {
  auto lin = [](const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y({x.dim(0), w.dim(1)});
    for (int64_t i = 0; i < x.dim(0); ++i)
      for (int64_t j = 0; j < w.dim(1); ++j) {
        double s = b[j];
        for (int64_t k = 0; k < w.dim(0); ++k) s += x.at(i, k) * w.at(k, j);
        y.at(i, j) = s;
      }
    return y;
  };
  Tensor qp = lin(query, at.q.w.value(), at.q.b.value());
  Tensor kp = lin(memory, at.k.w.value(), at.k.b.value());
  Tensor vp = lin(memory, at.v.w.value(), at.v.b.value());
  int64_t Tq = query.dim(0), Tk = memory.dim(0), dim = qp.dim(1);
  int64_t dh = dim / at.heads;
  Tensor mixed({Tq, dim});
  for (int64_t h = 0; h < at.heads; ++h) {
    for (int64_t i = 0; i < Tq; ++i) {
      std::vector<double> score(size_t(Tk), -1e300);
      double smax = -1e300;
      for (int64_t j = 0; j < Tk; ++j) {
        if (causal && j > i) continue;
        double s = 0.0;
        for (int64_t c = 0; c < dh; ++c) s += qp.at(i, h * dh + c) * kp.at(j, h * dh + c);
        s /= std::sqrt(double(dh));
        score[size_t(j)] = s;
        smax = std::max(smax, s);
      }
      double z = 0.0;
      for (int64_t j = 0; j < Tk; ++j)
        if (score[size_t(j)] > -1e299) z += std::exp(score[size_t(j)] - smax);
      for (int64_t j = 0; j < Tk; ++j) {
        if (score[size_t(j)] <= -1e299) continue;
        double w = std::exp(score[size_t(j)] - smax) / z;
        for (int64_t c = 0; c < dh; ++c) mixed.at(i, h * dh + c) += w * vp.at(j, h * dh + c);
      }
    }
  }
  return lin(mixed, at.o.w.value(), at.o.b.value());
}

}  // namespace

TEST_CASE("param store tracks names, order and sizes") {
  nn::ParamStore ps;
  Rng rng(1);
  ps.create("b.w", randu({2, 3}, rng));
  ps.create("a.w", randu({4}, rng));
  CHECK(ps.names() == std::vector<std::string>{"b.w", "a.w"});
  CHECK(ps.parameter_count() == 10);
  CHECK(ps.has("a.w"));
  CHECK(!ps.has("c"));
  CHECK_THROWS_AS(ps.create("a.w", Tensor({1})), ContractError);
  CHECK_THROWS_AS(ps.at("missing"), ContractError);

  ag::Var v = ps.at("a.w");
  ag::backward(ag::sum(ag::mul(v, v)));
  CHECK(v.grad().numel() == 4);
  ps.zero_grads();
  for (int64_t i = 0; i < 4; ++i) CHECK(v.grad()[i] == 0.0);
}

TEST_CASE("linear layer matches a hand product and passes finite differences") {
  nn::ParamStore ps;
  Rng rng(2);
  nn::Linear l = nn::make_linear(ps, "lin", 3, 2, rng);
  Tensor x = randu({4, 3}, rng);
  Tensor y = l.apply(ag::Var::constant(x)).value();
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 2; ++j) {
      double s = l.b.value()[j];
      for (int64_t k = 0; k < 3; ++k) s += x.at(i, k) * l.w.value().at(k, j);
      CHECK(y.at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }

  auto fn = [&](const ag::Var& v) { return ag::sum(ag::tanh_op(l.apply(v))); };
  CHECK(ag::gradient_check(fn, x, 1e-6) < 1e-6);

  nn::Linear z = nn::make_zero_linear(ps, "head", 5, 3);
  for (int64_t i = 0; i < z.w.value().numel(); ++i) CHECK(z.w.value()[i] == 0.0);
  CHECK(z.w.value().dim(0) == 5);
  CHECK(z.b.value().numel() == 3);
}

TEST_CASE("xavier initialization spreads variance by fan sizes") {
  CHECK(nn::xavier_stddev(3, 2) == doctest::Approx(std::sqrt(0.4)));
  nn::ParamStore ps;
  Rng rng(3);
  nn::Linear l = nn::make_linear(ps, "wide", 64, 64, rng);
  double ss = 0.0;
  for (int64_t i = 0; i < l.w.value().numel(); ++i) ss += l.w.value()[i] * l.w.value()[i];
  double var = ss / double(l.w.value().numel());
  CHECK(var == doctest::Approx(2.0 / 128.0).epsilon(0.2));
}

TEST_CASE("sinusoid table holds pinned trig values") {
  Tensor t = nn::sinusoid_table(6, 4);
  CHECK(t.at(0, 0) == 0.0);
  CHECK(t.at(0, 1) == 1.0);
  CHECK(t.at(0, 2) == 0.0);
  CHECK(t.at(0, 3) == 1.0);
  CHECK(t.at(3, 0) == doctest::Approx(std::sin(3.0)).epsilon(1e-12));
  CHECK(t.at(3, 1) == doctest::Approx(std::cos(3.0)).epsilon(1e-12));
  CHECK(t.at(5, 2) == doctest::Approx(std::sin(5.0 / 100.0)).epsilon(1e-12));
  CHECK(t.at(5, 3) == doctest::Approx(std::cos(5.0 / 100.0)).epsilon(1e-12));
  for (int64_t i = 0; i < t.numel(); ++i) CHECK(std::abs(t[i]) <= 1.0);
  CHECK_THROWS_AS(nn::sinusoid_table(4, 3), ContractError);

  Rng rng(4);
  Tensor x = randu({6, 4}, rng);
  Tensor y = nn::add_positions(ag::Var::constant(x)).value();
  for (int64_t r = 0; r < 6; ++r)
    for (int64_t c = 0; c < 4; ++c)
      CHECK(y.at(r, c) == doctest::Approx(x.at(r, c) + t.at(r, c)).epsilon(1e-12));
}

TEST_CASE("attention reproduces the loop oracle for self and cross") {
  nn::ParamStore ps;
  Rng rng(5);
  nn::Attention at = nn::make_attention(ps, "att", 8, 2, rng);
  Tensor xq = randu({3, 8}, rng);
  Tensor xm = randu({5, 8}, rng);

  for (bool causal : {false, true}) {
    const Tensor& mem = causal ? xq : xm;
    Tensor got =
        at.apply(ag::Var::constant(xq), ag::Var::constant(mem), causal).value();
    Tensor want = attention_by_hand(xq, mem, at, causal);
    REQUIRE(got.numel() == want.numel());
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(nn::make_attention(ps, "bad", 8, 3, rng), ContractError);
  CHECK_THROWS_AS(at.apply(ag::Var::constant(xq), ag::Var::constant(xm), true), ContractError);
}

TEST_CASE("causal attention is exactly blind to the future") {
  nn::ParamStore ps;
  Rng rng(6);
  nn::Attention at = nn::make_attention(ps, "att", 8, 4, rng);
  Tensor x = randu({6, 8}, rng);
  Tensor y = at.apply(ag::Var::constant(x), ag::Var::constant(x), true).value();

  Tensor x2 = x;
  for (int64_t c = 0; c < 8; ++c) {
    x2.at(4, c) += 3.0;
    x2.at(5, c) -= 2.0;
  }
  Tensor y2 = at.apply(ag::Var::constant(x2), ag::Var::constant(x2), true).value();
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t c = 0; c < 8; ++c) REQUIRE(y.at(t, c) == y2.at(t, c));
  double moved = 0.0;
  for (int64_t c = 0; c < 8; ++c) moved += std::abs(y.at(5, c) - y2.at(5, c));
  CHECK(moved > 1e-6);
}

TEST_CASE("attention gradients match finite differences") {
  nn::ParamStore ps;
  Rng rng(7);
  nn::Attention at = nn::make_attention(ps, "att", 4, 2, rng);
  Tensor x = randu({3, 4}, rng);

  auto self_fn = [&](const ag::Var& v) { return ag::sum(at.apply(v, v, true)); };
  CHECK(ag::gradient_check(self_fn, x, 1e-6) < 1e-6);

  Tensor mem = randu({4, 4}, rng);
  auto cross_fn = [&](const ag::Var& v) {
    return ag::sum(at.apply(v, ag::Var::constant(mem), false));
  };
  CHECK(ag::gradient_check(cross_fn, x, 1e-6) < 1e-6);

  // and through a weight matrix
  Tensor w0 = at.v.w.value();
  auto w_fn = [&](const ag::Var& v) {
    nn::Attention a2 = at;
    a2.v.w = v;
    return ag::sum(a2.apply(ag::Var::constant(x), ag::Var::constant(mem), false));
  };
  CHECK(ag::gradient_check(w_fn, w0, 1e-6) < 1e-6);
}

TEST_CASE("embedding lookup selects rows and accumulates duplicate grads") {
  nn::ParamStore ps;
  Rng rng(8);
  nn::Embedding e = nn::make_embedding(ps, "emb", 5, 3, rng);
  ag::Var out = e.lookup({4, 1, 4});
  CHECK(out.value().dim(0) == 3);
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(out.value().at(0, c) == e.table.value().at(4, c));
    CHECK(out.value().at(1, c) == e.table.value().at(1, c));
  }
  ag::backward(ag::sum(out));
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(e.table.grad().at(4, c) == 2.0);
    CHECK(e.table.grad().at(1, c) == 1.0);
    CHECK(e.table.grad().at(0, c) == 0.0);
  }
}

TEST_CASE("transformer layer keeps shape and respects causality") {
  nn::ParamStore ps;
  Rng rng(9);
  nn::TransformerLayer dec =
      nn::make_transformer_layer(ps, "dec", 8, 2, 16, 0.0, true, true, rng);
  Tensor x = randu({5, 8}, rng);
  Tensor mem = randu({7, 8}, rng);
  ag::Var mv = ag::Var::constant(mem);
  Rng drop(0);
  Tensor y = dec.apply(ag::Var::constant(x), &mv, drop).value();
  CHECK(y.dim(0) == 5);
  CHECK(y.dim(1) == 8);

  Tensor x2 = x;
  for (int64_t c = 0; c < 8; ++c) x2.at(4, c) *= -1.5;
  Tensor y2 = dec.apply(ag::Var::constant(x2), &mv, drop).value();
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t c = 0; c < 8; ++c) REQUIRE(y.at(t, c) == y2.at(t, c));

  CHECK_THROWS_AS(dec.apply(ag::Var::constant(x), nullptr, drop), ContractError);
  nn::TransformerLayer enc =
      nn::make_transformer_layer(ps, "enc", 8, 2, 16, 0.0, false, false, rng);
  CHECK_THROWS_AS(enc.apply(ag::Var::constant(x), &mv, drop), ContractError);
}

TEST_CASE("transformer stack gradients match finite differences") {
  nn::ParamStore ps;
  Rng rng(10);
  nn::TransformerLayer l1 =
      nn::make_transformer_layer(ps, "l1", 4, 2, 8, 0.0, true, false, rng);
  nn::TransformerLayer l2 =
      nn::make_transformer_layer(ps, "l2", 4, 2, 8, 0.0, true, true, rng);
  Tensor x = randu({3, 4}, rng, 0.1, 0.9);
  Tensor mem = randu({4, 4}, rng);

  auto fn = [&](const ag::Var& v) {
    Rng drop(0);
    ag::Var mv = ag::Var::constant(mem);
    ag::Var h = l1.apply(v, nullptr, drop);
    return ag::sum(ag::sigmoid(l2.apply(h, &mv, drop)));
  };
  CHECK(ag::gradient_check(fn, x, 1e-6) < 1e-5);

  auto mem_fn = [&](const ag::Var& v) {
    Rng drop(0);
    ag::Var h = l1.apply(ag::Var::constant(x), nullptr, drop);
    return ag::sum(ag::sigmoid(l2.apply(h, &v, drop)));
  };
  CHECK(ag::gradient_check(mem_fn, mem, 1e-6) < 1e-5);
}

TEST_CASE("dropout branches are live in training mode only") {
  nn::ParamStore ps;
  Rng rng(11);
  nn::TransformerLayer l =
      nn::make_transformer_layer(ps, "l", 8, 2, 16, 0.5, false, false, rng);
  Tensor x = randu({4, 8}, rng);

  Tensor eval_a, eval_b;
  {
    ag::NoGradGuard guard;
    Rng d1(1), d2(2);
    eval_a = l.apply(ag::Var::constant(x), nullptr, d1).value();
    eval_b = l.apply(ag::Var::constant(x), nullptr, d2).value();
  }
  CHECK(std::memcmp(eval_a.data(), eval_b.data(), size_t(eval_a.numel()) * 8) == 0);

  Rng d3(3), d4(4);
  Tensor train_a = l.apply(ag::Var::param(x), nullptr, d3).value();
  Tensor train_b = l.apply(ag::Var::param(x), nullptr, d4).value();
  double diff = 0.0;
  for (int64_t i = 0; i < train_a.numel(); ++i) diff += std::abs(train_a[i] - train_b[i]);
  CHECK(diff > 1e-6);
}
