#include <doctest.h>

#include <cmath>
#include <functional>

#include "avg/autograd.hpp"

using namespace avg;
using namespace avg::ag;

namespace {

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-6;

// Weighted scalar readout so gradient errors cannot cancel across elements.
Var probe(const Var& v) {
  Rng r(999);
  Tensor w = Tensor::randn(v.value().shape(), r);
  return sum(mul_const(v, w));
}

Tensor tdata(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0,
             double offset = 0.0) {
  Rng r(seed);
  Tensor t = Tensor::randn(std::move(shape), r, scale);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] += offset;
  return t;
}

double fd(const std::function<Var(const Var&)>& f, const Tensor& x) {
  return gradient_check(f, x, kStep);
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
  Tensor x = tdata({3, 4}, 1);
  Tensor other = tdata({3, 4}, 2);
  Var c = Var::constant(other);

  CHECK(fd([&](const Var& v) { return probe(add(v, c)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(add(c, v)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(sub(v, c)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(sub(c, v)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(mul(v, c)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(mul(c, v)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(mul(v, v)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(neg(v)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(add_scalar(v, 2.5)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(mul_scalar(v, -1.7)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(add_const(v, other)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(mul_const(v, other)); }, x) < kTol);
}

TEST_CASE("nonlinearity gradients match finite differences") {
  // keep relu inputs away from the kink
  Tensor x = tdata({4, 3}, 3);
  for (int64_t i = 0; i < x.numel(); ++i)
    if (std::abs(x[i]) < 0.1) x[i] = 0.2;

  CHECK(fd([](const Var& v) { return probe(relu(v)); }, x) < kTol);
  CHECK(fd([](const Var& v) { return probe(sigmoid(v)); }, x) < kTol);
  CHECK(fd([](const Var& v) { return probe(tanh_op(v)); }, x) < kTol);
  CHECK(fd([](const Var& v) { return probe(exp_op(v)); }, x) < kTol);

  Tensor pos = tdata({4, 3}, 4, 0.3, 2.0);  // strictly positive
  CHECK(fd([](const Var& v) { return probe(log_op(v)); }, pos) < kTol);
}

TEST_CASE("shape op gradients match finite differences") {
  Tensor x = tdata({3, 4}, 5);
  Tensor y = tdata({2, 4}, 6);
  Var cy = Var::constant(y);

  CHECK(fd([](const Var& v) { return probe(reshape(v, {4, 3})); }, x) < kTol);
  CHECK(fd([](const Var& v) { return probe(transpose2d(v)); }, x) < kTol);
  CHECK(fd([](const Var& v) { return probe(slice_cols(v, 1, 3)); }, x) < kTol);
  CHECK(fd([](const Var& v) { return probe(slice_rows(v, 0, 2)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(concat_rows({v, cy})); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(concat_rows({cy, v})); }, x) < kTol);
  Tensor z = tdata({3, 2}, 7);
  Var cz = Var::constant(z);
  CHECK(fd([&](const Var& v) { return probe(concat_cols({v, cz})); }, x) < kTol);
  // duplicated rows must scatter-add
  CHECK(fd([](const Var& v) { return probe(rows_select(v, {2, 0, 2, 2})); }, x) < kTol);
}

TEST_CASE("linear algebra gradients match finite differences") {
  Tensor A = tdata({2, 3}, 8);
  Tensor B = tdata({3, 4}, 9);
  Tensor Bt = tdata({4, 3}, 10);
  Var cA = Var::constant(A), cB = Var::constant(B), cBt = Var::constant(Bt);

  CHECK(fd([&](const Var& v) { return probe(matmul(v, cB)); }, A) < kTol);
  CHECK(fd([&](const Var& v) { return probe(matmul(cA, v)); }, B) < kTol);
  CHECK(fd([&](const Var& v) { return probe(matmul_nt(v, cBt)); }, A) < kTol);
  CHECK(fd([&](const Var& v) { return probe(matmul_nt(cA, v)); }, Bt) < kTol);

  Tensor X = tdata({3, 4}, 11);
  Tensor row = tdata({4}, 12);
  Tensor col = tdata({3}, 13);
  Var cX = Var::constant(X), crow = Var::constant(row), ccol = Var::constant(col);
  CHECK(fd([&](const Var& v) { return probe(add_rowvec(v, crow)); }, X) < kTol);
  CHECK(fd([&](const Var& v) { return probe(add_rowvec(cX, v)); }, row) < kTol);
  CHECK(fd([&](const Var& v) { return probe(mul_colvec(v, ccol)); }, X) < kTol);
  CHECK(fd([&](const Var& v) { return probe(mul_colvec(cX, v)); }, col) < kTol);
}

TEST_CASE("matmul forward matches a hand-computed product") {
  Var a = Var::constant(Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var b = Var::constant(Tensor::from_vector({3, 2}, {7, 8, 9, 10, 11, 12}));
  Tensor y = matmul(a, b).value();
  CHECK(y.at(0, 0) == doctest::Approx(58));
  CHECK(y.at(0, 1) == doctest::Approx(64));
  CHECK(y.at(1, 0) == doctest::Approx(139));
  CHECK(y.at(1, 1) == doctest::Approx(154));

  Tensor ynt = matmul_nt(a, Var::constant(Tensor::from_vector({2, 3}, {7, 9, 11, 8, 10, 12})))
                   .value();
  CHECK(ynt.at(0, 0) == doctest::Approx(58));
  CHECK(ynt.at(1, 1) == doctest::Approx(154));
}

TEST_CASE("reduction and normalization gradients match finite differences") {
  Tensor x = tdata({3, 5}, 14);

  CHECK(fd([](const Var& v) { return sum(v); }, x) < kTol);
  CHECK(fd([](const Var& v) { return mean(v); }, x) < kTol);
  CHECK(fd([](const Var& v) { return probe(softmax_rows(v)); }, x) < kTol);
  CHECK(fd([](const Var& v) { return probe(log_softmax_rows(v)); }, x) < kTol);

  Tensor gain = tdata({5}, 15, 0.2, 1.0);
  Tensor bias = tdata({5}, 16, 0.2);
  Var cg = Var::constant(gain), cb = Var::constant(bias), cx = Var::constant(x);
  CHECK(fd([&](const Var& v) { return probe(layer_norm_rows(v, cg, cb)); }, x) < 1e-5);
  CHECK(fd([&](const Var& v) { return probe(layer_norm_rows(cx, v, cb)); }, gain) < kTol);
  CHECK(fd([&](const Var& v) { return probe(layer_norm_rows(cx, cg, v)); }, bias) < kTol);
}

TEST_CASE("softmax and layer_norm forward invariants") {
  Tensor x = tdata({4, 6}, 17, 3.0);
  Tensor s = softmax_rows(Var::constant(x)).value();
  Tensor ls = log_softmax_rows(Var::constant(x)).value();
  for (int64_t i = 0; i < 4; ++i) {
    double acc = 0.0, lacc = 0.0;
    for (int64_t j = 0; j < 6; ++j) {
      CHECK(s.at(i, j) > 0.0);
      acc += s.at(i, j);
      lacc += std::exp(ls.at(i, j));
      CHECK(ls.at(i, j) == doctest::Approx(std::log(s.at(i, j))).epsilon(1e-9));
    }
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lacc == doctest::Approx(1.0).epsilon(1e-12));
  }

  Var ones = Var::constant(Tensor::full({6}, 1.0));
  Var zeros = Var::constant(Tensor::zeros({6}));
  Tensor n = layer_norm_rows(Var::constant(x), ones, zeros).value();
  for (int64_t i = 0; i < 4; ++i) {
    double m = 0.0, v = 0.0;
    for (int64_t j = 0; j < 6; ++j) m += n.at(i, j);
    m /= 6.0;
    for (int64_t j = 0; j < 6; ++j) v += (n.at(i, j) - m) * (n.at(i, j) - m);
    v /= 6.0;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("softmax is shift invariant and safe at large magnitudes") {
  Tensor x = Tensor::from_vector({1, 3}, {1000.0, 1001.0, 999.0});
  Tensor s = softmax_rows(Var::constant(x)).value();
  CHECK(s.all_finite());
  Tensor x0 = Tensor::from_vector({1, 3}, {0.0, 1.0, -1.0});
  Tensor s0 = softmax_rows(Var::constant(x0)).value();
  for (int64_t j = 0; j < 3; ++j) CHECK(s[j] == doctest::Approx(s0[j]).epsilon(1e-12));
}

TEST_CASE("conv1d gradients and a hand-computed forward") {
  Tensor x = tdata({6, 2}, 18);
  Tensor w = tdata({3, 2, 3}, 19, 0.5);
  Tensor b = tdata({3}, 20, 0.5);
  Var cx = Var::constant(x), cw = Var::constant(w), cb = Var::constant(b);
  CHECK(fd([&](const Var& v) { return probe(conv1d_same(v, cw, cb)); }, x) < kTol);
  CHECK(fd([&](const Var& v) { return probe(conv1d_same(cx, v, cb)); }, w) < kTol);
  CHECK(fd([&](const Var& v) { return probe(conv1d_same(cx, cw, v)); }, b) < kTol);

  // T=3, one channel, k=3: zero padding at both ends
  Var hx = Var::constant(Tensor::from_vector({3, 1}, {1, 2, 3}));
  Var hw = Var::constant(Tensor::from_vector({1, 1, 3}, {1, 10, 100}));
  Var hb = Var::constant(Tensor::from_vector({1}, {0.5}));
  Tensor hy = conv1d_same(hx, hw, hb).value();
  CHECK(hy.at(0, 0) == doctest::Approx(210.5));
  CHECK(hy.at(1, 0) == doctest::Approx(321.5));
  CHECK(hy.at(2, 0) == doctest::Approx(32.5));
}

TEST_CASE("conv3d gradients at stride 1 and 2") {
  Tensor x = tdata({2, 3, 4, 4}, 21);
  Tensor w = tdata({2, 2, 3, 3, 3}, 22, 0.3);
  Tensor b = tdata({2}, 23, 0.5);
  Var cx = Var::constant(x), cw = Var::constant(w), cb = Var::constant(b);
  for (int s : {1, 2}) {
    CHECK(fd([&](const Var& v) { return probe(conv3d(v, cw, cb, s)); }, x) < kTol);
    CHECK(fd([&](const Var& v) { return probe(conv3d(cx, v, cb, s)); }, w) < kTol);
    CHECK(fd([&](const Var& v) { return probe(conv3d(cx, cw, v, s)); }, b) < kTol);
  }
  CHECK(conv3d(cx, cw, cb, 2).value().shape() == std::vector<int64_t>{2, 3, 2, 2});
}

TEST_CASE("pool_frames averages cells and backpropagates") {
  Tensor x = tdata({2, 3, 4, 6}, 24);
  CHECK(fd([](const Var& v) { return probe(pool_frames(v, 2, 3)); }, x) < kTol);

  Var tiny = Var::constant(Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4}));
  Tensor y = pool_frames(tiny, 1, 1).value();
  CHECK(y.shape() == std::vector<int64_t>{1, 1});
  CHECK(y[0] == doctest::Approx(2.5));
}

TEST_CASE("custom ops integrate with the tape") {
  auto square = [](const Var& a) {
    Tensor v = a.value();
    for (int64_t i = 0; i < v.numel(); ++i) v[i] *= v[i];
    return make_custom({a}, std::move(v),
                       [](const Tensor& og, const std::vector<NodeRef>& in,
                          const std::vector<Tensor*>& gs) {
                         if (!gs[0]) return;
                         for (int64_t i = 0; i < og.numel(); ++i)
                           (*gs[0])[i] += 2.0 * in[0]->value[i] * og[i];
                       });
  };
  Tensor x = tdata({3, 3}, 25);
  CHECK(fd([&](const Var& v) { return probe(square(v)); }, x) < kTol);
}

TEST_CASE("composite graph matches finite differences") {
  Tensor w1 = tdata({4, 8}, 26, 0.5);
  Tensor b1 = tdata({8}, 27, 0.1);
  Tensor w2 = tdata({8, 1}, 28, 0.5);
  Var cw1 = Var::constant(w1), cb1 = Var::constant(b1), cw2 = Var::constant(w2);
  auto net = [&](const Var& v) {
    Var h = tanh_op(add_rowvec(matmul(v, cw1), cb1));
    return mean(matmul(h, cw2));
  };
  CHECK(fd(net, tdata({5, 4}, 29)) < kTol);
  // and through the weights
  Tensor x = tdata({5, 4}, 30);
  Var cx = Var::constant(x);
  auto netw = [&](const Var& v) {
    Var h = tanh_op(add_rowvec(matmul(cx, v), cb1));
    return mean(matmul(h, cw2));
  };
  CHECK(fd(netw, w1) < kTol);
}

TEST_CASE("gradients accumulate across reuse") {
  Var x = Var::param(Tensor::from_vector({2}, {3.0, -1.0}));
  Var y = sum(add(x, x));
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("stop_gradient blocks flow") {
  Var x = Var::param(Tensor::from_vector({2}, {2.0, 5.0}));
  Var y = sum(mul(stop_gradient(x), x));  // d/dx should be the detached values
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(5.0));
}

TEST_CASE("NoGradGuard disables taping") {
  Var x = Var::param(Tensor::from_vector({2}, {1.0, 2.0}));
  NoGradGuard ng;
  Var y = sum(mul(x, x));
  CHECK(!y.requires_grad());
  backward(y);  // no-op on a non-grad root
  CHECK(x.grad().empty());
}

TEST_CASE("backward requires a scalar root") {
  Var x = Var::param(Tensor::from_vector({2}, {1.0, 2.0}));
  Var y = add(x, x);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("dropout masks, rescales and backpropagates the mask") {
  Tensor x = Tensor::full({1, 2000}, 1.0);
  Var vx = Var::param(x);
  Rng r(123);
  Var y = dropout(vx, 0.25, r);
  int64_t zeros = 0;
  for (int64_t i = 0; i < y.value().numel(); ++i) {
    double v = y.value()[i];
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75)));
    if (v == 0.0) ++zeros;
  }
  double rate = static_cast<double>(zeros) / 2000.0;
  CHECK(rate > 0.20);
  CHECK(rate < 0.30);

  backward(sum(y));
  for (int64_t i = 0; i < 2000; ++i)
    CHECK(vx.grad()[i] == doctest::Approx(y.value()[i]));  // grad equals the mask

  // inference mode must be the identity
  NoGradGuard ng;
  Rng r2(123);
  Var z = dropout(vx, 0.25, r2);
  for (int64_t i = 0; i < 4; ++i) CHECK(z.value()[i] == x[i]);
}

TEST_CASE("slice and concat round trips") {
  Tensor x = tdata({4, 6}, 31);
  Var v = Var::constant(x);
  Tensor back = concat_cols({slice_cols(v, 0, 2), slice_cols(v, 2, 6)}).value();
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
  Tensor back2 = concat_rows({slice_rows(v, 0, 1), slice_rows(v, 1, 4)}).value();
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(back2[i] == x[i]);
  Tensor tt = transpose2d(transpose2d(v)).value();
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(tt[i] == x[i]);
}
