#include <doctest.h>

#include <limits>

#include "avg/tensor.hpp"

using namespace avg;

TEST_CASE("construction and fill") {
  Tensor t({2, 3});
  CHECK(t.ndim() == 2);
  CHECK(t.dim(0) == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.numel() == 6);
  for (int64_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  for (int64_t i = 0; i < 4; ++i) CHECK(f[i] == 2.5);

  Tensor s = Tensor::scalar(-3.0);
  CHECK(s.numel() == 1);
  CHECK(s[0] == -3.0);
}

TEST_CASE("row-major at() indexing") {
  Tensor t = Tensor::from_vector({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.at(0, 0) == 0);
  CHECK(t.at(0, 2) == 2);
  CHECK(t.at(1, 0) == 3);
  CHECK(t.at(1, 2) == 5);

  Tensor u = Tensor::from_vector({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(u.at(1, 0, 1) == 5);
  CHECK(u.at(0, 1, 0) == 2);

  Tensor v({2, 2, 2, 2});
  v.at(1, 1, 1, 1) = 9.0;
  CHECK(v[15] == 9.0);
}

TEST_CASE("from_vector validates payload size") {
  CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1.0, 2.0, 3.0}), ContractError);
}

TEST_CASE("reshape preserves data and checks count") {
  Tensor t = Tensor::from_vector({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor r = t.reshaped({3, 2});
  CHECK(r.at(2, 1) == 5);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ContractError);
}

TEST_CASE("all_finite flags NaN and inf") {
  Tensor t = Tensor::zeros({3});
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK(!t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  CHECK(!t.all_finite());
}

TEST_CASE("randn is seed deterministic") {
  Rng a(5), b(5);
  Tensor x = Tensor::randn({8}, a);
  Tensor y = Tensor::randn({8}, b);
  for (int64_t i = 0; i < 8; ++i) CHECK(x[i] == y[i]);
}

TEST_CASE("shape_str") {
  CHECK(Tensor({2, 3}).shape_str() == "(2,3)");
  CHECK(Tensor::scalar(1).shape_str() == "(1)");
}
