#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "avg/error.hpp"
#include "avg/rng.hpp"

namespace avg {

// Dense row-major double tensor. All numerics in this project run at double
// precision so finite-difference checks are meaningful.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0);
  }
  Tensor(std::initializer_list<int64_t> shape) : Tensor(std::vector<int64_t>(shape)) {}

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }
  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.normal() * stddev;
    return t;
  }
  static Tensor from_vector(std::vector<int64_t> shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    AVG_CHECK(static_cast<int64_t>(values.size()) == numel_of(t.shape_), ContractError,
              "tensor payload does not match shape");
    t.data_ = std::move(values);
    return t;
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& store() { return data_; }
  const std::vector<double>& store() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  double& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  double at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
  }
  double& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
  }
  double at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[static_cast<size_t>(((i * dim(1) + j) * dim(2) + k) * dim(3) + l)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int64_t> shape) const {
    AVG_CHECK(numel_of(shape) == numel(), ContractError, "reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      AVG_CHECK(d >= 0, ContractError, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace avg
