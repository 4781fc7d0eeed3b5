#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "avg/tensor.hpp"

namespace avg::ag {

struct Node;
using NodeRef = std::shared_ptr<Node>;

// One vertex of the dynamic backward tape.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  uint64_t id = 0;  // creation order; parents always precede children
  std::vector<NodeRef> parents;
  // Pulls this node's grad into the parents' grads.
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

// Differentiable handle with shared-node semantics.
class Var {
 public:
  Var() = default;
  explicit Var(NodeRef n) : node_(std::move(n)) {}

  static Var constant(Tensor value);
  static Var param(Tensor value);  // requires_grad = true, persists across steps

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad() {
    if (node_ && !node_->grad.empty())
      for (auto& g : node_->grad.store()) g = 0.0;
  }
  const NodeRef& node() const { return node_; }

  double item() const {
    AVG_CHECK(node_ && node_->value.numel() == 1, ContractError, "item() on non-scalar");
    return node_->value[0];
  }

 private:
  NodeRef node_;
};

// While alive, newly built ops do not record the tape (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Building block for custom ops defined outside this header (CTC, rasterizer,
// bilinear crop, ...). `backward(out_grad, inputs, grads)` receives the
// output cotangent and for each input either a grad buffer to accumulate
// into or nullptr when that input does not require grad.
using CustomBackward = std::function<void(
    const Tensor& out_grad, const std::vector<NodeRef>& inputs, const std::vector<Tensor*>& grads)>;
Var make_custom(const std::vector<Var>& inputs, Tensor value, CustomBackward backward);

// Runs reverse accumulation from a scalar root.
void backward(const Var& root);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var add_const(const Var& a, const Tensor& c);   // same shape constant
Var mul_const(const Var& a, const Tensor& c);   // same shape constant mask
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var transpose2d(const Var& a);
Var slice_cols(const Var& a, int64_t c0, int64_t c1);
Var slice_rows(const Var& a, int64_t r0, int64_t r1);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
// gather rows by index (duplicates allowed), backward scatter-adds
Var rows_select(const Var& a, std::vector<int64_t> idx);

// ---- linear algebra (Eigen-backed) ----
Var matmul(const Var& a, const Var& b);     // [m,k]·[k,n]
Var matmul_nt(const Var& a, const Var& b);  // [m,k]·[n,k]^T
Var add_rowvec(const Var& a, const Var& v);  // [m,n] + [n]
Var mul_colvec(const Var& a, const Var& v);  // [m,n] * [m] (row scaling)

// ---- reductions / norms ----
Var sum(const Var& a);
Var mean(const Var& a);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);
Var dropout(const Var& a, double p, Rng& rng);  // identity when !grad_enabled()

// ---- convolutions (small, loop-based) ----
// x: [T, Cin], w: [Cout, Cin, k], b: [Cout]; stride 1, same padding
Var conv1d_same(const Var& x, const Var& w, const Var& b);
// x: [Cin, T, H, W], w: [Cout, Cin, kt, kh, kw], b: [Cout]
// temporal stride 1 with same padding; spatial stride s with same padding
Var conv3d(const Var& x, const Var& w, const Var& b, int spatial_stride);
// x: [C, T, H, W] -> [T, C*gh*gw] via per-cell average pooling
Var pool_frames(const Var& x, int gh, int gw);

Var stop_gradient(const Var& a);

// Finite-difference helper used by gradient tests: relative L2 error between
// analytic gradient and central differences of `f` at `x`.
double gradient_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step);

}  // namespace avg::ag
