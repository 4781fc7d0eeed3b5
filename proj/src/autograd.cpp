#include "avg/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace avg::ag {

namespace {

std::atomic<uint64_t> g_next_id{1};
thread_local int g_no_grad_depth = 0;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap as_mat(const Tensor& t) {
  AVG_CHECK(t.ndim() == 2, ContractError, "expected a 2-D tensor, got " + t.shape_str());
  return ECMap(t.data(), t.dim(0), t.dim(1));
}
EMap as_mat(Tensor& t) {
  AVG_CHECK(t.ndim() == 2, ContractError, "expected a 2-D tensor, got " + t.shape_str());
  return EMap(t.data(), t.dim(0), t.dim(1));
}

NodeRef new_node(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1);
  return n;
}

bool any_requires(const std::vector<Var>& vs) {
  if (!grad_enabled()) return false;
  for (const auto& v : vs)
    if (v.requires_grad()) return true;
  return false;
}

// Wires a generic op node. When no input requires grad the tape is not
// recorded and the node is a plain value holder.
Var op_node(const std::vector<Var>& inputs, Tensor value, std::function<void(Node&)> bw) {
  bool rg = any_requires(inputs);
  NodeRef n = new_node(std::move(value), rg);
  if (rg) {
    n->parents.reserve(inputs.size());
    for (const auto& v : inputs) n->parents.push_back(v.node());
    n->backward = std::move(bw);
  }
  return Var(n);
}

void accumulate(Node& parent, const Tensor& delta) {
  if (!parent.requires_grad) return;
  Tensor& g = parent.grad_buffer();
  const double* s = delta.data();
  double* d = g.data();
  int64_t n = delta.numel();
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var Var::constant(Tensor value) { return Var(new_node(std::move(value), false)); }

Var Var::param(Tensor value) {
  NodeRef n = new_node(std::move(value), true);
  return Var(n);
}

Var make_custom(const std::vector<Var>& inputs, Tensor value, CustomBackward backward) {
  return op_node(inputs, std::move(value), [backward](Node& n) {
    std::vector<Tensor*> grads(n.parents.size(), nullptr);
    for (size_t i = 0; i < n.parents.size(); ++i)
      if (n.parents[i]->requires_grad) grads[i] = &n.parents[i]->grad_buffer();
    backward(n.grad, n.parents, grads);
  });
}

void backward(const Var& root) {
  AVG_CHECK(root.defined() && root.value().numel() == 1, ContractError,
            "backward expects a scalar root");
  if (!root.requires_grad()) return;
  // Collect reachable tape nodes; creation ids give a valid reverse
  // topological order because parents are always created before children.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
  Tensor& rg = root.node()->grad_buffer();
  rg[0] += 1.0;
  for (Node* n : order)
    if (n->backward) n->backward(*n);
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
  AVG_CHECK(a.value().same_shape(b.value()), ContractError, "add: shape mismatch");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
  return op_node({a, b}, std::move(out), [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  AVG_CHECK(a.value().same_shape(b.value()), ContractError, "sub: shape mismatch");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= pb[i];
  return op_node({a, b}, std::move(out), [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_buffer();
      for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  AVG_CHECK(a.value().same_shape(b.value()), ContractError, "mul: shape mismatch");
  Tensor out = a.value();
  const double* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  return op_node({a, b}, std::move(out), [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->grad_buffer();
      for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_buffer();
      for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return op_node({a}, std::move(out), [](Node& n) { accumulate(*n.parents[0], n.grad); });
}

Var mul_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return op_node({a}, std::move(out), [s](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * s;
  });
}

Var add_const(const Var& a, const Tensor& c) {
  AVG_CHECK(a.value().same_shape(c), ContractError, "add_const: shape mismatch");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c[i];
  return op_node({a}, std::move(out), [](Node& n) { accumulate(*n.parents[0], n.grad); });
}

Var mul_const(const Var& a, const Tensor& c) {
  AVG_CHECK(a.value().same_shape(c), ContractError, "mul_const: shape mismatch");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
  return op_node({a}, std::move(out), [c](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * c[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    const Tensor& x = n.parents[0]->value;
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (x[i] > 0.0) g[i] += n.grad[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      double y = n.value[i];
      g[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

Var tanh_op(const Var& a) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      double y = n.value[i];
      g[i] += n.grad[i] * (1.0 - y * y);
    }
  });
}

Var exp_op(const Var& a) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * n.value[i];
  });
}

Var log_op(const Var& a) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    const Tensor& x = n.parents[0]->value;
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] / x[i];
  });
}

// ---------------------------------------------------------------------------
// shape ops

Var reshape(const Var& a, std::vector<int64_t> shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i];
  });
}

Var transpose2d(const Var& a) {
  const Tensor& x = a.value();
  AVG_CHECK(x.ndim() == 2, ContractError, "transpose2d expects 2-D");
  Tensor out({x.dim(1), x.dim(0)});
  as_mat(out) = as_mat(x).transpose();
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    as_mat(g) += as_mat(n.grad).transpose();
  });
}

Var slice_cols(const Var& a, int64_t c0, int64_t c1) {
  const Tensor& x = a.value();
  AVG_CHECK(x.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.dim(1), ContractError,
            "slice_cols: bad range");
  Tensor out({x.dim(0), c1 - c0});
  as_mat(out) = as_mat(x).middleCols(c0, c1 - c0);
  return op_node({a}, std::move(out), [c0, c1](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    as_mat(g).middleCols(c0, c1 - c0) += as_mat(n.grad);
  });
}

Var slice_rows(const Var& a, int64_t r0, int64_t r1) {
  const Tensor& x = a.value();
  AVG_CHECK(x.ndim() == 2 && 0 <= r0 && r0 < r1 && r1 <= x.dim(0), ContractError,
            "slice_rows: bad range");
  Tensor out({r1 - r0, x.dim(1)});
  as_mat(out) = as_mat(x).middleRows(r0, r1 - r0);
  return op_node({a}, std::move(out), [r0, r1](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    as_mat(g).middleRows(r0, r1 - r0) += as_mat(n.grad);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  AVG_CHECK(!parts.empty(), ContractError, "concat_cols: empty");
  int64_t rows = parts[0].value().dim(0), cols = 0;
  for (const auto& p : parts) {
    AVG_CHECK(p.value().ndim() == 2 && p.value().dim(0) == rows, ContractError,
              "concat_cols: row mismatch");
    cols += p.value().dim(1);
  }
  Tensor out({rows, cols});
  int64_t off = 0;
  for (const auto& p : parts) {
    as_mat(out).middleCols(off, p.value().dim(1)) = as_mat(p.value());
    off += p.value().dim(1);
  }
  return op_node(parts, std::move(out), [](Node& n) {
    int64_t off = 0;
    for (auto& p : n.parents) {
      int64_t w = p->value.dim(1);
      if (p->requires_grad) as_mat(p->grad_buffer()) += as_mat(n.grad).middleCols(off, w);
      off += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  AVG_CHECK(!parts.empty(), ContractError, "concat_rows: empty");
  int64_t cols = parts[0].value().dim(1), rows = 0;
  for (const auto& p : parts) {
    AVG_CHECK(p.value().ndim() == 2 && p.value().dim(1) == cols, ContractError,
              "concat_rows: column mismatch");
    rows += p.value().dim(0);
  }
  Tensor out({rows, cols});
  int64_t off = 0;
  for (const auto& p : parts) {
    as_mat(out).middleRows(off, p.value().dim(0)) = as_mat(p.value());
    off += p.value().dim(0);
  }
  return op_node(parts, std::move(out), [](Node& n) {
    int64_t off = 0;
    for (auto& p : n.parents) {
      int64_t h = p->value.dim(0);
      if (p->requires_grad) as_mat(p->grad_buffer()) += as_mat(n.grad).middleRows(off, h);
      off += h;
    }
  });
}

Var rows_select(const Var& a, std::vector<int64_t> idx) {
  const Tensor& x = a.value();
  AVG_CHECK(x.ndim() == 2, ContractError, "rows_select expects 2-D");
  for (int64_t i : idx)
    AVG_CHECK(0 <= i && i < x.dim(0), ContractError, "rows_select: index out of range");
  Tensor out({static_cast<int64_t>(idx.size()), x.dim(1)});
  for (size_t r = 0; r < idx.size(); ++r)
    as_mat(out).row(static_cast<int64_t>(r)) = as_mat(x).row(idx[r]);
  return op_node({a}, std::move(out), [idx](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    for (size_t r = 0; r < idx.size(); ++r)
      as_mat(g).row(idx[r]) += as_mat(n.grad).row(static_cast<int64_t>(r));
  });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  AVG_CHECK(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(0), ContractError,
            "matmul: shape mismatch " + A.shape_str() + "x" + B.shape_str());
  Tensor out({A.dim(0), B.dim(1)});
  as_mat(out).noalias() = as_mat(A) * as_mat(B);
  return op_node({a, b}, std::move(out), [](Node& n) {
    const Tensor& A = n.parents[0]->value;
    const Tensor& B = n.parents[1]->value;
    if (n.parents[0]->requires_grad)
      as_mat(n.parents[0]->grad_buffer()).noalias() += as_mat(n.grad) * as_mat(B).transpose();
    if (n.parents[1]->requires_grad)
      as_mat(n.parents[1]->grad_buffer()).noalias() += as_mat(A).transpose() * as_mat(n.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  AVG_CHECK(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(1), ContractError,
            "matmul_nt: shape mismatch " + A.shape_str() + "x" + B.shape_str() + "^T");
  Tensor out({A.dim(0), B.dim(0)});
  as_mat(out).noalias() = as_mat(A) * as_mat(B).transpose();
  return op_node({a, b}, std::move(out), [](Node& n) {
    const Tensor& A = n.parents[0]->value;
    const Tensor& B = n.parents[1]->value;
    if (n.parents[0]->requires_grad)
      as_mat(n.parents[0]->grad_buffer()).noalias() += as_mat(n.grad) * as_mat(B);
    if (n.parents[1]->requires_grad)
      as_mat(n.parents[1]->grad_buffer()).noalias() += as_mat(n.grad).transpose() * as_mat(A);
  });
}

Var add_rowvec(const Var& a, const Var& v) {
  const Tensor& X = a.value();
  const Tensor& b = v.value();
  AVG_CHECK(X.ndim() == 2 && b.numel() == X.dim(1), ContractError, "add_rowvec: shape mismatch");
  Tensor out = X;
  for (int64_t i = 0; i < X.dim(0); ++i)
    for (int64_t j = 0; j < X.dim(1); ++j) out.at(i, j) += b[j];
  return op_node({a, v}, std::move(out), [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_buffer();
      for (int64_t i = 0; i < n.grad.dim(0); ++i)
        for (int64_t j = 0; j < n.grad.dim(1); ++j) g[j] += n.grad.at(i, j);
    }
  });
}

Var mul_colvec(const Var& a, const Var& v) {
  const Tensor& X = a.value();
  const Tensor& c = v.value();
  AVG_CHECK(X.ndim() == 2 && c.numel() == X.dim(0), ContractError, "mul_colvec: shape mismatch");
  Tensor out = X;
  for (int64_t i = 0; i < X.dim(0); ++i)
    for (int64_t j = 0; j < X.dim(1); ++j) out.at(i, j) *= c[i];
  return op_node({a, v}, std::move(out), [](Node& n) {
    const Tensor& X = n.parents[0]->value;
    const Tensor& c = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->grad_buffer();
      for (int64_t i = 0; i < X.dim(0); ++i)
        for (int64_t j = 0; j < X.dim(1); ++j) g.at(i, j) += n.grad.at(i, j) * c[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_buffer();
      for (int64_t i = 0; i < X.dim(0); ++i)
        for (int64_t j = 0; j < X.dim(1); ++j) g[i] += n.grad.at(i, j) * X.at(i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// reductions and norms

Var sum(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
  return op_node({a}, Tensor::scalar(s), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
  });
}

Var mean(const Var& a) {
  int64_t n = a.value().numel();
  AVG_CHECK(n > 0, ContractError, "mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(n));
}

Var softmax_rows(const Var& a) {
  const Tensor& X = a.value();
  AVG_CHECK(X.ndim() == 2, ContractError, "softmax_rows expects 2-D");
  Tensor out = X;
  for (int64_t i = 0; i < X.dim(0); ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < X.dim(1); ++j) mx = std::max(mx, X.at(i, j));
    double z = 0.0;
    for (int64_t j = 0; j < X.dim(1); ++j) {
      out.at(i, j) = std::exp(X.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (int64_t j = 0; j < X.dim(1); ++j) out.at(i, j) /= z;
  }
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    const Tensor& y = n.value;
    for (int64_t i = 0; i < y.dim(0); ++i) {
      double dot = 0.0;
      for (int64_t j = 0; j < y.dim(1); ++j) dot += n.grad.at(i, j) * y.at(i, j);
      for (int64_t j = 0; j < y.dim(1); ++j)
        g.at(i, j) += y.at(i, j) * (n.grad.at(i, j) - dot);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Tensor& X = a.value();
  AVG_CHECK(X.ndim() == 2, ContractError, "log_softmax_rows expects 2-D");
  Tensor out = X;
  for (int64_t i = 0; i < X.dim(0); ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < X.dim(1); ++j) mx = std::max(mx, X.at(i, j));
    double z = 0.0;
    for (int64_t j = 0; j < X.dim(1); ++j) z += std::exp(X.at(i, j) - mx);
    double lz = mx + std::log(z);
    for (int64_t j = 0; j < X.dim(1); ++j) out.at(i, j) = X.at(i, j) - lz;
  }
  return op_node({a}, std::move(out), [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& g = n.parents[0]->grad_buffer();
    const Tensor& y = n.value;  // log-probs
    for (int64_t i = 0; i < y.dim(0); ++i) {
      double rowsum = 0.0;
      for (int64_t j = 0; j < y.dim(1); ++j) rowsum += n.grad.at(i, j);
      for (int64_t j = 0; j < y.dim(1); ++j)
        g.at(i, j) += n.grad.at(i, j) - std::exp(y.at(i, j)) * rowsum;
    }
  });
}

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps) {
  const Tensor& X = a.value();
  AVG_CHECK(X.ndim() == 2, ContractError, "layer_norm_rows expects 2-D");
  int64_t m = X.dim(0), d = X.dim(1);
  AVG_CHECK(gain.value().numel() == d && bias.value().numel() == d, ContractError,
            "layer_norm_rows: gain/bias size mismatch");
  Tensor xhat({m, d});
  Tensor inv_std({m});
  Tensor out({m, d});
  for (int64_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += X.at(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double c = X.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int64_t j = 0; j < d; ++j) {
      double xh = (X.at(i, j) - mu) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = xh * gain.value()[j] + bias.value()[j];
    }
  }
  return op_node({a, gain, bias}, std::move(out), [xhat, inv_std](Node& n) {
    int64_t m = xhat.dim(0), d = xhat.dim(1);
    const Tensor& gvec = n.parents[1]->value;
    if (n.parents[1]->requires_grad) {
      Tensor& gg = n.parents[1]->grad_buffer();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j) gg[j] += n.grad.at(i, j) * xhat.at(i, j);
    }
    if (n.parents[2]->requires_grad) {
      Tensor& gb = n.parents[2]->grad_buffer();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j) gb[j] += n.grad.at(i, j);
    }
    if (n.parents[0]->requires_grad) {
      Tensor& gx = n.parents[0]->grad_buffer();
      for (int64_t i = 0; i < m; ++i) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          double dy = n.grad.at(i, j) * gvec[j];
          sum_dy += dy;
          sum_dy_xh += dy * xhat.at(i, j);
        }
        double inv_d = 1.0 / static_cast<double>(d);
        for (int64_t j = 0; j < d; ++j) {
          double dy = n.grad.at(i, j) * gvec[j];
          gx.at(i, j) +=
              inv_std[i] * (dy - inv_d * sum_dy - xhat.at(i, j) * inv_d * sum_dy_xh);
        }
      }
    }
  });
}

Var dropout(const Var& a, double p, Rng& rng) {
  if (!grad_enabled() || p <= 0.0) return a;
  AVG_CHECK(p < 1.0, ContractError, "dropout rate must be < 1");
  Tensor mask(a.value().shape());
  double keep = 1.0 - p;
  for (int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mul_const(a, mask);
}

// ---------------------------------------------------------------------------
// convolutions

Var conv1d_same(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  AVG_CHECK(X.ndim() == 2 && W.ndim() == 3, ContractError, "conv1d_same: bad ranks");
  int64_t T = X.dim(0), cin = X.dim(1);
  int64_t cout = W.dim(0), k = W.dim(2);
  AVG_CHECK(W.dim(1) == cin && B.numel() == cout, ContractError, "conv1d_same: shape mismatch");
  int64_t half = k / 2;
  Tensor out({T, cout});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t o = 0; o < cout; ++o) {
      double acc = B[o];
      for (int64_t dt = 0; dt < k; ++dt) {
        int64_t src = t + dt - half;
        if (src < 0 || src >= T) continue;
        for (int64_t c = 0; c < cin; ++c) acc += X.at(src, c) * W.at(o, c, dt);
      }
      out.at(t, o) = acc;
    }
  return op_node({x, w, b}, std::move(out), [half, k](Node& n) {
    const Tensor& X = n.parents[0]->value;
    const Tensor& W = n.parents[1]->value;
    int64_t T = X.dim(0), cin = X.dim(1), cout = W.dim(0);
    Tensor* gx = n.parents[0]->requires_grad ? &n.parents[0]->grad_buffer() : nullptr;
    Tensor* gw = n.parents[1]->requires_grad ? &n.parents[1]->grad_buffer() : nullptr;
    Tensor* gb = n.parents[2]->requires_grad ? &n.parents[2]->grad_buffer() : nullptr;
    for (int64_t t = 0; t < T; ++t)
      for (int64_t o = 0; o < cout; ++o) {
        double dy = n.grad.at(t, o);
        if (dy == 0.0) continue;
        if (gb) (*gb)[o] += dy;
        for (int64_t dt = 0; dt < k; ++dt) {
          int64_t src = t + dt - half;
          if (src < 0 || src >= T) continue;
          for (int64_t c = 0; c < cin; ++c) {
            if (gw) gw->at(o, c, dt) += dy * X.at(src, c);
            if (gx) gx->at(src, c) += dy * W.at(o, c, dt);
          }
        }
      }
  });
}

Var conv3d(const Var& x, const Var& w, const Var& b, int spatial_stride) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  AVG_CHECK(X.ndim() == 4 && W.ndim() == 5, ContractError, "conv3d: bad ranks");
  int64_t cin = X.dim(0), T = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  int64_t cout = W.dim(0), kt = W.dim(2), kh = W.dim(3), kw = W.dim(4);
  AVG_CHECK(W.dim(1) == cin && B.numel() == cout, ContractError, "conv3d: shape mismatch");
  int64_t s = spatial_stride;
  AVG_CHECK(s >= 1, ContractError, "conv3d: stride must be >= 1");
  int64_t H2 = (H + s - 1) / s, W2 = (Wd + s - 1) / s;
  int64_t pt = kt / 2, ph = kh / 2, pw = kw / 2;
  auto widx = [kt, kh, kw, cin](int64_t o, int64_t c, int64_t a2, int64_t a0, int64_t a1) {
    return (((o * cin + c) * kt + a2) * kh + a0) * kw + a1;
  };
  Tensor out({cout, T, H2, W2});
  for (int64_t o = 0; o < cout; ++o)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t i = 0; i < H2; ++i)
        for (int64_t j = 0; j < W2; ++j) {
          double acc = B[o];
          for (int64_t c = 0; c < cin; ++c)
            for (int64_t a2 = 0; a2 < kt; ++a2) {
              int64_t st = t + a2 - pt;
              if (st < 0 || st >= T) continue;
              for (int64_t a0 = 0; a0 < kh; ++a0) {
                int64_t si = i * s + a0 - ph;
                if (si < 0 || si >= H) continue;
                for (int64_t a1 = 0; a1 < kw; ++a1) {
                  int64_t sj = j * s + a1 - pw;
                  if (sj < 0 || sj >= Wd) continue;
                  acc += X.at(c, st, si, sj) * W[widx(o, c, a2, a0, a1)];
                }
              }
            }
          out.at(o, t, i, j) = acc;
        }
  return op_node({x, w, b}, std::move(out), [s, kt, kh, kw](Node& n) {
    const Tensor& X = n.parents[0]->value;
    const Tensor& W = n.parents[1]->value;
    int64_t cin = X.dim(0), T = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    int64_t cout = W.dim(0);
    int64_t H2 = n.grad.dim(2), W2 = n.grad.dim(3);
    int64_t pt = kt / 2, ph = kh / 2, pw = kw / 2;
    auto widx = [kt, kh, kw, cin](int64_t o, int64_t c, int64_t a2, int64_t a0, int64_t a1) {
      return (((o * cin + c) * kt + a2) * kh + a0) * kw + a1;
    };
    Tensor* gx = n.parents[0]->requires_grad ? &n.parents[0]->grad_buffer() : nullptr;
    Tensor* gw = n.parents[1]->requires_grad ? &n.parents[1]->grad_buffer() : nullptr;
    Tensor* gb = n.parents[2]->requires_grad ? &n.parents[2]->grad_buffer() : nullptr;
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t t = 0; t < T; ++t)
        for (int64_t i = 0; i < H2; ++i)
          for (int64_t j = 0; j < W2; ++j) {
            double dy = n.grad.at(o, t, i, j);
            if (dy == 0.0) continue;
            if (gb) (*gb)[o] += dy;
            for (int64_t c = 0; c < cin; ++c)
              for (int64_t a2 = 0; a2 < kt; ++a2) {
                int64_t st = t + a2 - pt;
                if (st < 0 || st >= T) continue;
                for (int64_t a0 = 0; a0 < kh; ++a0) {
                  int64_t si = i * s + a0 - ph;
                  if (si < 0 || si >= H) continue;
                  for (int64_t a1 = 0; a1 < kw; ++a1) {
                    int64_t sj = j * s + a1 - pw;
                    if (sj < 0 || sj >= Wd) continue;
                    int64_t wofs = widx(o, c, a2, a0, a1);
                    if (gw) (*gw)[wofs] += dy * X.at(c, st, si, sj);
                    if (gx) gx->at(c, st, si, sj) += dy * W[wofs];
                  }
                }
              }
          }
  });
}

Var pool_frames(const Var& x, int gh, int gw) {
  const Tensor& X = x.value();
  AVG_CHECK(X.ndim() == 4, ContractError, "pool_frames expects [C,T,H,W]");
  int64_t C = X.dim(0), T = X.dim(1), H = X.dim(2), W = X.dim(3);
  AVG_CHECK(gh >= 1 && gw >= 1 && gh <= H && gw <= W, ContractError, "pool_frames: bad grid");
  Tensor out({T, C * gh * gw});
  auto cell = [](int64_t g, int64_t n, int64_t i) {  // [lo, hi) of cell i over n items
    return std::pair<int64_t, int64_t>{i * n / g, (i + 1) * n / g};
  };
  for (int64_t t = 0; t < T; ++t)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t a = 0; a < gh; ++a)
        for (int64_t b2 = 0; b2 < gw; ++b2) {
          auto [i0, i1] = cell(gh, H, a);
          auto [j0, j1] = cell(gw, W, b2);
          double acc = 0.0;
          for (int64_t i = i0; i < i1; ++i)
            for (int64_t j = j0; j < j1; ++j) acc += X.at(c, t, i, j);
          out.at(t, (c * gh + a) * gw + b2) = acc / static_cast<double>((i1 - i0) * (j1 - j0));
        }
  return op_node({x}, std::move(out), [gh, gw](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    const Tensor& X = n.parents[0]->value;
    Tensor& g = n.parents[0]->grad_buffer();
    int64_t C = X.dim(0), T = X.dim(1), H = X.dim(2), W = X.dim(3);
    auto cell = [](int64_t gq, int64_t nq, int64_t i) {
      return std::pair<int64_t, int64_t>{i * nq / gq, (i + 1) * nq / gq};
    };
    for (int64_t t = 0; t < T; ++t)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t a = 0; a < gh; ++a)
          for (int64_t b2 = 0; b2 < gw; ++b2) {
            auto [i0, i1] = cell(gh, H, a);
            auto [j0, j1] = cell(gw, W, b2);
            double dy = n.grad.at(t, (c * gh + a) * gw + b2) /
                        static_cast<double>((i1 - i0) * (j1 - j0));
            for (int64_t i = i0; i < i1; ++i)
              for (int64_t j = j0; j < j1; ++j) g.at(c, t, i, j) += dy;
          }
  });
}

Var stop_gradient(const Var& a) { return Var::constant(a.value()); }

double gradient_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step) {
  Var vx = Var::param(x);
  Var y = f(vx);
  backward(y);
  Tensor analytic = vx.grad();
  Tensor fd(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    NoGradGuard ng;
    double fp = f(Var::constant(xp)).item();
    double fm = f(Var::constant(xm)).item();
    fd[i] = (fp - fm) / (2.0 * step);
  }
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = analytic[i] - fd[i];
    num += d * d;
    den += std::max(analytic[i] * analytic[i], fd[i] * fd[i]);
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : 1.0;
  return std::sqrt(num / den);
}

}  // namespace avg::ag
