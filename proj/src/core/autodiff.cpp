#include "realtalk/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#include "realtalk/kernels.hpp"

namespace rt::ag {

namespace {

Tensor& grad_buf(Node& n) {
  if (!n.grad_live) {
    n.grad = Tensor::zeros(n.value.shape());
    n.grad_live = true;
  }
  return n.grad;
}

Var mk(Tensor value, std::vector<Var> inputs,
       std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a->value.shape_str() + " vs " +
                                b->value.shape_str());
}

// Elementwise unary helper: fwd(x) -> y, dfn(x, y) -> dy/dx.
template <typename F, typename D>
Var unary(const Var& a, F fwd, D dfn) {
  Tensor out = Tensor::uninit(a->value.shape());
  const double* x = a->value.data();
  double* y = out.data();
  const int64_t n = a->value.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = fwd(x[i]);
  return mk(std::move(out), {a}, [dfn](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    const double* x = in.value.data();
    const double* y = node.value.data();
    const double* g = node.grad.data();
    double* gi = gb.data();
    const int64_t n = node.value.numel();
    for (int64_t i = 0; i < n; ++i) gi[i] += g[i] * dfn(x[i], y[i]);
  });
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  accumulate_raw(g.data(), g.numel());
}

void Node::accumulate_raw(const double* g, int64_t n) {
  if (n != value.numel())
    throw std::invalid_argument("accumulate: gradient size mismatch");
  Tensor& gb = grad_buf(*this);
  kern::ops().add(gb.data(), g, gb.data(), size_t(n));
}

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

Var make_param(const Tensor& v, Tensor* grad_sink) {
  auto n = std::make_shared<Node>();
  n->value = v;
  n->requires_grad = true;
  n->grad_sink = grad_sink;
  return n;
}

Var detach(const Var& a) { return constant(a->value); }

void backward(const Var& root) {
  // Post-order DFS restricted to grad-requiring nodes.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  if (!root->requires_grad) return;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    Node* node = top.first;
    if (top.second < node->inputs.size()) {
      Node* child = node->inputs[top.second++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  grad_buf(*root).fill(1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (!n->grad_live) continue;  // unreachable contribution
    if (n->backward_fn) n->backward_fn(*n);
    if (n->grad_sink) {
      kern::ops().add(n->grad_sink->data(), n->grad.data(),
                      n->grad_sink->data(), size_t(n->grad.numel()));
    }
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::uninit(a->value.shape());
  kern::ops().add(a->value.data(), b->value.data(), out.data(),
                  size_t(out.numel()));
  return mk(std::move(out), {a, b}, [](Node& node) {
    for (int i = 0; i < 2; ++i)
      if (node.inputs[i]->requires_grad) node.inputs[i]->accumulate(node.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::uninit(a->value.shape());
  kern::ops().sub(a->value.data(), b->value.data(), out.data(),
                  size_t(out.numel()));
  return mk(std::move(out), {a, b}, [](Node& node) {
    if (node.inputs[0]->requires_grad) node.inputs[0]->accumulate(node.grad);
    if (node.inputs[1]->requires_grad) {
      Tensor& gb = grad_buf(*node.inputs[1]);
      kern::ops().axpy(-1.0, node.grad.data(), gb.data(),
                       size_t(node.grad.numel()));
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::uninit(a->value.shape());
  kern::ops().mul(a->value.data(), b->value.data(), out.data(),
                  size_t(out.numel()));
  return mk(std::move(out), {a, b}, [](Node& node) {
    const size_t n = size_t(node.grad.numel());
    Tensor tmp = Tensor::uninit(node.grad.shape());
    if (node.inputs[0]->requires_grad) {
      kern::ops().mul(node.grad.data(), node.inputs[1]->value.data(),
                      tmp.data(), n);
      node.inputs[0]->accumulate(tmp);
    }
    if (node.inputs[1]->requires_grad) {
      kern::ops().mul(node.grad.data(), node.inputs[0]->value.data(),
                      tmp.data(), n);
      node.inputs[1]->accumulate(tmp);
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  double* y = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) y[i] += s;
  return mk(std::move(out), {a}, [](Node& node) {
    node.inputs[0]->accumulate(node.grad);
  });
}

Var mul_scalar(const Var& a, double s) {
  Tensor out = a->value;
  kern::ops().scale(s, out.data(), size_t(out.numel()));
  return mk(std::move(out), {a}, [s](Node& node) {
    if (!node.inputs[0]->requires_grad) return;
    Tensor& gb = grad_buf(*node.inputs[0]);
    kern::ops().axpy(s, node.grad.data(), gb.data(),
                     size_t(node.grad.numel()));
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var abs_val(const Var& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- reductions

Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(kern::ops().sum(a->value.data(),
                                              size_t(a->value.numel())));
  return mk(std::move(out), {a}, [](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    const double g = node.grad[0];
    double* gi = gb.data();
    for (int64_t i = 0; i < gb.numel(); ++i) gi[i] += g;
  });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / double(a->value.numel());
  Tensor out = Tensor::scalar(
      kern::ops().sum(a->value.data(), size_t(a->value.numel())) * inv);
  return mk(std::move(out), {a}, [inv](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    const double g = node.grad[0] * inv;
    double* gi = gb.data();
    for (int64_t i = 0; i < gb.numel(); ++i) gi[i] += g;
  });
}

// --------------------------------------------------------------------- shape

Var reshape(const Var& a, std::vector<int64_t> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  return mk(std::move(out), {a}, [](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    in.accumulate_raw(node.grad.data(), node.grad.numel());
  });
}

Var slice_rows(const Var& a, int64_t start, int64_t len) {
  const int64_t cols = a->value.numel() / a->value.dim(0);
  std::vector<int64_t> shape = a->value.shape();
  shape[0] = len;
  Tensor out = Tensor::uninit(shape);
  std::memcpy(out.data(), a->value.data() + start * cols,
              sizeof(double) * size_t(len * cols));
  return mk(std::move(out), {a}, [start, cols](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    kern::ops().add(gb.data() + start * cols, node.grad.data(),
                    gb.data() + start * cols, size_t(node.grad.numel()));
  });
}

Var slice_cols(const Var& a, int64_t start, int64_t len) {
  const int64_t rows = a->value.dim(0), cols = a->value.dim(1);
  Tensor out = Tensor::uninit({rows, len});
  for (int64_t i = 0; i < rows; ++i)
    std::memcpy(out.data() + i * len, a->value.data() + i * cols + start,
                sizeof(double) * size_t(len));
  return mk(std::move(out), {a}, [start, rows, cols, len](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    for (int64_t i = 0; i < rows; ++i) {
      double* dst = gb.data() + i * cols + start;
      const double* src = node.grad.data() + i * len;
      for (int64_t j = 0; j < len; ++j) dst[j] += src[j];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const int64_t cols = parts[0]->value.numel() / parts[0]->value.dim(0);
  int64_t rows = 0;
  for (const auto& p : parts) rows += p->value.dim(0);
  std::vector<int64_t> shape = parts[0]->value.shape();
  shape[0] = rows;
  Tensor out = Tensor::uninit(shape);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off, p->value.data(),
                sizeof(double) * size_t(p->value.numel()));
    off += p->value.numel();
  }
  return mk(std::move(out), parts, [cols](Node& node) {
    int64_t off = 0;
    for (auto& in : node.inputs) {
      const int64_t n = in->value.numel();
      if (in->requires_grad) in->accumulate_raw(node.grad.data() + off, n);
      off += n;
    }
    (void)cols;
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const int64_t rows = parts[0]->value.dim(0);
  int64_t cols = 0;
  for (const auto& p : parts) cols += p->value.dim(1);
  Tensor out = Tensor::uninit({rows, cols});
  int64_t coff = 0;
  for (const auto& p : parts) {
    const int64_t pc = p->value.dim(1);
    for (int64_t i = 0; i < rows; ++i)
      std::memcpy(out.data() + i * cols + coff, p->value.data() + i * pc,
                  sizeof(double) * size_t(pc));
    coff += pc;
  }
  return mk(std::move(out), parts, [rows, cols](Node& node) {
    int64_t coff = 0;
    for (auto& in : node.inputs) {
      const int64_t pc = in->value.dim(1);
      if (in->requires_grad) {
        Tensor& gb = grad_buf(*in);
        for (int64_t i = 0; i < rows; ++i) {
          double* dst = gb.data() + i * pc;
          const double* src = node.grad.data() + i * cols + coff;
          for (int64_t j = 0; j < pc; ++j) dst[j] += src[j];
        }
      }
      coff += pc;
    }
  });
}

Var gather_rows(const Var& a, std::vector<int64_t> indices) {
  const int64_t cols = a->value.numel() / a->value.dim(0);
  std::vector<int64_t> shape = a->value.shape();
  shape[0] = int64_t(indices.size());
  Tensor out = Tensor::uninit(shape);
  for (size_t r = 0; r < indices.size(); ++r)
    std::memcpy(out.data() + int64_t(r) * cols,
                a->value.data() + indices[r] * cols,
                sizeof(double) * size_t(cols));
  return mk(std::move(out), {a}, [idx = std::move(indices), cols](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    for (size_t r = 0; r < idx.size(); ++r) {
      double* dst = gb.data() + idx[r] * cols;
      const double* src = node.grad.data() + int64_t(r) * cols;
      for (int64_t j = 0; j < cols; ++j) dst[j] += src[j];
    }
  });
}

// ------------------------------------------------------------ linear algebra

namespace {

Tensor transposed(const Tensor& a) {
  const int64_t r = a.dim(0), c = a.dim(1);
  Tensor t = Tensor::uninit({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace

Var transpose2d(const Var& a) {
  if (a->value.ndim() != 2)
    throw std::invalid_argument("transpose2d: rank-2 tensor required");
  Tensor out = transposed(a->value);
  const int64_t r = a->value.dim(0), c = a->value.dim(1);
  return mk(std::move(out), {a}, [r, c](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    for (int64_t i = 0; i < c; ++i)
      for (int64_t j = 0; j < r; ++j) gb.at(j, i) += node.grad.at(i, j);
  });
}

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.ndim() != 2 || bv.ndim() != 2)
    throw std::invalid_argument("matmul: rank-2 tensors required");
  const int64_t m = ta ? av.dim(1) : av.dim(0);
  const int64_t k = ta ? av.dim(0) : av.dim(1);
  const int64_t kb = tb ? bv.dim(1) : bv.dim(0);
  const int64_t n = tb ? bv.dim(0) : bv.dim(1);
  if (k != kb)
    throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                av.shape_str() + " x " + bv.shape_str() + ")");
  Tensor out = Tensor::uninit({m, n});
  const auto& K = kern::ops();
  if (!ta && !tb)
    K.gemm_nn(av.data(), bv.data(), out.data(), int(m), int(k), int(n), false);
  else if (!ta && tb)
    K.gemm_nt(av.data(), bv.data(), out.data(), int(m), int(k), int(n), false);
  else if (ta && !tb)
    K.gemm_tn(av.data(), bv.data(), out.data(), int(m), int(k), int(n), false);
  else {
    Tensor at = transposed(av);
    K.gemm_nt(at.data(), bv.data(), out.data(), int(m), int(k), int(n), false);
  }
  return mk(std::move(out), {a, b}, [ta, tb, m, k, n](Node& node) {
    const auto& K = kern::ops();
    Node& na = *node.inputs[0];
    Node& nb = *node.inputs[1];
    const Tensor& g = node.grad;
    const Tensor& av = na.value;
    const Tensor& bv = nb.value;
    if (na.requires_grad) {
      Tensor& ga = grad_buf(na);
      if (!ta && !tb)  // dA = g * B^T
        K.gemm_nt(g.data(), bv.data(), ga.data(), int(m), int(n), int(k),
                  true);
      else if (!ta && tb)  // dA = g * B
        K.gemm_nn(g.data(), bv.data(), ga.data(), int(m), int(n), int(k),
                  true);
      else if (ta && !tb)  // dA = B * g^T  (A is [k,m])
        K.gemm_nt(bv.data(), g.data(), ga.data(), int(k), int(n), int(m),
                  true);
      else {  // dA = (g * B)^T with B [n,k]: tmp [m,k], scatter transposed
        Tensor tmp({m, k});
        K.gemm_nn(g.data(), bv.data(), tmp.data(), int(m), int(n), int(k),
                  false);
        for (int64_t i = 0; i < k; ++i)
          for (int64_t j = 0; j < m; ++j) ga.at(i, j) += tmp.at(j, i);
      }
    }
    if (nb.requires_grad) {
      Tensor& gb = grad_buf(nb);
      if (!ta && !tb)  // dB = A^T * g
        K.gemm_tn(av.data(), g.data(), gb.data(), int(k), int(m), int(n),
                  true);
      else if (!ta && tb)  // dB = g^T * A  (B is [n,k])
        K.gemm_tn(g.data(), av.data(), gb.data(), int(n), int(m), int(k),
                  true);
      else if (ta && !tb)  // dB = A * g  (A [k,m], B [k,n])
        K.gemm_nn(av.data(), g.data(), gb.data(), int(k), int(m), int(n),
                  true);
      else {  // dB = (A * g)^T with A [k,m]: tmp [k,n], B [n,k]
        Tensor tmp({k, n});
        K.gemm_nn(av.data(), g.data(), tmp.data(), int(k), int(m), int(n),
                  false);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < k; ++j) gb.at(i, j) += tmp.at(j, i);
      }
    }
  });
}

Var add_row_bias(const Var& a, const Var& bias) {
  const int64_t rows = a->value.dim(0), cols = a->value.dim(1);
  if (bias->value.numel() != cols)
    throw std::invalid_argument("add_row_bias: bias length mismatch");
  Tensor out = a->value;
  for (int64_t i = 0; i < rows; ++i)
    kern::ops().add(out.data() + i * cols, bias->value.data(),
                    out.data() + i * cols, size_t(cols));
  return mk(std::move(out), {a, bias}, [rows, cols](Node& node) {
    if (node.inputs[0]->requires_grad) node.inputs[0]->accumulate(node.grad);
    if (node.inputs[1]->requires_grad) {
      Tensor& gb = grad_buf(*node.inputs[1]);
      for (int64_t i = 0; i < rows; ++i)
        kern::ops().add(gb.data(), node.grad.data() + i * cols, gb.data(),
                        size_t(cols));
    }
  });
}

Var softmax_rows(const Var& a) {
  const int64_t rows = a->value.dim(0), cols = a->value.dim(1);
  Tensor out = Tensor::uninit(a->value.shape());
  for (int64_t i = 0; i < rows; ++i) {
    const double* x = a->value.data() + i * cols;
    double* y = out.data() + i * cols;
    double mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    const double inv = 1.0 / s;
    for (int64_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  return mk(std::move(out), {a}, [rows, cols](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    for (int64_t i = 0; i < rows; ++i) {
      const double* y = node.value.data() + i * cols;
      const double* g = node.grad.data() + i * cols;
      double* gi = gb.data() + i * cols;
      const double dot = kern::ops().dot(g, y, size_t(cols));
      for (int64_t j = 0; j < cols; ++j) gi[j] += (g[j] - dot) * y[j];
    }
  });
}

Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps) {
  const int64_t rows = a->value.dim(0), cols = a->value.dim(1);
  Tensor out = Tensor::uninit(a->value.shape());
  Tensor stats = Tensor::uninit({rows, 2});  // mean, inv_std
  for (int64_t i = 0; i < rows; ++i) {
    const double* x = a->value.data() + i * cols;
    double* y = out.data() + i * cols;
    const double mean = kern::ops().sum(x, size_t(cols)) / double(cols);
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= double(cols);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    stats.at(i, 0) = mean;
    stats.at(i, 1) = inv_std;
    const double* gn = gain->value.data();
    const double* bs = bias->value.data();
    for (int64_t j = 0; j < cols; ++j)
      y[j] = gn[j] * (x[j] - mean) * inv_std + bs[j];
  }
  return mk(std::move(out), {a, gain, bias},
            [rows, cols, stats = std::move(stats)](Node& node) {
              Node& in = *node.inputs[0];
              Node& ng = *node.inputs[1];
              Node& nb = *node.inputs[2];
              const double* gn = ng.value.data();
              for (int64_t i = 0; i < rows; ++i) {
                const double* x = in.value.data() + i * cols;
                const double* g = node.grad.data() + i * cols;
                const double mean = stats.at(i, 0);
                const double inv_std = stats.at(i, 1);
                // accumulate gain/bias grads
                if (ng.requires_grad) {
                  Tensor& gg = grad_buf(ng);
                  for (int64_t j = 0; j < cols; ++j)
                    gg[j] += g[j] * (x[j] - mean) * inv_std;
                }
                if (nb.requires_grad) {
                  Tensor& gb = grad_buf(nb);
                  for (int64_t j = 0; j < cols; ++j) gb[j] += g[j];
                }
                if (in.requires_grad) {
                  Tensor& gi = grad_buf(in);
                  double* gx = gi.data() + i * cols;
                  // dxhat = g * gain; dx via standard layernorm backward
                  double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                  for (int64_t j = 0; j < cols; ++j) {
                    const double xhat = (x[j] - mean) * inv_std;
                    const double dxh = g[j] * gn[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat;
                  }
                  const double invn = 1.0 / double(cols);
                  for (int64_t j = 0; j < cols; ++j) {
                    const double xhat = (x[j] - mean) * inv_std;
                    const double dxh = g[j] * gn[j];
                    gx[j] += inv_std * (dxh - invn * sum_dxhat -
                                        invn * xhat * sum_dxhat_xhat);
                  }
                }
              }
            });
}

// -------------------------------------------------------------------- conv2d

namespace {

struct ConvDims {
  int64_t N, Cin, H, W, Cout, kh, kw, OH, OW;
  int stride, pad;
};

void im2col(const double* x, const ConvDims& d, double* col) {
  // col is [Cin*kh*kw, OH*OW]
  const int64_t plane = d.H * d.W;
  int64_t row = 0;
  for (int64_t c = 0; c < d.Cin; ++c) {
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx, ++row) {
        double* out = col + row * d.OH * d.OW;
        const double* src = x + c * plane;
        for (int64_t oy = 0; oy < d.OH; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) {
            std::memset(out + oy * d.OW, 0, sizeof(double) * size_t(d.OW));
            continue;
          }
          for (int64_t ox = 0; ox < d.OW; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + kx;
            out[oy * d.OW + ox] =
                (ix >= 0 && ix < d.W) ? src[iy * d.W + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvDims& d, double* x) {
  const int64_t plane = d.H * d.W;
  int64_t row = 0;
  for (int64_t c = 0; c < d.Cin; ++c) {
    for (int64_t ky = 0; ky < d.kh; ++ky) {
      for (int64_t kx = 0; kx < d.kw; ++kx, ++row) {
        const double* src = col + row * d.OH * d.OW;
        double* dst = x + c * plane;
        for (int64_t oy = 0; oy < d.OH; ++oy) {
          const int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          for (int64_t ox = 0; ox < d.OW; ++ox) {
            const int64_t ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.W) dst[iy * d.W + ix] += src[oy * d.OW + ox];
          }
        }
      }
    }
  }
}

std::vector<double>& conv_scratch(size_t n) {
  thread_local std::vector<double> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  if (xv.ndim() != 4 || wv.ndim() != 4)
    throw std::invalid_argument("conv2d: NCHW input and OIHW weights required");
  ConvDims d;
  d.N = xv.dim(0);
  d.Cin = xv.dim(1);
  d.H = xv.dim(2);
  d.W = xv.dim(3);
  d.Cout = wv.dim(0);
  d.kh = wv.dim(2);
  d.kw = wv.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (wv.dim(1) != d.Cin)
    throw std::invalid_argument("conv2d: channel mismatch");
  d.OH = (d.H + 2 * pad - d.kh) / stride + 1;
  d.OW = (d.W + 2 * pad - d.kw) / stride + 1;
  const int64_t K = d.Cin * d.kh * d.kw;
  const int64_t P = d.OH * d.OW;

  Tensor out = Tensor::uninit({d.N, d.Cout, d.OH, d.OW});
  auto& col = conv_scratch(size_t(K * P));
  for (int64_t n = 0; n < d.N; ++n) {
    im2col(xv.data() + n * d.Cin * d.H * d.W, d, col.data());
    kern::ops().gemm_nn(wv.data(), col.data(),
                        out.data() + n * d.Cout * P, int(d.Cout), int(K),
                        int(P), false);
  }
  if (b) {
    const double* bias = b->value.data();
    for (int64_t n = 0; n < d.N; ++n)
      for (int64_t c = 0; c < d.Cout; ++c) {
        double* plane = out.data() + (n * d.Cout + c) * P;
        const double bv = bias[c];
        for (int64_t i = 0; i < P; ++i) plane[i] += bv;
      }
  }
  std::vector<Var> ins = b ? std::vector<Var>{x, w, b}
                           : std::vector<Var>{x, w};
  return mk(std::move(out), std::move(ins), [d, K, P](Node& node) {
    Node& nx = *node.inputs[0];
    Node& nw = *node.inputs[1];
    Node* nb = node.inputs.size() > 2 ? node.inputs[2].get() : nullptr;
    const Tensor& g = node.grad;
    auto& col = conv_scratch(size_t(2 * K * P));
    double* colbuf = col.data();
    double* dcol = col.data() + K * P;
    if (nb && nb->requires_grad) {
      Tensor& gb = grad_buf(*nb);
      for (int64_t n = 0; n < d.N; ++n)
        for (int64_t c = 0; c < d.Cout; ++c)
          gb[c] += kern::ops().sum(g.data() + (n * d.Cout + c) * P, size_t(P));
    }
    Tensor* gw = nw.requires_grad ? &grad_buf(nw) : nullptr;
    Tensor* gx = nx.requires_grad ? &grad_buf(nx) : nullptr;
    for (int64_t n = 0; n < d.N; ++n) {
      const double* gn = g.data() + n * d.Cout * P;
      if (gw || gx)
        im2col(nx.value.data() + n * d.Cin * d.H * d.W, d, colbuf);
      if (gw)  // dW += g_n * col^T
        kern::ops().gemm_nt(gn, colbuf, gw->data(), int(d.Cout), int(P),
                            int(K), true);
      if (gx) {  // dcol = W^T * g_n ; dx += col2im(dcol)
        kern::ops().gemm_tn(nw.value.data(), gn, dcol, int(K), int(d.Cout),
                            int(P), false);
        col2im_add(dcol, d, gx->data() + n * d.Cin * d.H * d.W);
      }
    }
  });
}

Var add_chan_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x->value;
  const int64_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  Tensor out = xv;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double* plane = out.data() + (n * C + c) * P;
      const double b = bias->value[c];
      for (int64_t i = 0; i < P; ++i) plane[i] += b;
    }
  return mk(std::move(out), {x, bias}, [N, C, P](Node& node) {
    if (node.inputs[0]->requires_grad) node.inputs[0]->accumulate(node.grad);
    if (node.inputs[1]->requires_grad) {
      Tensor& gb = grad_buf(*node.inputs[1]);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
          gb[c] += kern::ops().sum(node.grad.data() + (n * C + c) * P,
                                   size_t(P));
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  const int64_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
  const int64_t P = av.dim(2) * av.dim(3);
  if (bv.dim(0) != N || bv.dim(2) != av.dim(2) || bv.dim(3) != av.dim(3))
    throw std::invalid_argument("concat_channels: shape mismatch");
  Tensor out = Tensor::uninit({N, Ca + Cb, av.dim(2), av.dim(3)});
  for (int64_t n = 0; n < N; ++n) {
    std::memcpy(out.data() + n * (Ca + Cb) * P, av.data() + n * Ca * P,
                sizeof(double) * size_t(Ca * P));
    std::memcpy(out.data() + (n * (Ca + Cb) + Ca) * P, bv.data() + n * Cb * P,
                sizeof(double) * size_t(Cb * P));
  }
  return mk(std::move(out), {a, b}, [N, Ca, Cb, P](Node& node) {
    for (int h = 0; h < 2; ++h) {
      Node& in = *node.inputs[h];
      if (!in.requires_grad) continue;
      Tensor& gb = grad_buf(in);
      const int64_t C = h == 0 ? Ca : Cb;
      const int64_t off = h == 0 ? 0 : Ca;
      for (int64_t n = 0; n < N; ++n)
        kern::ops().add(gb.data() + n * C * P,
                        node.grad.data() + (n * (Ca + Cb) + off) * P,
                        gb.data() + n * C * P, size_t(C * P));
    }
  });
}

Var slice_channels(const Var& x, int64_t start, int64_t len) {
  const Tensor& xv = x->value;
  const int64_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  if (start < 0 || start + len > C)
    throw std::invalid_argument("slice_channels: range out of bounds");
  Tensor out = Tensor::uninit({N, len, xv.dim(2), xv.dim(3)});
  for (int64_t n = 0; n < N; ++n)
    std::memcpy(out.data() + n * len * P, xv.data() + (n * C + start) * P,
                sizeof(double) * size_t(len * P));
  return mk(std::move(out), {x}, [N, C, P, start, len](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    for (int64_t n = 0; n < N; ++n)
      kern::ops().add(gb.data() + (n * C + start) * P,
                      node.grad.data() + n * len * P,
                      gb.data() + (n * C + start) * P, size_t(len * P));
  });
}

Var mean_spatial(const Var& x) {
  const Tensor& xv = x->value;
  const int64_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  Tensor out = Tensor::uninit({N, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      out.at(n, c) =
          kern::ops().sum(xv.data() + (n * C + c) * P, size_t(P)) / double(P);
  return mk(std::move(out), {x}, [N, C, P](Node& node) {
    Node& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor& gb = grad_buf(in);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const double g = node.grad.at(n, c) / double(P);
        double* dst = gb.data() + (n * C + c) * P;
        for (int64_t i = 0; i < P; ++i) dst[i] += g;
      }
  });
}

Var upsample_bilinear2x(const Var& x) {
  const Tensor& xv = x->value;
  const int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t OH = H * 2, OW = W * 2;
  Tensor out = Tensor::uninit({N, C, OH, OW});
  // half-pixel mapping: sx = (ox + 0.5)/2 - 0.5
  std::vector<int64_t> x0(OW), x1(OW);
  std::vector<double> wx(OW);
  for (int64_t ox = 0; ox < OW; ++ox) {
    double sx = (double(ox) + 0.5) * 0.5 - 0.5;
    sx = std::max(0.0, std::min(sx, double(W - 1)));
    x0[ox] = int64_t(std::floor(sx));
    x1[ox] = std::min(x0[ox] + 1, W - 1);
    wx[ox] = sx - double(x0[ox]);
  }
  std::vector<int64_t> y0(OH), y1(OH);
  std::vector<double> wy(OH);
  for (int64_t oy = 0; oy < OH; ++oy) {
    double sy = (double(oy) + 0.5) * 0.5 - 0.5;
    sy = std::max(0.0, std::min(sy, double(H - 1)));
    y0[oy] = int64_t(std::floor(sy));
    y1[oy] = std::min(y0[oy] + 1, H - 1);
    wy[oy] = sy - double(y0[oy]);
  }
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* src = xv.data() + nc * H * W;
    double* dst = out.data() + nc * OH * OW;
    for (int64_t oy = 0; oy < OH; ++oy)
      for (int64_t ox = 0; ox < OW; ++ox) {
        const double a = src[y0[oy] * W + x0[ox]];
        const double b = src[y0[oy] * W + x1[ox]];
        const double c = src[y1[oy] * W + x0[ox]];
        const double d = src[y1[oy] * W + x1[ox]];
        const double top = a + (b - a) * wx[ox];
        const double bot = c + (d - c) * wx[ox];
        dst[oy * OW + ox] = top + (bot - top) * wy[oy];
      }
  }
  return mk(std::move(out), {x},
            [N, C, H, W, OH, OW, x0, x1, wx, y0, y1, wy](Node& node) {
              Node& in = *node.inputs[0];
              if (!in.requires_grad) return;
              Tensor& gb = grad_buf(in);
              for (int64_t nc = 0; nc < N * C; ++nc) {
                double* dst = gb.data() + nc * H * W;
                const double* g = node.grad.data() + nc * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy)
                  for (int64_t ox = 0; ox < OW; ++ox) {
                    const double gv = g[oy * OW + ox];
                    const double fx = wx[ox], fy = wy[oy];
                    dst[y0[oy] * W + x0[ox]] += gv * (1 - fx) * (1 - fy);
                    dst[y0[oy] * W + x1[ox]] += gv * fx * (1 - fy);
                    dst[y1[oy] * W + x0[ox]] += gv * (1 - fx) * fy;
                    dst[y1[oy] * W + x1[ox]] += gv * fx * fy;
                  }
              }
            });
}

Var adain(const Var& x, const Var& scale, const Var& bias, double eps) {
  const Tensor& xv = x->value;
  const int64_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  if (scale->value.numel() != N * C || bias->value.numel() != N * C)
    throw std::invalid_argument("adain: scale/bias must be [N,C]");
  Tensor out = Tensor::uninit(xv.shape());
  Tensor stats = Tensor::uninit({N, C, 2});  // mean, std
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* src = xv.data() + (n * C + c) * P;
      double* dst = out.data() + (n * C + c) * P;
      const double mean = kern::ops().sum(src, size_t(P)) / double(P);
      double var = 0.0;
      for (int64_t i = 0; i < P; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= double(P);
      const double sd = std::sqrt(var);
      stats[(n * C + c) * 2 + 0] = mean;
      stats[(n * C + c) * 2 + 1] = sd;
      const double s = scale->value[n * C + c];
      const double b = bias->value[n * C + c];
      const double inv = 1.0 / (sd + eps);
      for (int64_t i = 0; i < P; ++i) dst[i] = s * (src[i] - mean) * inv + b;
    }
  return mk(std::move(out), {x, scale, bias},
            [N, C, P, eps, stats = std::move(stats)](Node& node) {
              Node& nx = *node.inputs[0];
              Node& ns = *node.inputs[1];
              Node& nb = *node.inputs[2];
              for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                  const int64_t o = n * C + c;
                  const double mean = stats[o * 2 + 0];
                  const double sd = stats[o * 2 + 1];
                  const double inv = 1.0 / (sd + eps);
                  const double s = ns.value[o];
                  const double* src = nx.value.data() + o * P;
                  const double* g = node.grad.data() + o * P;
                  const double gsum = kern::ops().sum(g, size_t(P));
                  double gu = 0.0;  // sum g*(x-mean)
                  for (int64_t i = 0; i < P; ++i)
                    gu += g[i] * (src[i] - mean);
                  if (ns.requires_grad) grad_buf(ns)[o] += gu * inv;
                  if (nb.requires_grad) grad_buf(nb)[o] += gsum;
                  if (nx.requires_grad) {
                    Tensor& gx = grad_buf(nx);
                    double* dst = gx.data() + o * P;
                    const double invP = 1.0 / double(P);
                    // d/dx of s*(x-mean)/(sd+eps): through x, mean and sd
                    const double sd_safe = sd > 1e-300 ? sd : 1e-300;
                    const double k1 = s * inv;
                    const double k2 = s * inv * inv * gu / (double(P) * sd_safe);
                    for (int64_t i = 0; i < P; ++i) {
                      const double u = src[i] - mean;
                      dst[i] += k1 * (g[i] - gsum * invP) - k2 * u;
                    }
                  }
                }
            });
}

// --------------------------------------------------------- warping / gathers

namespace {

struct TapWeights {
  int64_t x0, x1, y0, y1;
  double wx, wy;
  bool clamped_x, clamped_y;
};

inline TapWeights resolve_tap(double px, double py, int64_t H, int64_t W) {
  TapWeights t;
  double cx = std::max(0.0, std::min(px, double(W - 1)));
  double cy = std::max(0.0, std::min(py, double(H - 1)));
  t.clamped_x = cx != px;
  t.clamped_y = cy != py;
  t.x0 = int64_t(std::floor(cx));
  t.y0 = int64_t(std::floor(cy));
  t.x1 = std::min(t.x0 + 1, W - 1);
  t.y1 = std::min(t.y0 + 1, H - 1);
  t.wx = cx - double(t.x0);
  t.wy = cy - double(t.y0);
  return t;
}

inline double tap_value(const double* plane, const TapWeights& t, int64_t W) {
  const double a = plane[t.y0 * W + t.x0];
  const double b = plane[t.y0 * W + t.x1];
  const double c = plane[t.y1 * W + t.x0];
  const double d = plane[t.y1 * W + t.x1];
  const double top = a + (b - a) * t.wx;
  const double bot = c + (d - c) * t.wx;
  return top + (bot - top) * t.wy;
}

inline double tap_dx(const double* plane, const TapWeights& t, int64_t W) {
  if (t.clamped_x) return 0.0;
  const double a = plane[t.y0 * W + t.x0];
  const double b = plane[t.y0 * W + t.x1];
  const double c = plane[t.y1 * W + t.x0];
  const double d = plane[t.y1 * W + t.x1];
  return (b - a) * (1.0 - t.wy) + (d - c) * t.wy;
}

inline double tap_dy(const double* plane, const TapWeights& t, int64_t W) {
  if (t.clamped_y) return 0.0;
  const double a = plane[t.y0 * W + t.x0];
  const double b = plane[t.y0 * W + t.x1];
  const double c = plane[t.y1 * W + t.x0];
  const double d = plane[t.y1 * W + t.x1];
  return (c - a) * (1.0 - t.wx) + (d - b) * t.wx;
}

inline void tap_scatter(double* plane, const TapWeights& t, int64_t W,
                        double g) {
  plane[t.y0 * W + t.x0] += g * (1 - t.wx) * (1 - t.wy);
  plane[t.y0 * W + t.x1] += g * t.wx * (1 - t.wy);
  plane[t.y1 * W + t.x0] += g * (1 - t.wx) * t.wy;
  plane[t.y1 * W + t.x1] += g * t.wx * t.wy;
}

}  // namespace

Var bilinear_sample(const Var& f, const Var& off) {
  const Tensor& fv = f->value;
  const Tensor& ov = off->value;
  const int64_t N = fv.dim(0), C = fv.dim(1), H = fv.dim(2), W = fv.dim(3);
  if (ov.dim(0) != N || ov.dim(1) != 2 || ov.dim(2) != H || ov.dim(3) != W)
    throw std::invalid_argument("bilinear_sample: offsets must be [N,2,H,W]");
  Tensor out = Tensor::uninit(fv.shape());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const double dx = ov.at(n, 0, y, x);
        const double dy = ov.at(n, 1, y, x);
        const TapWeights t =
            resolve_tap(double(x) + dx, double(y) + dy, H, W);
        for (int64_t c = 0; c < C; ++c)
          out.at(n, c, y, x) = tap_value(fv.data() + (n * C + c) * H * W, t, W);
      }
  return mk(std::move(out), {f, off}, [N, C, H, W](Node& node) {
    Node& nf = *node.inputs[0];
    Node& no = *node.inputs[1];
    Tensor* gf = nf.requires_grad ? &grad_buf(nf) : nullptr;
    Tensor* go = no.requires_grad ? &grad_buf(no) : nullptr;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const double dx = no.value.at(n, 0, y, x);
          const double dy = no.value.at(n, 1, y, x);
          const TapWeights t =
              resolve_tap(double(x) + dx, double(y) + dy, H, W);
          double acc_dx = 0.0, acc_dy = 0.0;
          for (int64_t c = 0; c < C; ++c) {
            const double g = node.grad.at(n, c, y, x);
            const double* plane = nf.value.data() + (n * C + c) * H * W;
            if (gf) tap_scatter(gf->data() + (n * C + c) * H * W, t, W, g);
            if (go) {
              acc_dx += g * tap_dx(plane, t, W);
              acc_dy += g * tap_dy(plane, t, W);
            }
          }
          if (go) {
            go->at(n, 0, y, x) += acc_dx;
            go->at(n, 1, y, x) += acc_dy;
          }
        }
  });
}

Var deform_gather(const Var& f, const Var& off, const Var& w) {
  const Tensor& fv = f->value;
  const Tensor& ov = off->value;
  const Tensor& wv = w->value;
  const int64_t N = fv.dim(0), C = fv.dim(1), H = fv.dim(2), W = fv.dim(3);
  if (ov.dim(1) != 18 || wv.dim(1) != 9)
    throw std::invalid_argument("deform_gather: expects 18 offset / 9 weight "
                                "channels");
  Tensor out(fv.shape());
  auto base = [](int j, int& by, int& bx) {
    by = j / 3 - 1;
    bx = j % 3 - 1;
  };
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        for (int j = 0; j < 9; ++j) {
          int by, bx;
          base(j, by, bx);
          const double dx = ov.at(n, 2 * j, y, x);
          const double dy = ov.at(n, 2 * j + 1, y, x);
          const double wj = wv.at(n, j, y, x);
          const TapWeights t = resolve_tap(double(x + bx) + dx,
                                           double(y + by) + dy, H, W);
          for (int64_t c = 0; c < C; ++c)
            out.at(n, c, y, x) +=
                wj * tap_value(fv.data() + (n * C + c) * H * W, t, W);
        }
  return mk(std::move(out), {f, off, w}, [N, C, H, W, base](Node& node) {
    Node& nf = *node.inputs[0];
    Node& no = *node.inputs[1];
    Node& nw = *node.inputs[2];
    Tensor* gf = nf.requires_grad ? &grad_buf(nf) : nullptr;
    Tensor* go = no.requires_grad ? &grad_buf(no) : nullptr;
    Tensor* gw = nw.requires_grad ? &grad_buf(nw) : nullptr;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          for (int j = 0; j < 9; ++j) {
            int by, bx;
            base(j, by, bx);
            const double dx = no.value.at(n, 2 * j, y, x);
            const double dy = no.value.at(n, 2 * j + 1, y, x);
            const double wj = nw.value.at(n, j, y, x);
            const TapWeights t = resolve_tap(double(x + bx) + dx,
                                             double(y + by) + dy, H, W);
            double acc_dx = 0.0, acc_dy = 0.0, acc_w = 0.0;
            for (int64_t c = 0; c < C; ++c) {
              const double g = node.grad.at(n, c, y, x);
              const double* plane = nf.value.data() + (n * C + c) * H * W;
              if (gf)
                tap_scatter(gf->data() + (n * C + c) * H * W, t, W, g * wj);
              if (go) {
                acc_dx += g * wj * tap_dx(plane, t, W);
                acc_dy += g * wj * tap_dy(plane, t, W);
              }
              if (gw) acc_w += g * tap_value(plane, t, W);
            }
            if (go) {
              go->at(n, 2 * j, y, x) += acc_dx;
              go->at(n, 2 * j + 1, y, x) += acc_dy;
            }
            if (gw) gw->at(n, j, y, x) += acc_w;
          }
  });
}

// ------------------------------------------------------------------ geometry

namespace {

void rotation_and_derivs(const double* ang, double R[9], double dRx[9],
                         double dRy[9], double dRz[9]) {
  const double cx = std::cos(ang[0]), sx = std::sin(ang[0]);
  const double cy = std::cos(ang[1]), sy = std::sin(ang[1]);
  const double cz = std::cos(ang[2]), sz = std::sin(ang[2]);
  // R = Rz * Ry * Rx
  const double Rx[9] = {1, 0, 0, 0, cx, -sx, 0, sx, cx};
  const double Ry[9] = {cy, 0, sy, 0, 1, 0, -sy, 0, cy};
  const double Rz[9] = {cz, -sz, 0, sz, cz, 0, 0, 0, 1};
  const double dRx_[9] = {0, 0, 0, 0, -sx, -cx, 0, cx, -sx};
  const double dRy_[9] = {-sy, 0, cy, 0, 0, 0, -cy, 0, -sy};
  const double dRz_[9] = {-sz, -cz, 0, cz, -sz, 0, 0, 0, 0};
  auto mm = [](const double a[9], const double b[9], double c[9]) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
        c[i * 3 + j] = s;
      }
  };
  double zy[9], ydx[9], dzy[9];
  mm(Rz, Ry, zy);
  mm(zy, Rx, R);
  mm(zy, dRx_, dRx);
  mm(Ry, Rx, ydx);  // reuse: Ry*Rx
  double tmp[9];
  mm(dRy_, Rx, tmp);
  mm(Rz, tmp, dRy);
  mm(dRz_, ydx, dzy);
  for (int i = 0; i < 9; ++i) dRz[i] = dzy[i];
}

}  // namespace

Var euler_rotate(const Var& p, const Var& angles) {
  const Tensor& pv = p->value;
  if (pv.ndim() != 2 || pv.dim(1) != 3)
    throw std::invalid_argument("euler_rotate: points must be [M,3]");
  if (angles->value.numel() != 3)
    throw std::invalid_argument("euler_rotate: angles must have 3 entries");
  double R[9], dRx[9], dRy[9], dRz[9];
  rotation_and_derivs(angles->value.data(), R, dRx, dRy, dRz);
  const int64_t M = pv.dim(0);
  Tensor out = Tensor::uninit({M, 3});
  // y = p * R^T
  kern::ops().gemm_nt(pv.data(), R, out.data(), int(M), 3, 3, false);
  return mk(std::move(out), {p, angles}, [M](Node& node) {
    Node& np = *node.inputs[0];
    Node& na = *node.inputs[1];
    double R[9], dRx[9], dRy[9], dRz[9];
    rotation_and_derivs(na.value.data(), R, dRx, dRy, dRz);
    if (np.requires_grad) {  // dp = g * R
      Tensor& gp = grad_buf(np);
      kern::ops().gemm_nn(node.grad.data(), R, gp.data(), int(M), 3, 3, true);
    }
    if (na.requires_grad) {
      Tensor& ga = grad_buf(na);
      const double* dRs[3] = {dRx, dRy, dRz};
      for (int a = 0; a < 3; ++a) {
        // d/da = sum_ij g_ij * (p * dR^T)_ij
        double s = 0.0;
        for (int64_t i = 0; i < M; ++i)
          for (int j = 0; j < 3; ++j) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k)
              v += np.value.at(i, k) * dRs[a][j * 3 + k];
            s += node.grad.at(i, j) * v;
          }
        ga[a] += s;
      }
    }
  });
}

}  // namespace rt::ag
