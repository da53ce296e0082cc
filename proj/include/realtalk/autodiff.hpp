#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "realtalk/tensor.hpp"

// Reverse-mode autodiff over Tensor. A forward pass builds a dynamic graph of
// shared_ptr<Node>; backward() runs a topological sweep and accumulates
// gradients, additionally mirroring leaf gradients into external sinks
// (parameter stores).

namespace rt::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_live = false;
  Tensor* grad_sink = nullptr;  // parameter gradient slot, may be null
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
  void accumulate_raw(const double* g, int64_t n);
};

Var constant(Tensor v);
Var make_param(const Tensor& v, Tensor* grad_sink);
Var detach(const Var& a);

// Seeds d(root)/d(root) = 1 and propagates. Root is typically scalar; for
// non-scalars the seed is all-ones.
void backward(const Var& root);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var softplus(const Var& a);  // log(1 + e^x), overflow-safe
Var square(const Var& a);
Var abs_val(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// ---- reductions ----
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]

// ---- shape ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var slice_rows(const Var& a, int64_t start, int64_t len);
Var slice_cols(const Var& a, int64_t start, int64_t len);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(const Var& a, std::vector<int64_t> indices);

// ---- linear algebra ----
Var transpose2d(const Var& a);  // [M,N] -> [N,M]
// matmul with optional transposes; a is [M x K] (or [K x M] if ta), etc.
Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false);
Var add_row_bias(const Var& a, const Var& bias);   // [M,N] + [N]
Var softmax_rows(const Var& a);
Var layer_norm(const Var& a, const Var& gain, const Var& bias, double eps);

// ---- image ops (NCHW) ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_bilinear2x(const Var& x);
Var adain(const Var& x, const Var& scale, const Var& bias, double eps);
Var add_chan_bias(const Var& x, const Var& bias);  // [N,C,H,W] + [C]
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int64_t start, int64_t len);
Var mean_spatial(const Var& x);  // [N,C,H,W] -> [N,C]

// Bilinear warp: out[n,c,y,x] = f(n,c, y+off[n,1,y,x], x+off[n,0,y,x]),
// replicate border. off is [N,2,H,W] with channel 0 = dx, 1 = dy.
Var bilinear_sample(const Var& f, const Var& off);

// Deformable 3x3 gather: out[n,c,y,x] = sum_j w[n,j,y,x] *
//   f(n,c, y+base_y(j)+off[n,2j+1,y,x], x+base_x(j)+off[n,2j,y,x]).
// off is [N,18,H,W], w is [N,9,H,W]; taps ordered row-major over
// (dy,dx) in {-1,0,1}^2.
Var deform_gather(const Var& f, const Var& off, const Var& w);

// ---- geometry ----
// Rotates row vectors: y = p * R(ax,ay,az)^T with R = Rz*Ry*Rx.
// p is [M,3]; angles is [3].
Var euler_rotate(const Var& p, const Var& angles);

}  // namespace rt::ag
