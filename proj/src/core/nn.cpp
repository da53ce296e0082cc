#include "realtalk/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "realtalk/kernels.hpp"

namespace rt::nn {

using ag::Var;

Tensor& ParamStore::create(const std::string& name,
                           std::vector<int64_t> shape) {
  if (map_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  order_.push_back(name);
  Entry e{Tensor(shape), Tensor(shape)};
  auto [it, ok] = map_.emplace(name, std::move(e));
  return it->second.value;
}

Tensor& ParamStore::value(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second.value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second.value;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return it->second.grad;
}

ag::Var ParamStore::var(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end())
    throw std::invalid_argument("ParamStore: unknown parameter " + name);
  return ag::make_param(it->second.value, &it->second.grad);
}

int64_t ParamStore::count_scalars() const {
  int64_t n = 0;
  for (const auto& name : order_) n += map_.at(name).value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& name : order_) map_.at(name).grad.fill(0.0);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& name : order_) {
    const Tensor& g = map_.at(name).grad;
    s += kern::ops().sum_sq(g.data(), size_t(g.numel()));
  }
  return std::sqrt(s);
}

void ParamStore::scale_grads(double s) {
  for (auto& name : order_) {
    Tensor& g = map_.at(name).grad;
    kern::ops().scale(s, g.data(), size_t(g.numel()));
  }
}

// ---------------------------------------------------------------------- init

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
}

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

void init_xavier(Tensor& t, Rng& rng, int64_t fan_in, int64_t fan_out) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  fill_uniform(t, rng, -limit, limit);
}

void init_kaiming_conv(Tensor& t, Rng& rng) {
  const int64_t fan_in = t.dim(1) * t.dim(2) * t.dim(3);
  fill_normal(t, rng, std::sqrt(2.0 / double(fan_in)));
}

// -------------------------------------------------------------------- layers

Linear Linear::create(ParamStore& ps, Rng& rng, const std::string& name,
                      int64_t in, int64_t out, double weight_scale) {
  Linear l;
  l.ps = &ps;
  l.w = name + ".w";
  l.b = name + ".b";
  l.in = in;
  l.out = out;
  Tensor& w = ps.create(l.w, {in, out});
  init_xavier(w, rng, in, out);
  if (weight_scale != 1.0)
    kern::ops().scale(weight_scale, w.data(), size_t(w.numel()));
  ps.create(l.b, {out});
  return l;
}

Var Linear::apply(const Var& x) const {
  return ag::add_row_bias(ag::matmul(x, ps->var(w)), ps->var(b));
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& name,
                            int64_t dim) {
  LayerNorm ln;
  ln.ps = &ps;
  ln.gain = name + ".g";
  ln.bias = name + ".b";
  ps.create(ln.gain, {dim}).fill(1.0);
  ps.create(ln.bias, {dim});
  return ln;
}

Var LayerNorm::apply(const Var& x) const {
  return ag::layer_norm(x, ps->var(gain), ps->var(bias), eps);
}

Var mha_core(const Var& q, const Var& k, const Var& v, int heads,
             std::vector<Tensor>* probs_out) {
  const int64_t dim = q->value.dim(1);
  if (dim % heads != 0)
    throw std::invalid_argument("mha_core: dim not divisible by heads");
  const int64_t dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  std::vector<Var> ctx;
  ctx.reserve(size_t(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = ag::slice_cols(q, h * dh, dh);
    Var kh = ag::slice_cols(k, h * dh, dh);
    Var vh = ag::slice_cols(v, h * dh, dh);
    Var scores = ag::mul_scalar(ag::matmul(qh, kh, false, true), inv_sqrt);
    Var probs = ag::softmax_rows(scores);
    if (probs_out) probs_out->push_back(probs->value);
    ctx.push_back(ag::matmul(probs, vh));
  }
  return heads == 1 ? ctx[0] : ag::concat_cols(ctx);
}

MultiHeadAttention MultiHeadAttention::create(ParamStore& ps, Rng& rng,
                                              const std::string& name,
                                              int64_t dim, int heads) {
  MultiHeadAttention a;
  a.heads = heads;
  a.wq = Linear::create(ps, rng, name + ".wq", dim, dim);
  a.wk = Linear::create(ps, rng, name + ".wk", dim, dim);
  a.wv = Linear::create(ps, rng, name + ".wv", dim, dim);
  a.wo = Linear::create(ps, rng, name + ".wo", dim, dim);
  return a;
}

Var MultiHeadAttention::apply(const Var& q_in, const Var& kv_in,
                              std::vector<Tensor>* probs_out) const {
  Var q = wq.apply(q_in);
  Var k = wk.apply(kv_in);
  Var v = wv.apply(kv_in);
  return wo.apply(mha_core(q, k, v, heads, probs_out));
}

FeedForward FeedForward::create(ParamStore& ps, Rng& rng,
                                const std::string& name, int64_t dim,
                                int64_t hidden) {
  FeedForward f;
  f.fc1 = Linear::create(ps, rng, name + ".fc1", dim, hidden);
  f.fc2 = Linear::create(ps, rng, name + ".fc2", hidden, dim);
  return f;
}

Var FeedForward::apply(const Var& x) const {
  return fc2.apply(ag::relu(fc1.apply(x)));
}

EncoderBlock EncoderBlock::create(ParamStore& ps, Rng& rng,
                                  const std::string& name, int64_t dim,
                                  int heads, int64_t ffn_hidden) {
  EncoderBlock b;
  b.ln1 = LayerNorm::create(ps, name + ".ln1", dim);
  b.ln2 = LayerNorm::create(ps, name + ".ln2", dim);
  b.attn = MultiHeadAttention::create(ps, rng, name + ".attn", dim, heads);
  b.ffn = FeedForward::create(ps, rng, name + ".ffn", dim, ffn_hidden);
  return b;
}

Var EncoderBlock::apply(const Var& x, std::vector<Tensor>* probs_out) const {
  Var nx = ln1.apply(x);
  Var h = ag::add(x, attn.apply(nx, nx, probs_out));
  return ag::add(h, ffn.apply(ln2.apply(h)));
}

DecoderBlock DecoderBlock::create(ParamStore& ps, Rng& rng,
                                  const std::string& name, int64_t dim,
                                  int heads, int64_t ffn_hidden) {
  DecoderBlock b;
  b.ln1 = LayerNorm::create(ps, name + ".ln1", dim);
  b.ln2 = LayerNorm::create(ps, name + ".ln2", dim);
  b.ln3 = LayerNorm::create(ps, name + ".ln3", dim);
  b.self_attn =
      MultiHeadAttention::create(ps, rng, name + ".self", dim, heads);
  b.cross_attn =
      MultiHeadAttention::create(ps, rng, name + ".cross", dim, heads);
  b.ffn = FeedForward::create(ps, rng, name + ".ffn", dim, ffn_hidden);
  return b;
}

Var DecoderBlock::apply(const Var& q, const Var& memory,
                        std::vector<Tensor>* self_probs,
                        std::vector<Tensor>* cross_probs) const {
  Var nq = ln1.apply(q);
  Var h = ag::add(q, self_attn.apply(nq, nq, self_probs));
  h = ag::add(h, cross_attn.apply(ln2.apply(h), memory, cross_probs));
  return ag::add(h, ffn.apply(ln3.apply(h)));
}

Conv2d Conv2d::create(ParamStore& ps, Rng& rng, const std::string& name,
                      int64_t cin, int64_t cout, int ksize, int stride,
                      int pad) {
  Conv2d c;
  c.ps = &ps;
  c.w = name + ".w";
  c.b = name + ".b";
  c.stride = stride;
  c.pad = pad;
  Tensor& w = ps.create(c.w, {cout, cin, ksize, ksize});
  init_kaiming_conv(w, rng);
  ps.create(c.b, {cout});
  return c;
}

Var Conv2d::apply(const Var& x) const {
  return ag::conv2d(x, ps->var(w), ps->var(b), stride, pad);
}

ResBlock ResBlock::create(ParamStore& ps, Rng& rng, const std::string& name,
                          int64_t channels, double slope) {
  ResBlock r;
  r.slope = slope;
  r.c1 = Conv2d::create(ps, rng, name + ".c1", channels, channels, 3, 1, 1);
  r.c2 = Conv2d::create(ps, rng, name + ".c2", channels, channels, 3, 1, 1);
  return r;
}

Var activate(const Var& x, double slope) {
  return slope > 0.0 ? ag::leaky_relu(x, slope) : ag::relu(x);
}

Var ResBlock::apply(const Var& x) const {
  Var h = c2.apply(activate(c1.apply(x), slope));
  return activate(ag::add(x, h), slope);
}

}  // namespace rt::nn
