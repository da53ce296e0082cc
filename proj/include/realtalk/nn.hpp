#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "realtalk/autodiff.hpp"
#include "realtalk/rng.hpp"
#include "realtalk/tensor.hpp"

namespace rt::nn {

// Named parameter collection with one gradient buffer per parameter.
// Iteration follows registration order, which is how checkpoints, optimizers
// and initialization stay deterministic.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int64_t> shape);
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  ag::Var var(const std::string& name);  // grad-requiring leaf

  const std::vector<std::string>& names() const { return order_; }
  int64_t count_scalars() const;
  void zero_grad();
  double grad_norm() const;
  void scale_grads(double s);

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
  };
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> map_;
};

// ---- initializers ----
void fill_normal(Tensor& t, Rng& rng, double stddev);
void fill_uniform(Tensor& t, Rng& rng, double lo, double hi);
void init_xavier(Tensor& t, Rng& rng, int64_t fan_in, int64_t fan_out);
void init_kaiming_conv(Tensor& t, Rng& rng);  // OIHW, sqrt(2/fan_in)

// ---- layers ----
// Layers register their parameters on construction and build graph nodes in
// apply(). They keep only names plus a pointer to the owning store.

struct Linear {
  ParamStore* ps = nullptr;
  std::string w, b;
  int64_t in = 0, out = 0;

  static Linear create(ParamStore& ps, Rng& rng, const std::string& name,
                       int64_t in, int64_t out, double weight_scale = 1.0);
  ag::Var apply(const ag::Var& x) const;  // [M,in] -> [M,out]
};

struct LayerNorm {
  ParamStore* ps = nullptr;
  std::string gain, bias;
  double eps = 1e-5;

  static LayerNorm create(ParamStore& ps, const std::string& name,
                          int64_t dim);
  ag::Var apply(const ag::Var& x) const;
};

// Multi-head attention core shared by the encoder, decoder and the renderer's
// reference alignment. Exposes per-head attention probabilities on request.
ag::Var mha_core(const ag::Var& q, const ag::Var& k, const ag::Var& v,
                 int heads, std::vector<Tensor>* probs_out = nullptr);

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;

  static MultiHeadAttention create(ParamStore& ps, Rng& rng,
                                   const std::string& name, int64_t dim,
                                   int heads);
  ag::Var apply(const ag::Var& q_in, const ag::Var& kv_in,
                std::vector<Tensor>* probs_out = nullptr) const;
};

struct FeedForward {
  Linear fc1, fc2;

  static FeedForward create(ParamStore& ps, Rng& rng, const std::string& name,
                            int64_t dim, int64_t hidden);
  ag::Var apply(const ag::Var& x) const;
};

// Pre-LN transformer encoder block: x += attn(ln(x)); x += ffn(ln(x)).
struct EncoderBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  static EncoderBlock create(ParamStore& ps, Rng& rng, const std::string& name,
                             int64_t dim, int heads, int64_t ffn_hidden);
  ag::Var apply(const ag::Var& x, std::vector<Tensor>* probs_out) const;
};

// Pre-LN decoder block: self-attention over queries, cross-attention to the
// encoder memory, feed-forward.
struct DecoderBlock {
  LayerNorm ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  static DecoderBlock create(ParamStore& ps, Rng& rng, const std::string& name,
                             int64_t dim, int heads, int64_t ffn_hidden);
  ag::Var apply(const ag::Var& q, const ag::Var& memory,
                std::vector<Tensor>* self_probs,
                std::vector<Tensor>* cross_probs) const;
};

struct Conv2d {
  ParamStore* ps = nullptr;
  std::string w, b;
  int stride = 1, pad = 1;

  static Conv2d create(ParamStore& ps, Rng& rng, const std::string& name,
                       int64_t cin, int64_t cout, int ksize, int stride,
                       int pad);
  ag::Var apply(const ag::Var& x) const;
};

// y = act(x + c2(act(c1(x)))), LeakyReLU(slope); slope 0 gives plain ReLU.
struct ResBlock {
  Conv2d c1, c2;
  double slope = 0.0;

  static ResBlock create(ParamStore& ps, Rng& rng, const std::string& name,
                         int64_t channels, double slope);
  ag::Var apply(const ag::Var& x) const;
};

ag::Var activate(const ag::Var& x, double slope);

}  // namespace rt::nn
