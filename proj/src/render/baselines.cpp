#include "realtalk/baselines.hpp"

#include <stdexcept>

namespace rt::align {

using ag::Var;

Kind kind_from_string(const std::string& s) {
  if (s == "fia" || s == "cross_attention") return Kind::fia_cross_attention;
  if (s == "flow") return Kind::flow_warp;
  if (s == "deformation" || s == "deform") return Kind::deformation;
  throw std::invalid_argument("unknown alignment kind: " + s);
}

std::string to_string(Kind k) {
  switch (k) {
    case Kind::fia_cross_attention: return "fia";
    case Kind::flow_warp: return "flow";
    case Kind::deformation: return "deformation";
  }
  return "?";
}

Var cross_attend(const Var& f_q, const Var& f_ref,
                 const nn::MultiHeadAttention& mha,
                 std::vector<Tensor>* probs_out) {
  const Tensor& qv = f_q->value;
  if (!qv.same_shape(f_ref->value))
    throw std::invalid_argument("cross_attend: shape mismatch");
  const int64_t N = qv.dim(0), C = qv.dim(1), H = qv.dim(2), W = qv.dim(3);
  std::vector<Var> outs;
  outs.reserve(size_t(N));
  for (int64_t n = 0; n < N; ++n) {
    Var q_tokens = ag::transpose2d(
        ag::reshape(ag::slice_rows(f_q, n, 1), {C, H * W}));
    Var kv_tokens = ag::transpose2d(
        ag::reshape(ag::slice_rows(f_ref, n, 1), {C, H * W}));
    Var attended = mha.apply(q_tokens, kv_tokens, probs_out);
    outs.push_back(
        ag::reshape(ag::transpose2d(attended), {int64_t(1), C, H, W}));
  }
  Var delta = outs.size() == 1 ? outs[0] : ag::concat_rows(outs);
  return ag::add(f_q, delta);
}

FlowAlign FlowAlign::create(nn::ParamStore& ps, Rng& rng,
                            const std::string& name, int64_t channels) {
  FlowAlign f;
  const int64_t hidden = std::max<int64_t>(channels / 2, 4);
  f.head1 = nn::Conv2d::create(ps, rng, name + ".h1", channels * 2, hidden, 3,
                               1, 1);
  f.head2 = nn::Conv2d::create(ps, rng, name + ".h2", hidden, 2, 3, 1, 1);
  // offsets start at zero: identity warp
  ps.value(f.head2.w).fill(0.0);
  return f;
}

Var FlowAlign::apply(const Var& f_q, const Var& f_ref) const {
  if (!f_q->value.same_shape(f_ref->value))
    throw std::invalid_argument("flow_align: shape mismatch");
  const double span = double(std::max(f_q->value.dim(2), f_q->value.dim(3)));
  Var h = ag::leaky_relu(head1.apply(ag::concat_channels(f_q, f_ref)), 0.2);
  Var offsets = ag::clamp(head2.apply(h), -span, span);
  Var warped = ag::bilinear_sample(f_ref, offsets);
  return ag::add(f_q, warped);
}

DeformAlign DeformAlign::create(nn::ParamStore& ps, Rng& rng,
                                const std::string& name, int64_t channels) {
  DeformAlign d;
  d.head1 = nn::Conv2d::create(ps, rng, name + ".h1", channels, channels, 3,
                               1, 1);
  d.head2 = nn::Conv2d::create(ps, rng, name + ".h2", channels, 27, 3, 1, 1);
  // zero offsets and zero combination weights at init: pure pass-through
  ps.value(d.head2.w).fill(0.0);
  return d;
}

Var DeformAlign::apply(const Var& f_q, const Var& f_ref) const {
  if (!f_q->value.same_shape(f_ref->value))
    throw std::invalid_argument("deform_align: shape mismatch");
  const double span = double(std::max(f_q->value.dim(2), f_q->value.dim(3)));
  Var h = ag::leaky_relu(head1.apply(f_q), 0.2);
  Var fields = head2.apply(h);
  Var offsets = ag::clamp(ag::slice_channels(fields, 0, 18), -span, span);
  Var weights = ag::slice_channels(fields, 18, 9);
  Var gathered = ag::deform_gather(f_ref, offsets, weights);
  return ag::add(f_q, gathered);
}

}  // namespace rt::align
