#pragma once

#include <string>
#include <vector>

#include "realtalk/autodiff.hpp"
#include "realtalk/nn.hpp"

// Reference-feature alignment modules. The renderer picks exactly one kind;
// all three accept and return identically shaped feature maps so they are
// switchable by configuration alone.

namespace rt::align {

enum class Kind { fia_cross_attention, flow_warp, deformation };

Kind kind_from_string(const std::string& s);
std::string to_string(Kind k);

// Tokens are spatial positions; queries come from the decoder path, keys and
// values from the reference pyramid. Output is added residually to f_q.
ag::Var cross_attend(const ag::Var& f_q, const ag::Var& f_ref,
                     const nn::MultiHeadAttention& mha,
                     std::vector<Tensor>* probs_out = nullptr);

// Predicts a per-pixel 2D offset field from [f_q, f_ref], warps f_ref by it
// (bilinear, replicate border) and adds the warped features residually.
struct FlowAlign {
  nn::Conv2d head1, head2;

  static FlowAlign create(nn::ParamStore& ps, Rng& rng,
                          const std::string& name, int64_t channels);
  ag::Var apply(const ag::Var& f_q, const ag::Var& f_ref) const;
};

// Predicts per-location 3x3 tap offsets and combination weights from f_q,
// gathers f_ref at the deformed taps and adds the result residually.
struct DeformAlign {
  nn::Conv2d head1, head2;

  static DeformAlign create(nn::ParamStore& ps, Rng& rng,
                            const std::string& name, int64_t channels);
  ag::Var apply(const ag::Var& f_q, const ag::Var& f_ref) const;
};

}  // namespace rt::align
