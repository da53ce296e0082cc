#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "realtalk/autodiff.hpp"
#include "realtalk/baselines.hpp"
#include "realtalk/nn.hpp"
#include "realtalk/tensor.hpp"

namespace rt::render {

struct RendererConfig {
  int stages = 4;  // d: encoder/decoder stage count
  int blocks_per_stage = 2;
  int64_t base_channels = 16;
  std::vector<int> attention_stages = {0, 1};  // decoder stage indices
  int64_t image_h = 64, image_w = 64;
  int adain_mlp_layers = 3;
  int attn_heads = 4;
  int64_t style_dim = 64;
  align::Kind alignment = align::Kind::fia_cross_attention;
  int64_t d_shape = 4, d_expr = 8;

  int64_t cond_dim() const { return d_shape + d_expr + 6; }
  // channel schedule: base * 2^level, capped at 8*base; level 0 is the stem
  int64_t channels_at(int level) const {
    int64_t c = base_channels << level;
    return std::min(c, base_channels * 8);
  }
  bool has_attention(int stage) const {
    for (int s : attention_stages)
      if (s == stage) return true;
    return false;
  }
  void validate() const;
};

struct FeaturePyramid {
  // levels[i] is F_{i+1}: spatial (H/2^(i+1), W/2^(i+1)), i in [0, d)
  std::vector<ag::Var> levels;
};

struct RenderTrace {
  std::vector<Tensor> cross_probs;
  std::vector<int64_t> attn_spatial;  // spatial size at each alignment call
};

struct RenderOut {
  ag::Var output;     // blended frame(s), [B,3,H,W]
  ag::Var generated;  // head output before blending
};

// Expression-to-face generator: shared-weight multi-scale encoder, a decoder
// of upsampling stages with AdaIN coefficient injection, reference alignment
// at the two coarsest scales, and a final mask blend.
class Renderer {
 public:
  Renderer(const RendererConfig& cfg, uint64_t seed);

  const RendererConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  // Shared encoder; images is [B,3,H,W] (source and reference are batched
  // together by the caller for the shared pass).
  FeaturePyramid encode(const ag::Var& images) const;

  // 3-layer MLP over [alpha, beta_hat, rho]; cond is [B, cond_dim].
  ag::Var style_embed(const ag::Var& cond) const;

  // One decoder stage: optional reference alignment at the input resolution,
  // then upsample x2 -> 3x3 conv -> AdaIN -> residual blocks.
  ag::Var decoder_stage(int stage, const ag::Var& f, const ag::Var& f_ref,
                        const ag::Var& style, RenderTrace* trace) const;

  // Full pass. alpha [B,d_s], beta_hat [B,d_e] (graph input so expression
  // gradients can flow), pose [B,6], mask [B,1,H,W] with 1 = keep source.
  RenderOut render(const Tensor& masked_src, const Tensor& ref,
                   const Tensor& alpha, const ag::Var& beta_hat,
                   const Tensor& pose, const Tensor& mask,
                   RenderTrace* trace = nullptr) const;

 private:
  RendererConfig cfg_;
  mutable nn::ParamStore ps_;
  nn::Conv2d stem_;
  struct EncStage {
    nn::Conv2d down;
    std::vector<nn::ResBlock> blocks;
  };
  std::vector<EncStage> enc_;
  struct DecStage {
    nn::Conv2d up_conv;
    nn::Linear adain_head;
    std::vector<nn::ResBlock> blocks;
    nn::MultiHeadAttention attn;  // used when alignment == fia
    align::FlowAlign flow;
    align::DeformAlign deform;
    bool has_align = false;
  };
  std::vector<DecStage> dec_;
  std::vector<nn::Linear> style_mlp_;
  nn::Conv2d head_;
};

// M*I_s + (1-M)*generated, elementwise. mask/src are broadcast to the
// generated shape by the caller.
ag::Var blend(const Tensor& mask, const Tensor& src, const ag::Var& generated);

}  // namespace rt::render
