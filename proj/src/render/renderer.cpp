#include "realtalk/renderer.hpp"

#include <stdexcept>

namespace rt::render {

using ag::Var;

void RendererConfig::validate() const {
  if (stages < 2) throw std::invalid_argument("renderer: stages must be >= 2");
  if (blocks_per_stage < 1 || base_channels < 1)
    throw std::invalid_argument("renderer: invalid block/channel counts");
  for (int s : attention_stages)
    if (s < 0 || s >= stages)
      throw std::invalid_argument("renderer: attention stage out of range");
  const int64_t div = int64_t(1) << stages;
  if (image_h % div != 0 || image_w % div != 0)
    throw std::invalid_argument(
        "renderer: image size must be divisible by 2^stages");
}

Renderer::Renderer(const RendererConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(seed ^ 0xe2fULL));
  const int d = cfg_.stages;

  stem_ = nn::Conv2d::create(ps_, rng, "stem", 3, cfg_.channels_at(0), 3, 1,
                             1);
  for (int i = 1; i <= d; ++i) {
    EncStage st;
    st.down = nn::Conv2d::create(ps_, rng, "enc" + std::to_string(i) + ".down",
                                 cfg_.channels_at(i - 1), cfg_.channels_at(i),
                                 3, 2, 1);
    for (int b = 0; b < cfg_.blocks_per_stage; ++b)
      st.blocks.push_back(nn::ResBlock::create(
          ps_, rng, "enc" + std::to_string(i) + ".res" + std::to_string(b),
          cfg_.channels_at(i), 0.2));
    enc_.push_back(std::move(st));
  }

  // style MLP: cond -> style_dim, then (adain_mlp_layers - 1) hidden layers
  {
    int64_t in = cfg_.cond_dim();
    for (int i = 0; i < cfg_.adain_mlp_layers; ++i) {
      style_mlp_.push_back(nn::Linear::create(
          ps_, rng, "style.fc" + std::to_string(i), in, cfg_.style_dim));
      in = cfg_.style_dim;
    }
  }

  for (int i = 0; i < d; ++i) {
    DecStage st;
    const int64_t cin = cfg_.channels_at(d - i);
    const int64_t cout = cfg_.channels_at(d - i - 1);
    const std::string base = "dec" + std::to_string(i);
    st.has_align = cfg_.has_attention(i);
    if (st.has_align) {
      switch (cfg_.alignment) {
        case align::Kind::fia_cross_attention:
          st.attn = nn::MultiHeadAttention::create(ps_, rng, base + ".xattn",
                                                   cin, cfg_.attn_heads);
          break;
        case align::Kind::flow_warp:
          st.flow = align::FlowAlign::create(ps_, rng, base + ".flow", cin);
          break;
        case align::Kind::deformation:
          st.deform =
              align::DeformAlign::create(ps_, rng, base + ".deform", cin);
          break;
      }
    }
    st.up_conv =
        nn::Conv2d::create(ps_, rng, base + ".up", cin, cout, 3, 1, 1);
    st.adain_head = nn::Linear::create(ps_, rng, base + ".adain",
                                       cfg_.style_dim, 2 * cout, 0.1);
    for (int b = 0; b < cfg_.blocks_per_stage; ++b)
      st.blocks.push_back(nn::ResBlock::create(
          ps_, rng, base + ".res" + std::to_string(b), cout, 0.0));
    dec_.push_back(std::move(st));
  }
  head_ = nn::Conv2d::create(ps_, rng, "head", cfg_.channels_at(0), 3, 3, 1,
                             1);
}

FeaturePyramid Renderer::encode(const Var& images) const {
  if (images->value.dim(2) != cfg_.image_h ||
      images->value.dim(3) != cfg_.image_w)
    throw std::invalid_argument("encode: image size mismatch");
  FeaturePyramid pyr;
  Var h = ag::leaky_relu(stem_.apply(images), 0.2);
  for (const auto& st : enc_) {
    h = ag::leaky_relu(st.down.apply(h), 0.2);
    for (const auto& blk : st.blocks) h = blk.apply(h);
    pyr.levels.push_back(h);
  }
  return pyr;
}

Var Renderer::style_embed(const Var& cond) const {
  Var h = cond;
  for (size_t i = 0; i < style_mlp_.size(); ++i) {
    h = style_mlp_[i].apply(h);
    if (i + 1 < style_mlp_.size()) h = ag::relu(h);
  }
  return h;
}

Var Renderer::decoder_stage(int stage, const Var& f, const Var& f_ref,
                            const Var& style, RenderTrace* trace) const {
  const DecStage& st = dec_[size_t(stage)];
  Var h = f;
  if (st.has_align) {
    if (trace) trace->attn_spatial.push_back(h->value.dim(2));
    switch (cfg_.alignment) {
      case align::Kind::fia_cross_attention:
        h = align::cross_attend(h, f_ref, st.attn,
                                trace ? &trace->cross_probs : nullptr);
        break;
      case align::Kind::flow_warp:
        h = st.flow.apply(h, f_ref);
        break;
      case align::Kind::deformation:
        h = st.deform.apply(h, f_ref);
        break;
    }
  }
  h = st.up_conv.apply(ag::upsample_bilinear2x(h));
  const int64_t cout = cfg_.channels_at(cfg_.stages - stage - 1);
  Var affine = st.adain_head.apply(style);  // [B, 2*cout]
  Var scale = ag::add_scalar(ag::slice_cols(affine, 0, cout), 1.0);
  Var bias = ag::slice_cols(affine, cout, cout);
  h = ag::adain(h, scale, bias, 1e-5);
  h = ag::relu(h);
  for (const auto& blk : st.blocks) h = blk.apply(h);
  return h;
}

RenderOut Renderer::render(const Tensor& masked_src, const Tensor& ref,
                           const Tensor& alpha, const Var& beta_hat,
                           const Tensor& pose, const Tensor& mask,
                           RenderTrace* trace) const {
  const int64_t B = masked_src.dim(0);
  if (ref.dim(0) != B || alpha.dim(0) != B || pose.dim(0) != B ||
      beta_hat->value.dim(0) != B || mask.dim(0) != B)
    throw std::invalid_argument("render: batch size mismatch");

  // shared encoder: one pass over [source; reference]
  Var both = ag::concat_rows({ag::constant(masked_src), ag::constant(ref)});
  FeaturePyramid pyr = encode(both);

  Var cond = ag::concat_cols(
      {ag::constant(alpha), beta_hat, ag::constant(pose)});
  Var style = style_embed(cond);

  const int d = cfg_.stages;
  Var f = ag::slice_rows(pyr.levels[size_t(d - 1)], 0, B);  // F_d^s
  for (int i = 0; i < d; ++i) {
    // reference level at the stage input resolution: F_{d-i}
    Var f_ref = ag::slice_rows(pyr.levels[size_t(d - i - 1)], B, B);
    f = decoder_stage(i, f, f_ref, style, trace);
  }
  Var gen = ag::sigmoid(head_.apply(f));
  return {blend(mask, masked_src, gen), gen};
}

Var blend(const Tensor& mask, const Tensor& src, const Var& generated) {
  const Tensor& g = generated->value;
  if (src.ndim() != 4 || !src.same_shape(g))
    throw std::invalid_argument("blend: source/generated shape mismatch");
  if (mask.dim(0) != g.dim(0) || mask.dim(2) != g.dim(2) ||
      mask.dim(3) != g.dim(3))
    throw std::invalid_argument("blend: mask shape mismatch");
  const int64_t B = g.dim(0), C = g.dim(1), P = g.dim(2) * g.dim(3);
  Tensor m_full = Tensor::uninit(g.shape()), keep = Tensor::uninit(g.shape());
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < P; ++i) {
        const double m = mask[n * P + i];
        m_full[(n * C + c) * P + i] = 1.0 - m;
        keep[(n * C + c) * P + i] = m * src[(n * C + c) * P + i];
      }
  return ag::add(ag::constant(keep), ag::mul(ag::constant(m_full), generated));
}

}  // namespace rt::render
