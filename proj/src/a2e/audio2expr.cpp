#include "realtalk/audio2expr.hpp"

#include <cmath>
#include <stdexcept>

namespace rt::a2e {

using ag::Var;

void A2EConfig::validate() const {
  if (l < 1 || n_hist < 1 || t_pred < 1 || latent_dim < 1 || heads < 1 ||
      enc_layers < 1 || dec_layers < 1 || pe_period < 1)
    throw std::invalid_argument("A2EConfig: all counts must be >= 1");
  if (latent_dim % heads != 0)
    throw std::invalid_argument("A2EConfig: latent_dim must divide by heads");
}

Tensor periodic_positional_encoding(int64_t positions, int64_t dim,
                                    int64_t period) {
  Tensor pe({positions, dim});
  for (int64_t p = 0; p < positions; ++p) {
    const double t = double(p % period);
    for (int64_t i = 0; i < dim; i += 2) {
      const double omega = std::pow(10000.0, -double(i) / double(dim));
      pe.at(p, i) = std::sin(t * omega);
      if (i + 1 < dim) pe.at(p, i + 1) = std::cos(t * omega);
    }
  }
  return pe;
}

A2EModel::A2EModel(const A2EConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(seed ^ 0x7a2e5eedULL));
  const int64_t d = cfg_.latent_dim;
  embed_audio_ = nn::Linear::create(ps_, rng, "embed.audio", cfg_.d_audio, d);
  embed_shape_ = nn::Linear::create(ps_, rng, "embed.shape", cfg_.d_shape, d);
  embed_expr_ = nn::Linear::create(ps_, rng, "embed.expr", cfg_.d_expr, d);
  for (int i = 0; i < cfg_.enc_layers; ++i)
    enc_blocks_.push_back(nn::EncoderBlock::create(
        ps_, rng, "enc." + std::to_string(i), d, cfg_.heads,
        cfg_.ffn_hidden()));
  enc_final_ln_ = nn::LayerNorm::create(ps_, "enc.final_ln", d);
  ps_.create("query_embed", {cfg_.t_pred, d});  // zero-initialized queries
  for (int i = 0; i < cfg_.dec_layers; ++i)
    dec_blocks_.push_back(nn::DecoderBlock::create(
        ps_, rng, "dec." + std::to_string(i), d, cfg_.heads,
        cfg_.ffn_hidden()));
  dec_final_ln_ = nn::LayerNorm::create(ps_, "dec.final_ln", d);
  head_ = nn::Linear::create(ps_, rng, "head", d, cfg_.d_expr);
  query_embed_ = "query_embed";
}

Var A2EModel::embed_inputs(const Tensor& audio, const Tensor& alpha,
                           const Tensor& beta_hist) const {
  if (audio.ndim() != 2 || audio.dim(1) != cfg_.d_audio)
    throw std::invalid_argument("embed_inputs: audio must be [l, d_audio]");
  if (audio.dim(0) != cfg_.l)
    throw std::invalid_argument("embed_inputs: audio length != config l");
  std::vector<Var> parts;
  parts.push_back(embed_audio_.apply(ag::constant(audio)));
  if (cfg_.use_shape_token) {
    if (alpha.numel() != cfg_.d_shape)
      throw std::invalid_argument("embed_inputs: alpha length mismatch");
    parts.push_back(
        embed_shape_.apply(ag::constant(alpha.reshaped({1, cfg_.d_shape}))));
  }
  if (cfg_.use_history_tokens) {
    if (beta_hist.ndim() != 2 || beta_hist.dim(0) != cfg_.n_hist ||
        beta_hist.dim(1) != cfg_.d_expr)
      throw std::invalid_argument("embed_inputs: history must be [N, d_expr]");
    parts.push_back(embed_expr_.apply(ag::constant(beta_hist)));
  }
  return parts.size() == 1 ? parts[0] : ag::concat_rows(parts);
}

Var A2EModel::add_positional_encoding(const Var& tokens) const {
  Tensor pe = periodic_positional_encoding(tokens->value.dim(0),
                                           cfg_.latent_dim, cfg_.pe_period);
  return ag::add(tokens, ag::constant(pe));
}

Var A2EModel::encode(const Var& tokens, AttnTrace* trace) const {
  if (tokens->value.dim(0) != cfg_.token_count())
    throw std::invalid_argument("encode: token count mismatch");
  Var h = tokens;
  for (const auto& block : enc_blocks_)
    h = block.apply(h, trace ? &trace->encoder : nullptr);
  return enc_final_ln_.apply(h);
}

Var A2EModel::decode(const Var& memory, AttnTrace* trace) const {
  Var q = ps_.var(query_embed_);
  if (cfg_.query_pos_encoding) {
    Tensor pe = periodic_positional_encoding(cfg_.t_pred, cfg_.latent_dim,
                                             cfg_.pe_period);
    q = ag::add(q, ag::constant(pe));
  }
  for (const auto& block : dec_blocks_)
    q = block.apply(q, memory, trace ? &trace->dec_self : nullptr,
                    trace ? &trace->dec_cross : nullptr);
  return head_.apply(dec_final_ln_.apply(q));
}

Var A2EModel::forward(const Tensor& audio, const Tensor& alpha,
                      const Tensor& beta_hist, AttnTrace* trace) const {
  Var tokens = add_positional_encoding(embed_inputs(audio, alpha, beta_hist));
  Var memory = encode(tokens, trace);
  return decode(memory, trace);
}

Tensor A2EModel::predict(const Tensor& audio, const Tensor& alpha,
                         const Tensor& beta_hist) const {
  return forward(audio, alpha, beta_hist)->value;
}

Var loss_mse(const Var& pred, const Tensor& target) {
  if (!pred->value.same_shape(target))
    throw std::invalid_argument("loss_mse: shape mismatch");
  Var diff = ag::sub(ag::constant(target), pred);
  return ag::mul_scalar(ag::sum_all(ag::square(diff)),
                        1.0 / double(target.dim(0)));
}

Var loss_vertex(const Var& pred, const std::vector<face::Coeff3D>& frames,
                const face::MorphableModel& model) {
  const int64_t T = pred->value.dim(0);
  if (int64_t(frames.size()) != T)
    throw std::invalid_argument("loss_vertex: frame count mismatch");
  if (pred->value.dim(1) != model.d_expr())
    throw std::invalid_argument("loss_vertex: d_expr mismatch");
  std::vector<int64_t> mouth = model.mouth_indices;
  Var total;
  for (int64_t t = 0; t < T; ++t) {
    const face::Coeff3D& c = frames[size_t(t)];
    Var alpha = ag::constant(c.shape);
    Var angles = ag::constant(Tensor(
        {3}, {c.pose.angles[0], c.pose.angles[1], c.pose.angles[2]}));
    Var trans = ag::constant(Tensor({3}, {c.pose.translation[0],
                                          c.pose.translation[1],
                                          c.pose.translation[2]}));
    Var beta_hat = ag::reshape(ag::slice_rows(pred, t, 1), {model.d_expr()});
    Var v_pred =
        face::compute_vertices_var(model, alpha, beta_hat, angles, trans);
    Var v_gt = face::compute_vertices_var(model, alpha,
                                          ag::constant(c.expr), angles, trans);
    Var diff = ag::sub(ag::gather_rows(v_gt, mouth),
                       ag::gather_rows(v_pred, mouth));
    Var sq = ag::sum_all(ag::square(diff));
    total = total ? ag::add(total, sq) : sq;
  }
  return ag::mul_scalar(total, 1.0 / double(T));
}

Var loss_total(const Var& mse, const Var& vertex, double vertex_weight) {
  return ag::add(mse, ag::mul_scalar(vertex, vertex_weight));
}

}  // namespace rt::a2e
