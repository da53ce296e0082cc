#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "realtalk/autodiff.hpp"
#include "realtalk/morphable.hpp"
#include "realtalk/nn.hpp"
#include "realtalk/tensor.hpp"

namespace rt::a2e {

// Transformer that maps audio features, a shape prior and historical
// expressions to a window of predicted expression coefficients.
struct A2EConfig {
  int64_t l = 32;           // audio tokens per window (2 per frame)
  int64_t n_hist = 16;      // historical expressions N
  int64_t t_pred = 16;      // predicted frames T
  int64_t latent_dim = 64;  // full-scale setting is 256
  int heads = 4;            // full-scale setting is 8
  int enc_layers = 2;       // N1, full-scale 8
  int dec_layers = 2;       // N2, full-scale 8
  int64_t d_audio = 16;
  int64_t d_shape = 4;
  int64_t d_expr = 8;
  int64_t pe_period = 16;  // defaults to t_pred
  double vertex_loss_weight = 0.1;
  bool use_shape_token = true;     // ablation switch
  bool use_history_tokens = true;  // ablation switch
  bool query_pos_encoding = true;

  int64_t ffn_hidden() const { return latent_dim * 4; }
  int64_t token_count() const {
    return l + (use_shape_token ? 1 : 0) + (use_history_tokens ? n_hist : 0);
  }
  void validate() const;
};

// Softmax matrices captured during a forward pass, one tensor per
// (layer, head) in execution order.
struct AttnTrace {
  std::vector<Tensor> encoder;
  std::vector<Tensor> dec_self;
  std::vector<Tensor> dec_cross;
};

// Sinusoidal encoding with an explicit period: position p and p+period get
// identical rows; position 0 is the phase-zero vector (sin 0, cos 1).
Tensor periodic_positional_encoding(int64_t positions, int64_t dim,
                                    int64_t period);

class A2EModel {
 public:
  A2EModel(const A2EConfig& cfg, uint64_t seed);

  const A2EConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

  // Tokens in the fixed order: audio, shape, history. Each modality has its
  // own fully connected embedding.
  ag::Var embed_inputs(const Tensor& audio, const Tensor& alpha,
                       const Tensor& beta_hist) const;
  ag::Var add_positional_encoding(const ag::Var& tokens) const;
  ag::Var encode(const ag::Var& tokens, AttnTrace* trace = nullptr) const;
  ag::Var decode(const ag::Var& memory, AttnTrace* trace = nullptr) const;

  // Full forward pass: embeddings -> periodic PE -> CMSA -> TCA -> head.
  ag::Var forward(const Tensor& audio, const Tensor& alpha,
                  const Tensor& beta_hist, AttnTrace* trace = nullptr) const;
  Tensor predict(const Tensor& audio, const Tensor& alpha,
                 const Tensor& beta_hist) const;

 private:
  A2EConfig cfg_;
  mutable nn::ParamStore ps_;
  nn::Linear embed_audio_, embed_shape_, embed_expr_, head_;
  std::vector<nn::EncoderBlock> enc_blocks_;
  std::vector<nn::DecoderBlock> dec_blocks_;
  nn::LayerNorm enc_final_ln_, dec_final_ln_;
  std::string query_embed_;
};

// (1/T) sum_t ||target_t - pred_t||^2
ag::Var loss_mse(const ag::Var& pred, const Tensor& target);

// (1/T) sum_t ||V_mouth(alpha_t, beta_t, rho_t) - V_mouth(alpha_t,
// pred_t, rho_t)||^2. frames carries the ground-truth coefficients per frame.
ag::Var loss_vertex(const ag::Var& pred, const std::vector<face::Coeff3D>& frames,
                    const face::MorphableModel& model);

ag::Var loss_total(const ag::Var& mse, const ag::Var& vertex,
                   double vertex_weight);

}  // namespace rt::a2e
