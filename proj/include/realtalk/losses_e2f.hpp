#pragma once

#include <cstdint>
#include <vector>

#include "realtalk/autodiff.hpp"
#include "realtalk/nn.hpp"
#include "realtalk/tensor.hpp"

namespace rt::e2f {

struct LossWeights {
  double pixel = 1.0;        // lambda_1
  double perceptual = 1.0;   // lambda_2
  double adversarial = 0.1;  // lambda_3
  double teeth = 1.0;        // lambda_4
};

// Frozen multi-scale feature extractor standing in for VGG: three strided
// conv stages with fixed seeded weights. Weights enter graphs as constants,
// so no gradient ever reaches them; loading real features behind the same
// interface is a config swap.
class FeatureNet {
 public:
  explicit FeatureNet(uint64_t seed, int64_t base_channels = 8);

  std::vector<ag::Var> features(const ag::Var& img) const;  // 3 scales
  const std::vector<Tensor>& weights() const { return weights_; }

 private:
  std::vector<Tensor> weights_;  // conv kernels, OIHW
  std::vector<Tensor> biases_;
};

// 4-layer strided patch discriminator over [B,3,H,W]; outputs a logit map.
class Discriminator {
 public:
  Discriminator(uint64_t seed, int64_t base_channels = 32);

  ag::Var logits(const ag::Var& img) const;
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }

 private:
  mutable nn::ParamStore ps_;
  std::vector<nn::Conv2d> convs_;
};

// mean |a - b| over all elements
ag::Var pixel_l1(const ag::Var& pred, const Tensor& target);

// mean L1 distance between feature maps, averaged over scales
ag::Var perceptual(const ag::Var& pred, const Tensor& target,
                   const FeatureNet& net);

// Non-saturating GAN losses. d_loss treats `fake` as a constant (the graph is
// cut with detach); g_loss backpropagates through the discriminator into the
// generator without updating D (the trainer only steps generator parameters).
struct AdvLosses {
  ag::Var d_loss;
  ag::Var g_loss;
};
AdvLosses adversarial_losses(const Discriminator& d, const Tensor& real,
                             const ag::Var& fake);

// L1 restricted to the teeth mask support, normalized by support size.
ag::Var teeth_l1(const ag::Var& pred, const Tensor& target,
                 const Tensor& teeth_mask);

ag::Var total_e2f(const ag::Var& pixel, const ag::Var& perceptual_loss,
                  const ag::Var& g_adv, const ag::Var& teeth,
                  const LossWeights& w);

}  // namespace rt::e2f
