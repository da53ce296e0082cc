#include "realtalk/losses_e2f.hpp"

#include <stdexcept>

namespace rt::e2f {

using ag::Var;

FeatureNet::FeatureNet(uint64_t seed, int64_t base_channels) {
  Rng rng(Rng::mix(seed ^ 0xfea7ULL));
  int64_t cin = 3;
  for (int s = 0; s < 3; ++s) {
    const int64_t cout = base_channels << s;
    Tensor w({cout, cin, 3, 3});
    nn::init_kaiming_conv(w, rng);
    Tensor b({cout});
    weights_.push_back(std::move(w));
    biases_.push_back(std::move(b));
    cin = cout;
  }
}

std::vector<Var> FeatureNet::features(const Var& img) const {
  std::vector<Var> feats;
  Var h = img;
  for (size_t s = 0; s < weights_.size(); ++s) {
    h = ag::conv2d(h, ag::constant(weights_[s]), ag::constant(biases_[s]),
                   s == 0 ? 1 : 2, 1);
    h = ag::leaky_relu(h, 0.2);
    feats.push_back(h);
  }
  return feats;
}

Discriminator::Discriminator(uint64_t seed, int64_t base_channels) {
  Rng rng(Rng::mix(seed ^ 0xd15cULL));
  const int64_t c = base_channels;
  convs_.push_back(nn::Conv2d::create(ps_, rng, "d0", 3, c, 4, 2, 1));
  convs_.push_back(nn::Conv2d::create(ps_, rng, "d1", c, c * 2, 4, 2, 1));
  convs_.push_back(nn::Conv2d::create(ps_, rng, "d2", c * 2, c * 4, 4, 2, 1));
  convs_.push_back(nn::Conv2d::create(ps_, rng, "d3", c * 4, 1, 3, 1, 1));
}

Var Discriminator::logits(const Var& img) const {
  Var h = img;
  for (size_t i = 0; i + 1 < convs_.size(); ++i)
    h = ag::leaky_relu(convs_[i].apply(h), 0.2);
  return convs_.back().apply(h);
}

Var pixel_l1(const Var& pred, const Tensor& target) {
  if (!pred->value.same_shape(target))
    throw std::invalid_argument("pixel_l1: shape mismatch");
  return ag::mean_all(ag::abs_val(ag::sub(pred, ag::constant(target))));
}

Var perceptual(const Var& pred, const Tensor& target, const FeatureNet& net) {
  std::vector<Var> fp = net.features(pred);
  std::vector<Var> ft = net.features(ag::constant(target));
  Var total;
  for (size_t s = 0; s < fp.size(); ++s) {
    Var d = ag::mean_all(ag::abs_val(ag::sub(fp[s], ft[s])));
    total = total ? ag::add(total, d) : d;
  }
  return ag::mul_scalar(total, 1.0 / double(fp.size()));
}

AdvLosses adversarial_losses(const Discriminator& d, const Tensor& real,
                             const ag::Var& fake) {
  // d_loss = E[softplus(-D(real))] + E[softplus(D(fake))], fake detached
  Var d_real = d.logits(ag::constant(real));
  Var d_fake_detached = d.logits(ag::detach(fake));
  Var d_loss = ag::add(ag::mean_all(ag::softplus(ag::mul_scalar(d_real, -1.0))),
                       ag::mean_all(ag::softplus(d_fake_detached)));
  // g_loss = E[softplus(-D(fake))], gradient flows into the generator
  Var d_fake = d.logits(fake);
  Var g_loss = ag::mean_all(ag::softplus(ag::mul_scalar(d_fake, -1.0)));
  return {d_loss, g_loss};
}

Var teeth_l1(const Var& pred, const Tensor& target, const Tensor& teeth_mask) {
  const Tensor& p = pred->value;
  if (!p.same_shape(target))
    throw std::invalid_argument("teeth_l1: shape mismatch");
  const int64_t B = p.dim(0), C = p.dim(1), P = p.dim(2) * p.dim(3);
  if (teeth_mask.numel() != B * P)
    throw std::invalid_argument("teeth_l1: mask shape mismatch");
  double support = 0.0;
  for (int64_t i = 0; i < teeth_mask.numel(); ++i) support += teeth_mask[i];
  if (support == 0.0) return ag::constant(Tensor::scalar(0.0));
  Tensor m_full(p.shape());
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < P; ++i)
        m_full[(n * C + c) * P + i] = teeth_mask[n * P + i];
  Var diff = ag::abs_val(ag::sub(pred, ag::constant(target)));
  Var masked = ag::mul(diff, ag::constant(m_full));
  return ag::mul_scalar(ag::sum_all(masked), 1.0 / (support * double(C)));
}

Var total_e2f(const Var& pixel, const Var& perceptual_loss, const Var& g_adv,
              const Var& teeth, const LossWeights& w) {
  Var t = ag::mul_scalar(pixel, w.pixel);
  t = ag::add(t, ag::mul_scalar(perceptual_loss, w.perceptual));
  t = ag::add(t, ag::mul_scalar(g_adv, w.adversarial));
  t = ag::add(t, ag::mul_scalar(teeth, w.teeth));
  return t;
}

}  // namespace rt::e2f
