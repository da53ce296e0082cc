#include <doctest.h>

#include <cmath>

#include "realtalk/autodiff.hpp"
#include "realtalk/nn.hpp"
#include "test_util.hpp"

using namespace rt;
using ag::Var;
using testutil::check_grad_fd;
using testutil::random_tensor;

namespace {

// Wraps a graph builder into the FD interface: storage lives in `vals`,
// analytic grads are collected per input.
struct FdHarness {
  std::vector<Tensor> vals;
  std::vector<Tensor> grads;
  std::function<Var(std::vector<Var>&)> build;

  double eval() {
    std::vector<Var> vars;
    std::vector<Tensor> sinks(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
      sinks[i] = Tensor::zeros(vals[i].shape());
      vars.push_back(ag::make_param(vals[i], &sinks[i]));
    }
    Var out = build(vars);
    return out->value[0];
  }

  void run_backward() {
    std::vector<Var> vars;
    grads.assign(vals.size(), Tensor());
    std::vector<Tensor> sinks(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
      sinks[i] = Tensor::zeros(vals[i].shape());
      vars.push_back(ag::make_param(vals[i], &sinks[i]));
    }
    Var out = build(vars);
    ag::backward(out);
    for (size_t i = 0; i < vals.size(); ++i) grads[i] = sinks[i];
  }

  double check_all(double h = 1e-6) {
    run_backward();
    double worst = 0.0;
    for (size_t i = 0; i < vals.size(); ++i) {
      auto res = check_grad_fd(vals[i], grads[i], [&] { return eval(); }, h);
      worst = std::max(worst, res.max_rel_err);
    }
    return worst;
  }
};

}  // namespace

TEST_CASE("gradients of elementwise, reduction and matmul ops match FD") {
  Rng rng(42);
  FdHarness h;
  h.vals = {random_tensor({4, 5}, rng), random_tensor({4, 5}, rng),
            random_tensor({5, 3}, rng)};
  h.build = [](std::vector<Var>& v) {
    Var t = ag::mul(ag::add(v[0], v[1]), ag::sub(v[0], v[1]));
    t = ag::matmul(t, v[2]);
    t = ag::leaky_relu(t, 0.2);
    t = ag::add_scalar(ag::mul_scalar(t, 0.7), 0.1);
    return ag::mean_all(ag::square(t));
  };
  CHECK(h.check_all() < 1e-6);
}

TEST_CASE("gradients of matmul transpose variants match FD") {
  Rng rng(43);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      FdHarness h;
      h.vals = {random_tensor({ta ? 4 : 3, ta ? 3 : 4}, rng),
                random_tensor({tb ? 5 : 4, tb ? 4 : 5}, rng)};
      h.build = [ta, tb](std::vector<Var>& v) {
        return ag::sum_all(
            ag::square(ag::matmul(v[0], v[1], ta != 0, tb != 0)));
      };
      CHECK(h.check_all() < 1e-6);
    }
}

TEST_CASE("gradients of activations, softmax, layernorm match FD") {
  Rng rng(44);
  FdHarness h;
  h.vals = {random_tensor({3, 6}, rng), random_tensor({6}, rng, 0.3),
            random_tensor({6}, rng, 0.3)};
  h.vals[1][0] = 1.1;  // keep gain away from zero
  h.build = [](std::vector<Var>& v) {
    Var t = ag::layer_norm(v[0], v[1], v[2], 1e-5);
    t = ag::softmax_rows(t);
    t = ag::sigmoid(ag::add(t, ag::softplus(t)));
    t = ag::relu(ag::add_scalar(t, -0.3));
    return ag::sum_all(ag::mul(t, t));
  };
  CHECK(h.check_all() < 5e-6);
}

TEST_CASE("gradients of abs/clamp/square away from kinks match FD") {
  Rng rng(45);
  FdHarness h;
  h.vals = {random_tensor({5, 5}, rng)};
  // keep values away from 0 and the clamp edges so FD is valid
  for (int64_t i = 0; i < h.vals[0].numel(); ++i) {
    double& x = h.vals[0][i];
    if (std::fabs(x) < 0.05) x = 0.2;
    if (std::fabs(std::fabs(x) - 1.5) < 0.05) x = 1.2;
  }
  h.build = [](std::vector<Var>& v) {
    return ag::mean_all(ag::abs_val(ag::clamp(v[0], -1.5, 1.5)));
  };
  CHECK(h.check_all() < 1e-6);
}

TEST_CASE("gradients of shape ops (slice/concat/gather/reshape) match FD") {
  Rng rng(46);
  FdHarness h;
  h.vals = {random_tensor({6, 4}, rng), random_tensor({3, 4}, rng)};
  h.build = [](std::vector<Var>& v) {
    Var top = ag::slice_rows(v[0], 0, 3);
    Var bottom = ag::slice_rows(v[0], 3, 3);
    Var cat = ag::concat_rows({top, v[1], bottom});
    Var left = ag::slice_cols(cat, 0, 2);
    Var right = ag::slice_cols(cat, 2, 2);
    Var wide = ag::concat_cols({right, left});
    Var picked = ag::gather_rows(wide, {0, 2, 2, 7});
    return ag::sum_all(ag::square(ag::reshape(picked, {2, 8})));
  };
  CHECK(h.check_all() < 1e-6);
}

TEST_CASE("gradients of conv2d / upsample / adain / spatial ops match FD") {
  Rng rng(47);
  FdHarness h;
  h.vals = {random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng),
            random_tensor({4}, rng), random_tensor({2, 4}, rng),
            random_tensor({2, 4}, rng)};
  h.build = [](std::vector<Var>& v) {
    Var y = ag::conv2d(v[0], v[1], v[2], /*stride=*/2, /*pad=*/1);  // [2,4,3,3]
    y = ag::adain(y, v[3], v[4], 1e-5);
    y = ag::upsample_bilinear2x(y);
    Var pooled = ag::mean_spatial(y);
    return ag::mean_all(ag::square(pooled));
  };
  CHECK(h.check_all() < 2e-6);
}

TEST_CASE("gradients of channel concat and bias match FD") {
  Rng rng(48);
  FdHarness h;
  h.vals = {random_tensor({1, 2, 4, 4}, rng), random_tensor({1, 3, 4, 4}, rng),
            random_tensor({5}, rng)};
  h.build = [](std::vector<Var>& v) {
    Var y = ag::concat_channels(v[0], v[1]);
    y = ag::add_chan_bias(y, v[2]);
    return ag::mean_all(ag::square(y));
  };
  CHECK(h.check_all() < 1e-6);
}

TEST_CASE("gradients of bilinear_sample match FD") {
  Rng rng(49);
  FdHarness h;
  h.vals = {random_tensor({1, 2, 5, 5}, rng),
            random_tensor({1, 2, 5, 5}, rng, 0.3)};
  h.build = [](std::vector<Var>& v) {
    return ag::mean_all(ag::square(ag::bilinear_sample(v[0], v[1])));
  };
  CHECK(h.check_all() < 2e-5);
}

TEST_CASE("gradients of deform_gather match FD") {
  Rng rng(50);
  FdHarness h;
  h.vals = {random_tensor({1, 2, 4, 4}, rng),
            random_tensor({1, 18, 4, 4}, rng, 0.2),
            random_tensor({1, 9, 4, 4}, rng, 0.5)};
  h.build = [](std::vector<Var>& v) {
    return ag::mean_all(ag::square(ag::deform_gather(v[0], v[1], v[2])));
  };
  CHECK(h.check_all() < 2e-5);
}

TEST_CASE("gradients of euler_rotate match FD") {
  Rng rng(51);
  FdHarness h;
  h.vals = {random_tensor({7, 3}, rng), random_tensor({3}, rng, 0.4)};
  h.build = [](std::vector<Var>& v) {
    return ag::sum_all(ag::square(ag::euler_rotate(v[0], v[1])));
  };
  CHECK(h.check_all() < 1e-6);
}

TEST_CASE("detach stops gradient flow") {
  Rng rng(52);
  Tensor xval = random_tensor({3, 3}, rng);
  Tensor sink = Tensor::zeros({3, 3});
  Var x = ag::make_param(xval, &sink);
  Var y = ag::sum_all(ag::mul(ag::detach(x), x));
  ag::backward(y);
  // d/dx of detach(x)*x is detach(x), not 2x
  for (int64_t i = 0; i < 9; ++i) CHECK(sink[i] == doctest::Approx(xval[i]));
}

TEST_CASE("gradient accumulates across shared subexpressions") {
  Tensor xval = Tensor::scalar(3.0);
  Tensor sink = Tensor::zeros({1});
  Var x = ag::make_param(xval, &sink);
  Var y = ag::add(ag::square(x), ag::square(x));  // 2x^2 -> dy/dx = 4x
  ag::backward(y);
  CHECK(sink[0] == doctest::Approx(12.0));
}

TEST_CASE("mha_core attention rows sum to one and gradients flow") {
  Rng rng(53);
  FdHarness h;
  h.vals = {random_tensor({4, 6}, rng), random_tensor({5, 6}, rng),
            random_tensor({5, 6}, rng)};
  h.build = [](std::vector<Var>& v) {
    return ag::mean_all(ag::square(nn::mha_core(v[0], v[1], v[2], 2)));
  };
  CHECK(h.check_all() < 2e-6);

  std::vector<Tensor> probs;
  Var q = ag::constant(random_tensor({4, 6}, rng));
  Var k = ag::constant(random_tensor({5, 6}, rng));
  Var v = ag::constant(random_tensor({5, 6}, rng));
  nn::mha_core(q, k, v, 3, &probs);
  REQUIRE(probs.size() == 3);
  for (const auto& p : probs) {
    REQUIRE(p.dim(0) == 4);
    REQUIRE(p.dim(1) == 5);
    for (int64_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < 5; ++j) s += p.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}
