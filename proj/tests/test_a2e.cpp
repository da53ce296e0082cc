#include <doctest.h>

#include <cmath>

#include "realtalk/audio2expr.hpp"
#include "test_util.hpp"

using namespace rt;
using namespace rt::a2e;
using testutil::random_tensor;

namespace {

A2EConfig tiny_config() {
  A2EConfig c;
  c.l = 4;
  c.n_hist = 2;
  c.t_pred = 2;
  c.latent_dim = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.d_audio = 3;
  c.d_shape = 2;
  c.d_expr = 3;
  c.pe_period = 2;
  return c;
}

struct WindowInputs {
  Tensor audio, alpha, hist;
};

WindowInputs random_inputs(const A2EConfig& c, Rng& rng) {
  return {random_tensor({c.l, c.d_audio}, rng),
          random_tensor({c.d_shape}, rng),
          random_tensor({c.n_hist, c.d_expr}, rng)};
}

}  // namespace

TEST_CASE("token counts: paper defaults give 49, l=1 N=1 gives 3") {
  A2EConfig paper;
  paper.l = 32;
  paper.n_hist = 16;
  CHECK(paper.token_count() == 49);

  A2EConfig small = tiny_config();
  small.l = 1;
  small.n_hist = 1;
  CHECK(small.token_count() == 3);

  A2EModel model(paper, 0);
  Rng rng(1);
  Tensor audio = random_tensor({32, paper.d_audio}, rng);
  Tensor alpha = random_tensor({paper.d_shape}, rng);
  Tensor hist = random_tensor({16, paper.d_expr}, rng);
  ag::Var tokens = model.embed_inputs(audio, alpha, hist);
  CHECK(tokens->value.dim(0) == 49);
  CHECK(tokens->value.dim(1) == paper.latent_dim);
}

TEST_CASE("embed_inputs at zero equals per-modality bias rows") {
  A2EConfig c = tiny_config();
  A2EModel model(c, 3);
  Tensor audio = Tensor::zeros({c.l, c.d_audio});
  Tensor alpha = Tensor::zeros({c.d_shape});
  Tensor hist = Tensor::zeros({c.n_hist, c.d_expr});
  Tensor tokens = model.embed_inputs(audio, alpha, hist)->value;
  const Tensor& ba = model.params().value("embed.audio.b");
  const Tensor& bs = model.params().value("embed.shape.b");
  const Tensor& be = model.params().value("embed.expr.b");
  for (int64_t j = 0; j < c.latent_dim; ++j) {
    for (int64_t r = 0; r < c.l; ++r) CHECK(tokens.at(r, j) == ba[j]);
    CHECK(tokens.at(c.l, j) == bs[j]);
    for (int64_t r = 0; r < c.n_hist; ++r)
      CHECK(tokens.at(c.l + 1 + r, j) == be[j]);
  }
}

TEST_CASE("embed_inputs rejects dimension mismatches") {
  A2EConfig c = tiny_config();
  A2EModel model(c, 3);
  Rng rng(5);
  CHECK_THROWS(model.embed_inputs(random_tensor({c.l, c.d_audio + 1}, rng),
                                  random_tensor({c.d_shape}, rng),
                                  random_tensor({c.n_hist, c.d_expr}, rng)));
  CHECK_THROWS(model.embed_inputs(random_tensor({c.l, c.d_audio}, rng),
                                  random_tensor({c.d_shape + 2}, rng),
                                  random_tensor({c.n_hist, c.d_expr}, rng)));
  CHECK_THROWS(model.embed_inputs(random_tensor({c.l, c.d_audio}, rng),
                                  random_tensor({c.d_shape}, rng),
                                  random_tensor({c.n_hist + 1, c.d_expr}, rng)));
}

TEST_CASE("periodic positional encoding: periodicity, phase zero, shape") {
  Tensor pe = periodic_positional_encoding(40, 16, 16);
  // positions p and p+16 coincide
  for (int64_t j = 0; j < 16; ++j) {
    CHECK(pe.at(0, j) == pe.at(16, j));
    CHECK(pe.at(5, j) == pe.at(21, j));
  }
  // phase zero at position 0: sin terms 0, cos terms 1
  for (int64_t j = 0; j < 16; j += 2) CHECK(pe.at(0, j) == 0.0);
  for (int64_t j = 1; j < 16; j += 2) CHECK(pe.at(0, j) == 1.0);

  // added, never concatenated
  A2EConfig c = tiny_config();
  A2EModel model(c, 7);
  Rng rng(7);
  WindowInputs in = random_inputs(c, rng);
  ag::Var tokens = model.embed_inputs(in.audio, in.alpha, in.hist);
  ag::Var with_pe = model.add_positional_encoding(tokens);
  CHECK(with_pe->value.same_shape(tokens->value));
}

TEST_CASE("cmsa: shape contract, token-count precondition, row-stochastic "
          "attention") {
  A2EConfig c = tiny_config();
  A2EModel model(c, 11);
  Rng rng(13);
  WindowInputs in = random_inputs(c, rng);
  AttnTrace trace;
  ag::Var memory = model.encode(
      model.add_positional_encoding(
          model.embed_inputs(in.audio, in.alpha, in.hist)),
      &trace);
  CHECK(memory->value.dim(0) == c.token_count());
  CHECK(memory->value.dim(1) == c.latent_dim);
  REQUIRE(trace.encoder.size() == size_t(c.enc_layers * c.heads));
  for (const auto& probs : trace.encoder)
    for (int64_t i = 0; i < probs.dim(0); ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < probs.dim(1); ++j) s += probs.at(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }

  CHECK_THROWS(model.encode(ag::constant(
      random_tensor({c.token_count() + 1, c.latent_dim}, rng))));
}

TEST_CASE("tca: shape contract and query degeneracy without positional "
          "encoding") {
  A2EConfig c = tiny_config();
  c.t_pred = 4;
  SUBCASE("with query PE the outputs differ per frame") {
    A2EModel model(c, 17);
    Rng rng(19);
    WindowInputs in = random_inputs(c, rng);
    AttnTrace trace;
    Tensor out = model.forward(in.audio, in.alpha, in.hist, &trace)->value;
    CHECK(out.dim(0) == 4);
    CHECK(out.dim(1) == c.d_expr);
    bool any_diff = false;
    for (int64_t t = 1; t < 4; ++t)
      for (int64_t j = 0; j < c.d_expr; ++j)
        if (out.at(t, j) != out.at(0, j)) any_diff = true;
    CHECK(any_diff);
    for (const auto& probs : trace.dec_cross)
      for (int64_t i = 0; i < probs.dim(0); ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < probs.dim(1); ++j) s += probs.at(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
  SUBCASE("zero-initialized queries without PE collapse to identical rows") {
    c.query_pos_encoding = false;
    A2EModel model(c, 17);
    Rng rng(19);
    WindowInputs in = random_inputs(c, rng);
    Tensor out = model.forward(in.audio, in.alpha, in.hist)->value;
    for (int64_t t = 1; t < 4; ++t)
      for (int64_t j = 0; j < c.d_expr; ++j)
        CHECK(out.at(t, j) == doctest::Approx(out.at(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("loss_mse: equality, 3-4-5 case, loop oracle") {
  Rng eq_rng(23);
  Tensor equal = random_tensor({3, 4}, eq_rng);
  CHECK(loss_mse(ag::constant(equal), equal)->value[0] == 0.0);

  Tensor pred({1, 2}, {3.0, 4.0});
  Tensor gt({1, 2}, {0.0, 0.0});
  CHECK(loss_mse(ag::constant(pred), gt)->value[0] == doctest::Approx(25.0));

  Rng rng(29);
  Tensor a = random_tensor({5, 7}, rng);
  Tensor b = random_tensor({5, 7}, rng);
  double want = 0.0;
  for (int64_t t = 0; t < 5; ++t) {
    double s = 0.0;
    for (int64_t j = 0; j < 7; ++j) {
      const double d = a.at(t, j) - b.at(t, j);
      s += d * d;
    }
    want += s;
  }
  want /= 5.0;
  const double got = loss_mse(ag::constant(a), b)->value[0];
  CHECK(testutil::rel_err(got, want) < 1e-10);

  CHECK_THROWS(loss_mse(ag::constant(a), random_tensor({5, 6}, rng)));
}

TEST_CASE("loss_vertex: equality, alpha cancellation, loop oracle") {
  face::MorphableModel m = face::gen_synthetic_model(31, 40, 3, 4);
  Rng rng(37);
  const int64_t T = 3;

  auto make_frames = [&](const Tensor& alpha) {
    std::vector<face::Coeff3D> frames;
    for (int64_t t = 0; t < T; ++t) {
      face::Coeff3D c;
      c.shape = alpha;
      c.expr = random_tensor({4}, rng, 0.5);
      c.pose.angles = {rng.normal(0.0, 0.2), rng.normal(0.0, 0.2),
                       rng.normal(0.0, 0.2)};
      c.pose.translation = {rng.normal(), rng.normal(), rng.normal()};
      frames.push_back(c);
    }
    return frames;
  };

  std::vector<face::Coeff3D> frames = make_frames(random_tensor({3}, rng));
  Tensor gt({T, 4});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t j = 0; j < 4; ++j) gt.at(t, j) = frames[size_t(t)].expr[j];

  CHECK(loss_vertex(ag::constant(gt), frames, m)->value[0] ==
        doctest::Approx(0.0));

  // with identity pose the loss depends only on beta - beta_hat, not alpha
  Tensor pred = random_tensor({T, 4}, rng, 0.5);
  auto identity_frames = [&](const Tensor& alpha) {
    std::vector<face::Coeff3D> fr = frames;
    for (auto& c : fr) {
      c.shape = alpha;
      c.pose = face::Pose{};
    }
    return fr;
  };
  const double va = loss_vertex(ag::constant(pred),
                                identity_frames(random_tensor({3}, rng)),
                                m)->value[0];
  const double vb = loss_vertex(ag::constant(pred),
                                identity_frames(random_tensor({3}, rng)),
                                m)->value[0];
  CHECK(testutil::rel_err(va, vb) < 1e-12);

  // explicit per-vertex loop oracle
  double want = 0.0;
  for (int64_t t = 0; t < T; ++t) {
    face::Coeff3D cg = frames[size_t(t)];
    face::Coeff3D cp = cg;
    cp.expr = Tensor({4});
    for (int64_t j = 0; j < 4; ++j) cp.expr[j] = pred.at(t, j);
    Tensor vg = face::mouth_vertex_subset(m, face::compute_vertices(m, cg));
    Tensor vp = face::mouth_vertex_subset(m, face::compute_vertices(m, cp));
    for (int64_t i = 0; i < vg.numel(); ++i) {
      const double d = vg[i] - vp[i];
      want += d * d;
    }
  }
  want /= double(T);
  const double got = loss_vertex(ag::constant(pred), frames, m)->value[0];
  CHECK(testutil::rel_err(got, want) < 1e-9);
}

TEST_CASE("loss_total: paper weight, zero case, weight override") {
  ag::Var mse = ag::constant(Tensor::scalar(1.0));
  ag::Var vtx = ag::constant(Tensor::scalar(2.0));
  CHECK(loss_total(mse, vtx, 0.1)->value[0] == doctest::Approx(1.2));
  CHECK(loss_total(ag::constant(Tensor::scalar(0.0)),
                   ag::constant(Tensor::scalar(0.0)), 0.1)->value[0] == 0.0);
  CHECK(loss_total(mse, vtx, 0.0)->value[0] == doctest::Approx(1.0));
}

TEST_CASE("forward determinism and history sensitivity") {
  A2EConfig c = tiny_config();
  Rng rng(41);
  WindowInputs in = random_inputs(c, rng);

  A2EModel m1(c, 99);
  A2EModel m2(c, 99);
  Tensor o1 = m1.predict(in.audio, in.alpha, in.hist);
  Tensor o2 = m2.predict(in.audio, in.alpha, in.hist);
  CHECK(testutil::max_abs_diff(o1, o2) == 0.0);

  Tensor hist2 = in.hist;
  hist2[0] += 0.3;
  Tensor o3 = m1.predict(in.audio, in.alpha, hist2);
  CHECK(testutil::max_abs_diff(o1, o3) > 0.0);

  A2EModel m3(c, 100);
  Tensor o4 = m3.predict(in.audio, in.alpha, in.hist);
  CHECK(testutil::max_abs_diff(o1, o4) > 0.0);
}

TEST_CASE("batch-permutation equivariance") {
  A2EConfig c = tiny_config();
  A2EModel model(c, 43);
  Rng rng(47);
  std::vector<WindowInputs> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_inputs(c, rng));

  std::vector<Tensor> out;
  for (const auto& in : batch)
    out.push_back(model.predict(in.audio, in.alpha, in.hist));

  const int perm[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) {
    const WindowInputs& in = batch[size_t(perm[i])];
    Tensor o = model.predict(in.audio, in.alpha, in.hist);
    CHECK(testutil::max_abs_diff(o, out[size_t(perm[i])]) == 0.0);
  }
}

TEST_CASE("ablation switches drop tokens and still run") {
  A2EConfig c = tiny_config();
  c.use_shape_token = false;
  CHECK(c.token_count() == c.l + c.n_hist);
  A2EModel no_shape(c, 51);
  Rng rng(53);
  WindowInputs in = random_inputs(c, rng);
  CHECK(no_shape.predict(in.audio, in.alpha, in.hist).dim(0) == c.t_pred);

  c.use_history_tokens = false;
  CHECK(c.token_count() == c.l);
  A2EModel neither(c, 51);
  CHECK(neither.predict(in.audio, in.alpha, in.hist).dim(0) == c.t_pred);
}

TEST_CASE("a2e loss gradients match finite differences on sampled params") {
  A2EConfig c = tiny_config();
  c.heads = 1;
  A2EModel model(c, 61);
  face::MorphableModel fm = face::gen_synthetic_model(5, 24, 2, 3);
  Rng rng(67);
  WindowInputs in = random_inputs(c, rng);
  Tensor beta_gt = random_tensor({c.t_pred, c.d_expr}, rng, 0.5);
  std::vector<face::Coeff3D> frames;
  for (int64_t t = 0; t < c.t_pred; ++t) {
    face::Coeff3D fc;
    fc.shape = in.alpha;
    fc.expr = Tensor({c.d_expr});
    for (int64_t j = 0; j < c.d_expr; ++j) fc.expr[j] = beta_gt.at(t, j);
    fc.pose.angles = {0.1, -0.2, 0.05};
    frames.push_back(fc);
  }
  auto eval = [&](bool back) {
    if (back) model.params().zero_grad();
    ag::Var pred = model.forward(in.audio, in.alpha, in.hist);
    ag::Var loss =
        loss_total(loss_mse(pred, beta_gt), loss_vertex(pred, frames, fm),
                   c.vertex_loss_weight);
    if (back) ag::backward(loss);
    return loss->value[0];
  };
  eval(true);
  Rng pick(71);
  auto res = testutil::check_params_fd(model.params(),
                                       model.params().names(),
                                       [&] { return eval(false); }, 2, pick);
  CHECK(res.checked >= 50);
  CHECK(res.max_rel_err < 1e-4);
}
