#include "realtalk/verify.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "realtalk/audio2expr.hpp"
#include "realtalk/losses_e2f.hpp"
#include "realtalk/mask.hpp"
#include "realtalk/renderer.hpp"
#include "realtalk/rng.hpp"

namespace rt::verify {

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

// ------------------------------------------------------------- rasterizer

double segment_distance(double px, double py, const mask::Point& a,
                        const mask::Point& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double wx = px - a[0], wy = py - a[1];
  const double vv = vx * vx + vy * vy;
  double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  const double dx = px - (a[0] + t * vx), dy = py - (a[1] + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

std::vector<mask::Point> random_convex_polygon(Rng& rng, double lo,
                                               double hi) {
  std::vector<mask::Point> cloud;
  const int n = 5 + int(rng.below(10));
  for (int i = 0; i < n; ++i)
    cloud.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
  std::vector<mask::Point> hull = mask::convex_hull(cloud);
  return hull.size() >= 3 ? hull : random_convex_polygon(rng, lo, hi);
}

std::vector<mask::Point> random_star_polygon(Rng& rng, double cx, double cy,
                                             double rmax) {
  const int n = 5 + int(rng.below(12));
  std::vector<double> angles;
  for (int i = 0; i < n; ++i) angles.push_back(rng.uniform(0.0, 2.0 * M_PI));
  std::sort(angles.begin(), angles.end());
  std::vector<mask::Point> poly;
  for (double a : angles) {
    const double r = rng.uniform(0.15 * rmax, rmax);
    poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return poly;
}

}  // namespace

std::vector<CheckResult> verify_rasterizer(uint64_t seed, int polygon_count,
                                           int64_t size) {
  Rng rng(Rng::mix(seed ^ 0x8a57ULL));
  int64_t mismatches = 0;
  int64_t compared = 0;
  for (int p = 0; p < polygon_count; ++p) {
    std::vector<mask::Point> poly;
    if (p % 2 == 0) {
      poly = random_convex_polygon(rng, 2.0, double(size) - 2.0);
    } else {
      poly = random_star_polygon(rng, rng.uniform(12.0, double(size) - 12.0),
                                 rng.uniform(12.0, double(size) - 12.0),
                                 rng.uniform(6.0, double(size) / 2.2));
    }
    Tensor fill = mask::rasterize_polygon(poly, size, size);
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        const double cx = double(x) + 0.5, cy = double(y) + 0.5;
        double edge_dist = 1e300;
        for (size_t i = 0; i < poly.size(); ++i)
          edge_dist = std::min(
              edge_dist,
              segment_distance(cx, cy, poly[i], poly[(i + 1) % poly.size()]));
        if (edge_dist <= 0.5) continue;  // inside the tolerance band
        const bool oracle = mask::point_in_polygon(cx, cy, poly);
        const bool scan = fill.at(y, x) > 0.5;
        ++compared;
        if (oracle != scan) ++mismatches;
      }
  }
  std::vector<CheckResult> out;
  out.push_back(
      {"rasterizer_oracle_agreement", mismatches == 0,
       std::to_string(polygon_count) + " polygons, " +
           std::to_string(compared) + " centers compared, " +
           std::to_string(mismatches) + " mismatches"});

  // a polygon entirely outside the image fills nothing
  std::vector<mask::Point> outside = {{double(size) + 5.0, 2.0},
                                      {double(size) + 9.0, 2.0},
                                      {double(size) + 7.0, 8.0}};
  Tensor f = mask::rasterize_polygon(outside, size, size);
  double s = 0.0;
  for (int64_t i = 0; i < f.numel(); ++i) s += f[i];
  out.push_back({"rasterizer_outside_image_empty", s == 0.0,
                 "filled " + fmt(s) + " pixels"});
  return out;
}

// --------------------------------------------------------------- attention

namespace {

using Mat = std::vector<std::vector<double>>;

Mat tensor_to_mat(const Tensor& t) {
  Mat m(size_t(t.dim(0)), std::vector<double>(size_t(t.dim(1))));
  for (int64_t i = 0; i < t.dim(0); ++i)
    for (int64_t j = 0; j < t.dim(1); ++j) m[size_t(i)][size_t(j)] = t.at(i, j);
  return m;
}

Mat mat_mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < b.size(); ++k)
      for (size_t j = 0; j < b[0].size(); ++j)
        c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat affine(const Mat& x, const Mat& w, const std::vector<double>& b) {
  Mat y = mat_mul(x, w);
  for (auto& row : y)
    for (size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return y;
}

// plain-loop multi-head attention over already-projected q/k/v
Mat loop_attention(const Mat& q, const Mat& k, const Mat& v, int heads) {
  const size_t S = q.size(), S2 = k.size(), D = q[0].size();
  const size_t dh = D / size_t(heads);
  Mat out(S, std::vector<double>(D, 0.0));
  for (int h = 0; h < heads; ++h) {
    const size_t off = size_t(h) * dh;
    for (size_t i = 0; i < S; ++i) {
      std::vector<double> scores(S2, 0.0);
      double mx = -1e300;
      for (size_t j = 0; j < S2; ++j) {
        double s = 0.0;
        for (size_t d = 0; d < dh; ++d) s += q[i][off + d] * k[j][off + d];
        scores[j] = s / std::sqrt(double(dh));
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (size_t j = 0; j < S2; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (size_t j = 0; j < S2; ++j) scores[j] /= z;
      for (size_t d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (size_t j = 0; j < S2; ++j) acc += scores[j] * v[j][off + d];
        out[i][off + d] = acc;
      }
    }
  }
  return out;
}

// full projected attention sublayer mirroring nn::MultiHeadAttention
Mat loop_mha(const nn::ParamStore& ps, const std::string& prefix,
             const Mat& q_in, const Mat& kv_in, int heads) {
  auto w = [&](const std::string& n) { return tensor_to_mat(ps.value(n)); };
  auto b = [&](const std::string& n) {
    const Tensor& t = ps.value(n);
    return std::vector<double>(t.data(), t.data() + t.numel());
  };
  Mat q = affine(q_in, w(prefix + ".wq.w"), b(prefix + ".wq.b"));
  Mat k = affine(kv_in, w(prefix + ".wk.w"), b(prefix + ".wk.b"));
  Mat v = affine(kv_in, w(prefix + ".wv.w"), b(prefix + ".wv.b"));
  Mat ctx = loop_attention(q, k, v, heads);
  return affine(ctx, w(prefix + ".wo.w"), b(prefix + ".wo.b"));
}

std::vector<double> loop_layernorm_row(const std::vector<double>& x,
                                       const std::vector<double>& g,
                                       const std::vector<double>& b,
                                       double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= double(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= double(x.size());
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    y[i] = g[i] * (x[i] - mean) / std::sqrt(var + eps) + b[i];
  return y;
}

Mat loop_layernorm(const nn::ParamStore& ps, const std::string& prefix,
                   const Mat& x) {
  const Tensor& g = ps.value(prefix + ".g");
  const Tensor& b = ps.value(prefix + ".b");
  std::vector<double> gv(g.data(), g.data() + g.numel());
  std::vector<double> bv(b.data(), b.data() + b.numel());
  Mat y;
  for (const auto& row : x) y.push_back(loop_layernorm_row(row, gv, bv, 1e-5));
  return y;
}

double max_mat_diff(const Mat& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[0].size(); ++j)
      m = std::max(m, std::fabs(a[i][j] - b.at(int64_t(i), int64_t(j))));
  return m;
}

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, s);
  return t;
}

}  // namespace

std::vector<CheckResult> verify_attention(uint64_t seed) {
  Rng rng(Rng::mix(seed ^ 0xa77eULL));
  std::vector<CheckResult> out;

  // raw core on 4 tokens, one and two heads
  for (int heads : {1, 2}) {
    Tensor q = random_tensor({4, 8}, rng);
    Tensor k = random_tensor({3, 8}, rng);
    Tensor v = random_tensor({3, 8}, rng);
    ag::Var got = nn::mha_core(ag::constant(q), ag::constant(k),
                               ag::constant(v), heads);
    Mat want =
        loop_attention(tensor_to_mat(q), tensor_to_mat(k), tensor_to_mat(v),
                       heads);
    const double d = max_mat_diff(want, got->value);
    out.push_back({"mha_core_vs_loop_oracle_h" + std::to_string(heads),
                   d < 1e-6, "max diff " + fmt(d)});
  }

  // tiny transformer: full encoder path vs. loop oracle (single layer,
  // single head, 3 tokens)
  {
    a2e::A2EConfig cfg;
    cfg.l = 2;
    cfg.n_hist = 1;
    cfg.t_pred = 2;
    cfg.latent_dim = 8;
    cfg.heads = 1;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.d_audio = 3;
    cfg.d_shape = 2;
    cfg.d_expr = 2;
    cfg.pe_period = 2;
    a2e::A2EModel model(cfg, 123);
    const nn::ParamStore& ps = model.params();

    Tensor audio = random_tensor({2, 3}, rng);
    Tensor alpha = random_tensor({2}, rng);
    Tensor hist = random_tensor({1, 2}, rng);
    ag::Var tokens =
        model.add_positional_encoding(model.embed_inputs(audio, alpha, hist));
    ag::Var memory = model.encode(tokens);

    // oracle: pre-LN block then final LN, all loops
    Mat x = tensor_to_mat(tokens->value);
    Mat nx = loop_layernorm(ps, "enc.0.ln1", x);
    Mat att = loop_mha(ps, "enc.0.attn", nx, nx, 1);
    Mat h1 = x;
    for (size_t i = 0; i < h1.size(); ++i)
      for (size_t j = 0; j < h1[0].size(); ++j) h1[i][j] += att[i][j];
    Mat nh = loop_layernorm(ps, "enc.0.ln2", h1);
    Mat f1 = affine(nh, tensor_to_mat(ps.value("enc.0.ffn.fc1.w")),
                    std::vector<double>(
                        ps.value("enc.0.ffn.fc1.b").data(),
                        ps.value("enc.0.ffn.fc1.b").data() +
                            ps.value("enc.0.ffn.fc1.b").numel()));
    for (auto& row : f1)
      for (auto& vv : row) vv = vv > 0.0 ? vv : 0.0;
    Mat f2 = affine(f1, tensor_to_mat(ps.value("enc.0.ffn.fc2.w")),
                    std::vector<double>(
                        ps.value("enc.0.ffn.fc2.b").data(),
                        ps.value("enc.0.ffn.fc2.b").data() +
                            ps.value("enc.0.ffn.fc2.b").numel()));
    Mat h2 = h1;
    for (size_t i = 0; i < h2.size(); ++i)
      for (size_t j = 0; j < h2[0].size(); ++j) h2[i][j] += f2[i][j];
    Mat want = loop_layernorm(ps, "enc.final_ln", h2);
    const double d = max_mat_diff(want, memory->value);
    out.push_back(
        {"cmsa_block_vs_loop_oracle", d < 1e-6, "max diff " + fmt(d)});

    // decoder cross-attention sublayer vs. oracle on the same model
    Tensor queries = random_tensor({2, 8}, rng);
    nn::MultiHeadAttention cross;
    cross.heads = 1;
    cross.wq = {&model.params(), "dec.0.cross.wq.w", "dec.0.cross.wq.b", 8, 8};
    cross.wk = {&model.params(), "dec.0.cross.wk.w", "dec.0.cross.wk.b", 8, 8};
    cross.wv = {&model.params(), "dec.0.cross.wv.w", "dec.0.cross.wv.b", 8, 8};
    cross.wo = {&model.params(), "dec.0.cross.wo.w", "dec.0.cross.wo.b", 8, 8};
    ag::Var tca = cross.apply(ag::constant(queries),
                              ag::constant(memory->value));
    Mat want_tca = loop_mha(ps, "dec.0.cross", tensor_to_mat(queries),
                            tensor_to_mat(memory->value), 1);
    const double d2 = max_mat_diff(want_tca, tca->value);
    out.push_back(
        {"tca_cross_attention_vs_loop_oracle", d2 < 1e-6,
         "max diff " + fmt(d2)});
  }

  // renderer cross-attention on a 2x2 spatial toy case: 4 tokens
  {
    render::RendererConfig cfg;
    cfg.stages = 2;
    cfg.base_channels = 4;
    cfg.image_h = cfg.image_w = 8;
    cfg.attention_stages = {0};
    cfg.attn_heads = 1;
    render::Renderer r(cfg, 99);
    const int64_t C = cfg.channels_at(2);
    Tensor fq = random_tensor({1, C, 2, 2}, rng);
    Tensor fref = random_tensor({1, C, 2, 2}, rng);

    nn::MultiHeadAttention attn;
    attn.heads = 1;
    attn.wq = {&r.params(), "dec0.xattn.wq.w", "dec0.xattn.wq.b", C, C};
    attn.wk = {&r.params(), "dec0.xattn.wk.w", "dec0.xattn.wk.b", C, C};
    attn.wv = {&r.params(), "dec0.xattn.wv.w", "dec0.xattn.wv.b", C, C};
    attn.wo = {&r.params(), "dec0.xattn.wo.w", "dec0.xattn.wo.b", C, C};
    ag::Var got = align::cross_attend(ag::constant(fq), ag::constant(fref),
                                      attn);
    // oracle: tokens are spatial positions, output added residually
    Mat q(4, std::vector<double>(size_t(C)));
    Mat kv(4, std::vector<double>(size_t(C)));
    for (int64_t c = 0; c < C; ++c)
      for (int64_t p = 0; p < 4; ++p) {
        q[size_t(p)][size_t(c)] = fq[c * 4 + p];
        kv[size_t(p)][size_t(c)] = fref[c * 4 + p];
      }
    Mat att = loop_mha(r.params(), "dec0.xattn", q, kv, 1);
    double d = 0.0;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t p = 0; p < 4; ++p)
        d = std::max(d, std::fabs(fq[c * 4 + p] + att[size_t(p)][size_t(c)] -
                                  got->value[c * 4 + p]));
    out.push_back({"renderer_cross_attend_vs_loop_oracle", d < 1e-6,
                   "max diff " + fmt(d)});
  }
  return out;
}

// --------------------------------------------------------------- gradients

namespace {

struct FdCheck {
  double max_rel_err = 0.0;
  // the floor keeps FD cancellation noise on near-zero entries from
  // registering as relative error
  void update(double fd, double an, double floor_ = 1e-6) {
    const double denom = std::max(std::fabs(fd), std::fabs(an));
    if (denom > floor_)
      max_rel_err = std::max(max_rel_err, std::fabs(fd - an) / denom);
  }
};

double fd_slope(std::function<double()> f, double& x, double h) {
  const double orig = x;
  x = orig + h;
  const double up = f();
  x = orig - h;
  const double dn = f();
  x = orig;
  return (up - dn) / (2.0 * h);
}

}  // namespace

std::vector<CheckResult> verify_gradients(uint64_t seed) {
  Rng rng(Rng::mix(seed ^ 0x96adULL));
  std::vector<CheckResult> out;

  // AdaIN
  {
    Tensor x = random_tensor({1, 3, 5, 5}, rng);
    Tensor s = random_tensor({1, 3}, rng, 0.5);
    Tensor b = random_tensor({1, 3}, rng, 0.5);
    Tensor gx = Tensor::zeros(x.shape()), gs = Tensor::zeros(s.shape()),
           gb = Tensor::zeros(b.shape());
    auto eval = [&](bool back) {
      ag::Var vx = ag::make_param(x, &gx);
      ag::Var vs = ag::make_param(s, &gs);
      ag::Var vb = ag::make_param(b, &gb);
      ag::Var y = ag::mean_all(ag::square(ag::adain(vx, vs, vb, 1e-5)));
      if (back) ag::backward(y);
      return y->value[0];
    };
    eval(true);
    FdCheck chk;
    for (int64_t i = 0; i < x.numel(); i += 7)
      chk.update(fd_slope([&] { return eval(false); }, x[i], 1e-5), gx[i]);
    for (int64_t i = 0; i < s.numel(); ++i)
      chk.update(fd_slope([&] { return eval(false); }, s[i], 1e-5), gs[i]);
    for (int64_t i = 0; i < b.numel(); ++i)
      chk.update(fd_slope([&] { return eval(false); }, b[i], 1e-5), gb[i]);
    out.push_back({"grad_adain", chk.max_rel_err < 1e-4,
                   "max rel err " + fmt(chk.max_rel_err)});
  }

  // cross-attention (projected path through a real MHA layer)
  {
    nn::ParamStore ps;
    Rng wrng(7);
    nn::MultiHeadAttention mha =
        nn::MultiHeadAttention::create(ps, wrng, "x", 6, 2);
    Tensor q = random_tensor({3, 6}, rng);
    Tensor kv = random_tensor({4, 6}, rng);
    Tensor gq = Tensor::zeros(q.shape());
    auto eval = [&](bool back) {
      ps.zero_grad();
      ag::Var vq = ag::make_param(q, &gq);
      ag::Var y = ag::mean_all(ag::square(mha.apply(vq, ag::constant(kv))));
      if (back) ag::backward(y);
      return y->value[0];
    };
    gq.fill(0.0);
    eval(true);
    Tensor gq_snapshot = gq;
    Tensor gw_snapshot = ps.grad("x.wq.w");
    FdCheck chk;
    for (int64_t i = 0; i < q.numel(); ++i)
      chk.update(fd_slope([&] { return eval(false); }, q[i], 1e-5),
                 gq_snapshot[i]);
    Tensor& wq = ps.value("x.wq.w");
    for (int64_t i = 0; i < wq.numel(); i += 9)
      chk.update(fd_slope([&] { return eval(false); }, wq[i], 1e-5),
                 gw_snapshot[i]);
    out.push_back({"grad_cross_attention", chk.max_rel_err < 1e-4,
                   "max rel err " + fmt(chk.max_rel_err)});
  }

  // a2e total loss w.r.t. sampled transformer parameters (tiny config)
  {
    a2e::A2EConfig cfg;
    cfg.l = 4;
    cfg.n_hist = 2;
    cfg.t_pred = 2;
    cfg.latent_dim = 8;
    cfg.heads = 1;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.d_audio = 3;
    cfg.d_shape = 2;
    cfg.d_expr = 3;
    cfg.pe_period = 2;
    a2e::A2EModel model(cfg, 5);
    face::MorphableModel fm = face::gen_synthetic_model(3, 24, 2, 3);

    Tensor audio = random_tensor({4, 3}, rng);
    Tensor alpha = random_tensor({2}, rng, 0.5);
    Tensor hist = random_tensor({2, 3}, rng, 0.5);
    Tensor beta_gt = random_tensor({2, 3}, rng, 0.5);
    std::vector<face::Coeff3D> frames;
    for (int t = 0; t < 2; ++t) {
      face::Coeff3D c;
      c.shape = alpha;
      c.expr = Tensor({3});
      for (int64_t j = 0; j < 3; ++j) c.expr[j] = beta_gt.at(t, j);
      c.pose.angles = {rng.normal(0.0, 0.2), rng.normal(0.0, 0.2),
                       rng.normal(0.0, 0.2)};
      frames.push_back(c);
    }
    auto eval = [&](bool back) {
      model.params().zero_grad();
      ag::Var pred = model.forward(audio, alpha, hist);
      ag::Var loss = a2e::loss_total(
          a2e::loss_mse(pred, beta_gt),
          a2e::loss_vertex(pred, frames, fm), cfg.vertex_loss_weight);
      if (back) ag::backward(loss);
      return loss->value[0];
    };
    eval(true);
    // copy analytic grads, then FD over >=50 sampled parameters
    std::vector<std::pair<std::string, int64_t>> picks;
    Rng prng(11);
    const auto& names = model.params().names();
    while (picks.size() < 60) {
      const auto& name = names[prng.below(names.size())];
      Tensor& v = model.params().value(name);
      picks.push_back({name, int64_t(prng.below(uint64_t(v.numel())))});
    }
    std::vector<double> analytic;
    for (auto& [name, idx] : picks)
      analytic.push_back(model.params().grad(name)[idx]);
    FdCheck chk;
    for (size_t i = 0; i < picks.size(); ++i) {
      auto& [name, idx] = picks[i];
      chk.update(fd_slope([&] { return eval(false); },
                          model.params().value(name)[idx], 1e-5),
                 analytic[i]);
    }
    out.push_back({"grad_loss_a2e_params", chk.max_rel_err < 1e-4,
                   "60 sampled params, max rel err " + fmt(chk.max_rel_err)});
  }

  // the four e2f losses w.r.t. the predicted image
  {
    Tensor pred = random_tensor({1, 3, 8, 8}, rng, 0.3);
    for (int64_t i = 0; i < pred.numel(); ++i)
      pred[i] = 0.5 + 0.4 * std::tanh(pred[i]);
    Tensor target = random_tensor({1, 3, 8, 8}, rng, 0.3);
    for (int64_t i = 0; i < target.numel(); ++i)
      target[i] = 0.5 + 0.4 * std::tanh(target[i]);
    // keep |pred-target| away from zero so the L1 kink cannot bite
    for (int64_t i = 0; i < pred.numel(); ++i)
      if (std::fabs(pred[i] - target[i]) < 1e-3)
        pred[i] += pred[i] > target[i] ? 1e-2 : -1e-2;
    Tensor teeth({1, 8, 8});
    for (int64_t i = 0; i < teeth.numel(); ++i) teeth[i] = (i % 3 == 0);
    e2f::FeatureNet feat(17);
    e2f::Discriminator disc(29);
    Tensor gp = Tensor::zeros(pred.shape());

    struct LossCase {
      const char* name;
      std::function<ag::Var(const ag::Var&)> build;
      double tol;
    };
    std::vector<LossCase> cases;
    cases.push_back({"grad_pixel_l1",
                     [&](const ag::Var& p) { return e2f::pixel_l1(p, target); },
                     1e-4});
    cases.push_back({"grad_perceptual",
                     [&](const ag::Var& p) {
                       return e2f::perceptual(p, target, feat);
                     },
                     1e-4});
    cases.push_back({"grad_adversarial_g",
                     [&](const ag::Var& p) {
                       return e2f::adversarial_losses(disc, target, p).g_loss;
                     },
                     1e-4});
    cases.push_back({"grad_teeth_l1",
                     [&](const ag::Var& p) {
                       return e2f::teeth_l1(p, target, teeth);
                     },
                     1e-4});
    for (auto& c : cases) {
      auto eval = [&](bool back) {
        disc.params().zero_grad();
        gp.fill(0.0);
        ag::Var vp = ag::make_param(pred, &gp);
        ag::Var loss = c.build(vp);
        if (back) ag::backward(loss);
        return loss->value[0];
      };
      eval(true);
      Tensor analytic = gp;
      FdCheck chk;
      for (int64_t i = 0; i < pred.numel(); i += 5)
        chk.update(fd_slope([&] { return eval(false); }, pred[i], 1e-6),
                   analytic[i]);
      out.push_back({c.name, chk.max_rel_err < c.tol,
                     "max rel err " + fmt(chk.max_rel_err)});
    }
  }

  // full toy render w.r.t. beta_hat
  {
    render::RendererConfig cfg;
    cfg.stages = 2;
    cfg.base_channels = 4;
    cfg.image_h = cfg.image_w = 16;
    cfg.attention_stages = {0, 1};
    cfg.attn_heads = 1;
    cfg.d_shape = 2;
    cfg.d_expr = 3;
    cfg.style_dim = 8;
    render::Renderer r(cfg, 31);
    Tensor src = random_tensor({1, 3, 16, 16}, rng, 0.2);
    Tensor ref = random_tensor({1, 3, 16, 16}, rng, 0.2);
    Tensor alpha = random_tensor({1, 2}, rng, 0.5);
    Tensor beta = random_tensor({1, 3}, rng, 0.5);
    Tensor pose = random_tensor({1, 6}, rng, 0.2);
    Tensor m({1, 1, 16, 16});
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = (i % 5) != 0;
    Tensor weights = random_tensor({1, 3, 16, 16}, rng);
    Tensor gb = Tensor::zeros(beta.shape());
    auto eval = [&](bool back) {
      r.params().zero_grad();
      gb.fill(0.0);
      ag::Var vb = ag::make_param(beta, &gb);
      render::RenderOut o = r.render(src, ref, alpha, vb, pose, m);
      ag::Var loss = ag::sum_all(ag::mul(o.output, ag::constant(weights)));
      if (back) ag::backward(loss);
      return loss->value[0];
    };
    eval(true);
    Tensor analytic = gb;
    FdCheck chk;
    for (int64_t i = 0; i < beta.numel(); ++i)
      chk.update(fd_slope([&] { return eval(false); }, beta[i], 1e-5),
                 analytic[i]);
    bool nonzero = false;
    for (int64_t i = 0; i < analytic.numel(); ++i)
      if (analytic[i] != 0.0) nonzero = true;
    out.push_back({"grad_render_wrt_beta", chk.max_rel_err < 1e-3 && nonzero,
                   "max rel err " + fmt(chk.max_rel_err) +
                       (nonzero ? "" : " (gradient identically zero)")});
  }
  return out;
}

std::vector<CheckResult> run_suite(const std::string& suite, uint64_t seed) {
  std::vector<CheckResult> out;
  const bool all = suite == "all";
  if (all || suite == "rasterizer") {
    auto r = verify_rasterizer(seed, 100, 64);
    out.insert(out.end(), r.begin(), r.end());
  }
  if (all || suite == "attention") {
    auto r = verify_attention(seed);
    out.insert(out.end(), r.begin(), r.end());
  }
  if (all || suite == "gradients") {
    auto r = verify_gradients(seed);
    out.insert(out.end(), r.begin(), r.end());
  }
  if (out.empty())
    throw std::invalid_argument("unknown verify suite: " + suite);
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace rt::verify
