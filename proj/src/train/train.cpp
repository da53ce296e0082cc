#include "realtalk/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "realtalk/container.hpp"
#include "realtalk/kernels.hpp"

namespace rt::train {

TrainConfig TrainConfig::a2e_paper() {
  TrainConfig c;
  c.lr = 5e-5;
  c.beta1 = 0.95;
  c.beta2 = 0.999;
  c.weight_decay = 0.0;
  c.batch_size = 64;
  c.iterations = 200000;
  return c;
}

TrainConfig TrainConfig::e2f_paper() {
  TrainConfig c;
  c.lr = 1e-4;
  c.beta1 = 0.9;
  c.beta2 = 0.96;
  c.weight_decay = 1e-5;
  c.batch_size = 10;
  c.iterations = 100000;
  return c;
}

TrainConfig TrainConfig::a2e_toy() {
  TrainConfig c;
  c.lr = 1e-3;
  c.beta1 = 0.95;
  c.beta2 = 0.999;
  c.weight_decay = 0.0;
  c.batch_size = 8;
  c.iterations = 2000;
  return c;
}

TrainConfig TrainConfig::e2f_toy() {
  TrainConfig c;
  c.lr = 2e-4;
  c.beta1 = 0.9;
  c.beta2 = 0.96;
  c.weight_decay = 1e-5;
  c.batch_size = 1;
  c.iterations = 3000;
  return c;
}

Adam::Adam(nn::ParamStore& ps, const TrainConfig& cfg)
    : ps_(&ps),
      lr_(cfg.lr),
      b1_(cfg.beta1),
      b2_(cfg.beta2),
      eps_(cfg.eps),
      wd_(cfg.weight_decay) {
  for (const auto& name : ps.names()) {
    m_.push_back(Tensor::zeros(ps.value(name).shape()));
    v_.push_back(Tensor::zeros(ps.value(name).shape()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, double(t_));
  const double bc2 = 1.0 - std::pow(b2_, double(t_));
  const auto& names = ps_->names();
  for (size_t i = 0; i < names.size(); ++i) {
    Tensor& p = ps_->value(names[i]);
    const Tensor& g = ps_->grad(names[i]);
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p[j]);
    }
  }
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  for (size_t i = 0; i < columns.size(); ++i)
    out << (i ? "," : "") << columns[i];
  out << "\n";
  char buf[32];
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.10g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << "\n";
  }
}

void save_checkpoint(
    const std::string& dir, const nn::ParamStore& ps,
    const std::vector<std::pair<std::string, std::string>>& config_lines) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/params");
  std::ofstream mf(dir + "/manifest.txt");
  mf << "format = rtckpt1\n";
  for (const auto& [k, v] : config_lines) mf << "config " << k << " = " << v << "\n";
  for (const auto& name : ps.names()) {
    const Tensor& t = ps.value(name);
    io::write_tensor(dir + "/params/" + name + ".rta", t);
    mf << "param " << name;
    for (int i = 0; i < t.ndim(); ++i) mf << " " << t.dim(i);
    mf << "\n";
  }
}

void load_checkpoint(const std::string& dir, nn::ParamStore& ps) {
  for (const auto& name : ps.names()) {
    Tensor t = io::read_tensor(dir + "/params/" + name + ".rta");
    Tensor& dst = ps.value(name);
    if (!t.same_shape(dst))
      throw io::FormatError("checkpoint parameter shape mismatch: " + name);
    dst = std::move(t);
  }
}

std::vector<std::pair<std::string, std::string>> read_checkpoint_config(
    const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw io::FormatError("missing checkpoint manifest in " + dir);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(mf, line)) {
    std::istringstream ss(line);
    std::string kw, key, eq;
    if (!(ss >> kw) || kw != "config") continue;
    if (!(ss >> key >> eq) || eq != "=") continue;
    std::string value;
    std::getline(ss, value);
    const size_t at = value.find_first_not_of(' ');
    out.push_back({key, at == std::string::npos ? "" : value.substr(at)});
  }
  return out;
}

namespace {

void clip_gradients(nn::ParamStore& ps, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = ps.grad_norm();
  if (norm > max_norm) ps.scale_grads(max_norm / norm);
}

}  // namespace

// ---------------------------------------------------------------- stage 1

A2EWindow sample_window(const data::Dataset& ds, const a2e::A2EConfig& cfg,
                        int64_t clip, int64_t start, Rng& history_rng) {
  const data::ClipSample& s = ds.clips.at(size_t(clip));
  const int64_t T = cfg.t_pred;
  A2EWindow w;
  w.audio = Tensor({cfg.l, cfg.d_audio});
  for (int64_t r = 0; r < cfg.l; ++r)
    for (int64_t a = 0; a < cfg.d_audio; ++a)
      w.audio.at(r, a) = s.audio.at(2 * start + r, a);
  w.alpha = s.coeffs.alpha;
  w.beta_hist = Tensor({cfg.n_hist, cfg.d_expr});
  const int64_t frames = s.coeffs.beta.dim(0);
  for (int64_t i = 0; i < cfg.n_hist; ++i) {
    const int64_t t = int64_t(history_rng.below(uint64_t(frames)));
    for (int64_t j = 0; j < cfg.d_expr; ++j)
      w.beta_hist.at(i, j) = s.coeffs.beta.at(t, j);
  }
  w.beta_gt = Tensor({T, cfg.d_expr});
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t j = 0; j < cfg.d_expr; ++j)
      w.beta_gt.at(t, j) = s.coeffs.beta.at(start + t, j);
    w.frames.push_back(ds.coeffs_at(clip, start + t));
  }
  return w;
}

TrainLog train_a2e(a2e::A2EModel& model, const data::Dataset& ds,
                   const TrainConfig& cfg) {
  const a2e::A2EConfig& mc = model.config();
  if (ds.params.d_audio != mc.d_audio || ds.params.d_expr != mc.d_expr ||
      ds.params.d_shape != mc.d_shape)
    throw std::invalid_argument("train_a2e: dataset/config dims disagree");
  if (ds.params.frames_per_clip < mc.t_pred)
    throw std::invalid_argument("train_a2e: clips shorter than window");
  if (mc.l != 2 * mc.t_pred)
    throw std::invalid_argument("train_a2e: l must equal 2*T");

  Rng rng(Rng::mix(cfg.seed ^ 0x72a23ULL));
  Adam adam(model.params(), cfg);
  TrainLog log;
  log.columns = {"step", "mse", "vertex", "total"};

  const int64_t max_start = ds.params.frames_per_clip - mc.t_pred;
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    model.params().zero_grad();
    ag::Var total;
    double mse_v = 0.0, vtx_v = 0.0;
    for (int64_t b = 0; b < cfg.batch_size; ++b) {
      const int64_t clip = int64_t(rng.below(uint64_t(ds.clips.size())));
      const int64_t start = int64_t(rng.below(uint64_t(max_start + 1)));
      A2EWindow w = sample_window(ds, mc, clip, start, rng);
      ag::Var pred = model.forward(w.audio, w.alpha, w.beta_hist);
      ag::Var mse = a2e::loss_mse(pred, w.beta_gt);
      ag::Var vtx = a2e::loss_vertex(pred, w.frames, ds.model);
      ag::Var item = a2e::loss_total(mse, vtx, mc.vertex_loss_weight);
      mse_v += mse->value[0];
      vtx_v += vtx->value[0];
      total = total ? ag::add(total, item) : item;
    }
    total = ag::mul_scalar(total, 1.0 / double(cfg.batch_size));
    ag::backward(total);
    clip_gradients(model.params(), cfg.clip_norm);
    adam.step();
    log.rows.push_back({double(it), mse_v / double(cfg.batch_size),
                        vtx_v / double(cfg.batch_size), total->value[0]});
  }
  return log;
}

A2EMetrics evaluate_a2e(const a2e::A2EModel& model, const data::Dataset& ds,
                        uint64_t history_seed) {
  const a2e::A2EConfig& mc = model.config();
  Rng rng(Rng::mix(history_seed ^ 0xe7a1ULL));
  A2EMetrics m;
  int64_t windows = 0;
  for (size_t clip = 0; clip < ds.clips.size(); ++clip) {
    for (int64_t start = 0;
         start + mc.t_pred <= ds.params.frames_per_clip; start += mc.t_pred) {
      A2EWindow w = sample_window(ds, mc, int64_t(clip), start, rng);
      ag::Var pred = model.forward(w.audio, w.alpha, w.beta_hist);
      m.expression_error += a2e::loss_mse(pred, w.beta_gt)->value[0];
      m.mouth_vertex_error +=
          a2e::loss_vertex(pred, w.frames, ds.model)->value[0];
      ++windows;
    }
  }
  if (windows > 0) {
    m.expression_error /= double(windows);
    m.mouth_vertex_error /= double(windows);
  }
  return m;
}

double evaluate_lmd(const a2e::A2EModel& model, const data::Dataset& ds,
                    uint64_t history_seed) {
  const a2e::A2EConfig& mc = model.config();
  Rng rng(Rng::mix(history_seed ^ 0xe7a1ULL));
  double total = 0.0;
  int64_t count = 0;
  for (size_t clip = 0; clip < ds.clips.size(); ++clip) {
    for (int64_t start = 0;
         start + mc.t_pred <= ds.params.frames_per_clip; start += mc.t_pred) {
      A2EWindow w = sample_window(ds, mc, int64_t(clip), start, rng);
      Tensor pred = model.predict(w.audio, w.alpha, w.beta_hist);
      for (int64_t t = 0; t < mc.t_pred; ++t) {
        face::Coeff3D c_gt = w.frames[size_t(t)];
        face::Coeff3D c_pred = c_gt;
        c_pred.expr = Tensor({mc.d_expr});
        for (int64_t j = 0; j < mc.d_expr; ++j)
          c_pred.expr[j] = pred.at(t, j);
        Tensor p_gt = face::project(
            face::mouth_vertex_subset(ds.model,
                                      face::compute_vertices(ds.model, c_gt)),
            c_gt.offset, ds.params.focal);
        Tensor p_pred = face::project(
            face::mouth_vertex_subset(
                ds.model, face::compute_vertices(ds.model, c_pred)),
            c_pred.offset, ds.params.focal);
        for (int64_t i = 0; i < p_gt.dim(0); ++i) {
          const double dx = p_gt.at(i, 0) - p_pred.at(i, 0);
          const double dy = p_gt.at(i, 1) - p_pred.at(i, 1);
          total += std::sqrt(dx * dx + dy * dy);
          ++count;
        }
      }
    }
  }
  return count > 0 ? total / double(count) : 0.0;
}

// ---------------------------------------------------------------- stage 2

namespace {

struct E2FBatch {
  Tensor masked_src, ref, target;  // [B,3,H,W]
  Tensor alpha, beta, pose;        // [B, *]
  Tensor mask;                     // [B,1,H,W]
  Tensor teeth;                    // [B,H,W]
};

Tensor make_mask(const data::Dataset& ds, const face::Coeff3D& c,
                 const E2FOptions& opt) {
  if (opt.naive_mask)
    return mask::lower_half_mask(ds.params.image_h, ds.params.image_w);
  return mask::build_mask(ds.model, c, ds.params.focal, ds.params.image_h,
                          ds.params.image_w, opt.mask_dilate)
      .mask;
}

E2FBatch assemble_batch(const data::Dataset& ds,
                        const std::vector<std::pair<int64_t, int64_t>>& items,
                        const E2FOptions& opt) {
  const int64_t B = int64_t(items.size());
  const int64_t H = ds.params.image_h, W = ds.params.image_w;
  const int64_t plane = 3 * H * W;
  E2FBatch b;
  b.masked_src = Tensor({B, 3, H, W});
  b.ref = Tensor({B, 3, H, W});
  b.target = Tensor({B, 3, H, W});
  b.alpha = Tensor({B, ds.params.d_shape});
  b.beta = Tensor({B, ds.params.d_expr});
  b.pose = Tensor({B, 6});
  b.mask = Tensor({B, 1, H, W});
  b.teeth = Tensor({B, H, W});
  for (int64_t i = 0; i < B; ++i) {
    const auto [clip, frame] = items[size_t(i)];
    face::Coeff3D c = ds.coeffs_at(clip, frame);
    Tensor target = ds.frame_at(clip, frame);
    Tensor ref = ds.frame_at(clip, 0);
    Tensor m = make_mask(ds, c, opt);
    Tensor teeth = mask::build_teeth_mask(ds.model, c, ds.params.focal, H, W,
                                          m)
                       .mask;
    Tensor masked = mask::apply_mask(target, m);
    std::copy(masked.data(), masked.data() + plane,
              b.masked_src.data() + i * plane);
    std::copy(ref.data(), ref.data() + plane, b.ref.data() + i * plane);
    std::copy(target.data(), target.data() + plane,
              b.target.data() + i * plane);
    for (int64_t j = 0; j < ds.params.d_shape; ++j)
      b.alpha.at(i, j) = c.shape[j];
    for (int64_t j = 0; j < ds.params.d_expr; ++j)
      b.beta.at(i, j) = c.expr[j];
    b.pose.at(i, 0) = c.pose.angles[0];
    b.pose.at(i, 1) = c.pose.angles[1];
    b.pose.at(i, 2) = c.pose.angles[2];
    b.pose.at(i, 3) = c.pose.translation[0];
    b.pose.at(i, 4) = c.pose.translation[1];
    b.pose.at(i, 5) = c.pose.translation[2];
    std::copy(m.data(), m.data() + H * W, b.mask.data() + i * H * W);
    std::copy(teeth.data(), teeth.data() + H * W, b.teeth.data() + i * H * W);
  }
  return b;
}

double masked_l1_metric(const Tensor& out, const Tensor& target,
                        const Tensor& mask) {
  // L1 over the generated region (mask == 0)
  const int64_t B = out.dim(0), C = out.dim(1), P = out.dim(2) * out.dim(3);
  double num = 0.0, den = 0.0;
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < P; ++i) {
        const double hole = 1.0 - mask[n * P + i];
        num += hole * std::fabs(out[(n * C + c) * P + i] -
                                target[(n * C + c) * P + i]);
        den += hole;
      }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace

TrainLog train_e2f(render::Renderer& gen, e2f::Discriminator& disc,
                   const e2f::FeatureNet& feat, const data::Dataset& ds,
                   const TrainConfig& cfg, const E2FOptions& opt) {
  if (gen.config().image_h != ds.params.image_h ||
      gen.config().image_w != ds.params.image_w)
    throw std::invalid_argument("train_e2f: image size mismatch");
  if (gen.config().d_shape != ds.params.d_shape ||
      gen.config().d_expr != ds.params.d_expr)
    throw std::invalid_argument("train_e2f: coefficient dims mismatch");

  Rng rng(Rng::mix(cfg.seed ^ 0x72e2fULL));
  Adam adam_g(gen.params(), cfg);
  Adam adam_d(disc.params(), cfg);
  const bool use_gan = opt.weights.adversarial > 0.0;

  TrainLog log;
  log.columns = {"step", "pixel",    "perceptual", "adv_g",
                 "adv_d", "teeth",   "total",      "masked_l1"};

  for (int64_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::pair<int64_t, int64_t>> items;
    for (int64_t b = 0; b < cfg.batch_size; ++b) {
      const int64_t clip = int64_t(rng.below(uint64_t(ds.clips.size())));
      const int64_t frame =
          int64_t(rng.below(uint64_t(ds.params.frames_per_clip)));
      items.push_back({clip, frame});
    }
    E2FBatch batch = assemble_batch(ds, items, opt);

    // generator step
    gen.params().zero_grad();
    disc.params().zero_grad();
    render::RenderOut out =
        gen.render(batch.masked_src, batch.ref, batch.alpha,
                   ag::constant(batch.beta), batch.pose, batch.mask);
    ag::Var pix = e2f::pixel_l1(out.output, batch.target);
    ag::Var perc = e2f::perceptual(out.output, batch.target, feat);
    ag::Var teeth = e2f::teeth_l1(out.output, batch.target, batch.teeth);
    ag::Var g_adv;
    ag::Var d_loss;
    if (use_gan) {
      e2f::AdvLosses adv = e2f::adversarial_losses(disc, batch.target,
                                                   out.output);
      g_adv = adv.g_loss;
      d_loss = adv.d_loss;
    } else {
      g_adv = ag::constant(Tensor::scalar(0.0));
    }
    ag::Var total = e2f::total_e2f(pix, perc, g_adv, teeth, opt.weights);
    ag::backward(total);
    clip_gradients(gen.params(), cfg.clip_norm);
    adam_g.step();

    // discriminator step: the g-step backward also deposited gradients in D
    // through the g_adv path; discard them and backprop d_loss alone.
    double d_loss_v = 0.0;
    if (use_gan) {
      disc.params().zero_grad();
      ag::backward(d_loss);
      clip_gradients(disc.params(), cfg.clip_norm);
      adam_d.step();
      d_loss_v = d_loss->value[0];
    }

    log.rows.push_back({double(it), pix->value[0], perc->value[0],
                        g_adv->value[0], d_loss_v, teeth->value[0],
                        total->value[0],
                        masked_l1_metric(out.output->value, batch.target,
                                         batch.mask)});
  }
  return log;
}

double masked_region_l1(const render::Renderer& gen, const data::Dataset& ds,
                        const E2FOptions& opt) {
  double total = 0.0;
  int64_t count = 0;
  for (size_t clip = 0; clip < ds.clips.size(); ++clip) {
    for (int64_t frame = 0; frame < ds.params.frames_per_clip; ++frame) {
      E2FBatch b = assemble_batch(ds, {{int64_t(clip), frame}}, opt);
      render::RenderOut out = gen.render(b.masked_src, b.ref, b.alpha,
                                         ag::constant(b.beta), b.pose, b.mask);
      total += masked_l1_metric(out.output->value, b.target, b.mask);
      ++count;
    }
  }
  return count > 0 ? total / double(count) : 0.0;
}

// ---------------------------------------------------------------- pipeline

InferResult infer_clip(const a2e::A2EModel& a2e_model,
                       const render::Renderer& gen, const data::Dataset& ds,
                       int64_t clip, uint64_t history_seed,
                       const E2FOptions& opt) {
  const a2e::A2EConfig& mc = a2e_model.config();
  const data::ClipSample& s = ds.clips.at(size_t(clip));
  const int64_t frames = s.coeffs.beta.dim(0);  // floor(l'/2)
  const int64_t T = mc.t_pred;
  if (frames < T)
    throw std::invalid_argument("infer_clip: clip shorter than one window");

  Rng rng(Rng::mix(history_seed ^ 0x1f3aULL));
  InferResult res;
  res.predicted_beta = Tensor({frames, mc.d_expr});

  // non-overlapping windows; the final window overlaps backward if needed
  for (int64_t start = 0; start < frames;) {
    const int64_t w_start = std::min(start, frames - T);
    A2EWindow w = sample_window(ds, mc, clip, w_start, rng);
    Tensor pred = a2e_model.predict(w.audio, w.alpha, w.beta_hist);
    for (int64_t t = w_start; t < w_start + T; ++t)
      if (t >= start)
        for (int64_t j = 0; j < mc.d_expr; ++j)
          res.predicted_beta.at(t, j) = pred.at(t - w_start, j);
    start = w_start + T;
  }

  Tensor ref = ds.frame_at(clip, 0);
  for (int64_t t = 0; t < frames; ++t) {
    face::Coeff3D c = ds.coeffs_at(clip, t);
    for (int64_t j = 0; j < mc.d_expr; ++j)
      c.expr[j] = res.predicted_beta.at(t, j);
    Tensor m = opt.naive_mask
                   ? mask::lower_half_mask(ds.params.image_h, ds.params.image_w)
                   : mask::build_mask(ds.model, c, ds.params.focal,
                                      ds.params.image_h, ds.params.image_w,
                                      opt.mask_dilate)
                         .mask;
    Tensor src = ds.frame_at(clip, t);
    Tensor masked = mask::apply_mask(src, m);

    const int64_t H = ds.params.image_h, W = ds.params.image_w;
    Tensor b_src({1, 3, H, W}, std::vector<double>(
                                   masked.data(), masked.data() + 3 * H * W));
    Tensor b_ref({1, 3, H, W},
                 std::vector<double>(ref.data(), ref.data() + 3 * H * W));
    Tensor b_alpha({1, ds.params.d_shape});
    for (int64_t j = 0; j < ds.params.d_shape; ++j)
      b_alpha.at(0, j) = c.shape[j];
    Tensor b_beta({1, ds.params.d_expr});
    for (int64_t j = 0; j < ds.params.d_expr; ++j)
      b_beta.at(0, j) = c.expr[j];
    Tensor b_pose({1, 6},
                  {c.pose.angles[0], c.pose.angles[1], c.pose.angles[2],
                   c.pose.translation[0], c.pose.translation[1],
                   c.pose.translation[2]});
    Tensor b_mask({1, 1, H, W},
                  std::vector<double>(m.data(), m.data() + H * W));
    render::RenderOut out = gen.render(b_src, b_ref, b_alpha,
                                       ag::constant(b_beta), b_pose, b_mask);
    Tensor frame({3, H, W},
                 std::vector<double>(out.output->value.data(),
                                     out.output->value.data() + 3 * H * W));
    res.frames.push_back(std::move(frame));
    res.masks.push_back(std::move(m));
  }
  return res;
}

}  // namespace rt::train
