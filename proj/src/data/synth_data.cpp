#include "realtalk/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "realtalk/container.hpp"
#include "realtalk/rng.hpp"

namespace rt::data {

namespace {

constexpr int kSinComponents = 3;

struct SinParams {
  double amp, omega, phase;
};

double eval_sins(const std::vector<SinParams>& ps, double t) {
  double v = 0.0;
  for (const auto& p : ps) v += p.amp * std::sin(p.omega * t + p.phase);
  return v;
}

std::vector<SinParams> draw_sins(Rng& rng, double amp_scale, double omega_lo,
                                 double omega_hi) {
  std::vector<SinParams> ps(kSinComponents);
  for (auto& p : ps) {
    p.amp = amp_scale * rng.uniform(0.4, 1.0);
    p.omega = rng.uniform(omega_lo, omega_hi);
    p.phase = rng.uniform(0.0, 2.0 * M_PI);
  }
  return ps;
}

double step_bound(const std::vector<SinParams>& ps) {
  double b = 0.0;
  for (const auto& p : ps) b += p.amp * std::min(2.0, p.omega);
  return b;
}

}  // namespace

CoeffTrack gen_coeff_track(uint64_t clip_seed, int64_t frames, int64_t d_shape,
                           int64_t d_expr, const Tensor& shape_to_offset,
                           double image_cx, double image_cy) {
  if (frames < 1) throw std::invalid_argument("gen_coeff_track: frames < 1");
  Rng rng(Rng::mix(clip_seed ^ 0xc0effULL));
  CoeffTrack tr;
  tr.alpha = Tensor({d_shape});
  for (int64_t j = 0; j < d_shape; ++j) tr.alpha[j] = rng.normal(0.0, 0.7);

  const bool structured = d_expr >= 6;
  const int64_t dyn_end = structured ? d_expr - 4 : d_expr;
  const int64_t shape_off_begin = structured ? d_expr - 4 : d_expr;
  const int64_t latent_off_begin = structured ? d_expr - 2 : d_expr;

  // per-clip offsets: a shape-coupled part plus a free latent
  std::vector<double> offset(size_t(d_expr), 0.0);
  if (structured) {
    for (int64_t k = 0; k < 2; ++k) {
      double v = 0.0;
      for (int64_t j = 0; j < d_shape; ++j)
        v += shape_to_offset.at(k, j) * tr.alpha[j];
      offset[size_t(shape_off_begin + k)] = v;
    }
    offset[size_t(latent_off_begin)] = rng.normal(0.0, 0.55);
    offset[size_t(latent_off_begin + 1)] = rng.normal(0.0, 0.55);
  }

  std::vector<std::vector<SinParams>> beta_sins{size_t(d_expr)};
  for (int64_t j = 0; j < d_expr; ++j) {
    const bool dynamic = j < dyn_end;
    beta_sins[size_t(j)] = dynamic ? draw_sins(rng, 0.35, 0.25, 0.9)
                                   : draw_sins(rng, 0.13, 0.15, 0.6);
  }
  std::vector<SinParams> pose_sins[6];
  for (int k = 0; k < 3; ++k) pose_sins[k] = draw_sins(rng, 0.05, 0.05, 0.3);
  for (int k = 3; k < 6; ++k) pose_sins[k] = draw_sins(rng, 0.06, 0.05, 0.3);
  std::vector<SinParams> tau_sins[2];
  tau_sins[0] = draw_sins(rng, 0.8, 0.05, 0.25);
  tau_sins[1] = draw_sins(rng, 0.8, 0.05, 0.25);

  tr.beta = Tensor({frames, d_expr});
  tr.pose = Tensor({frames, 6});
  tr.offset = Tensor({frames, 2});
  for (int64_t t = 0; t < frames; ++t) {
    for (int64_t j = 0; j < d_expr; ++j)
      tr.beta.at(t, j) = offset[size_t(j)] +
                         eval_sins(beta_sins[size_t(j)], double(t));
    for (int k = 0; k < 6; ++k)
      tr.pose.at(t, k) = eval_sins(pose_sins[k], double(t));
    tr.offset.at(t, 0) = image_cx + eval_sins(tau_sins[0], double(t));
    tr.offset.at(t, 1) = image_cy + eval_sins(tau_sins[1], double(t));
  }
  tr.max_step_bound = 0.0;
  for (const auto& sins : beta_sins)
    tr.max_step_bound = std::max(tr.max_step_bound, step_bound(sins));
  return tr;
}

Tensor derive_audio(const CoeffTrack& track, const Tensor& audio_map,
                    double noise_level, uint64_t seed) {
  const int64_t frames = track.beta.dim(0);
  const int64_t d_expr = track.beta.dim(1);
  const int64_t d_audio = audio_map.dim(0) / 2;
  if (audio_map.dim(1) != d_expr)
    throw std::invalid_argument("derive_audio: map/beta dim mismatch");
  Rng rng(Rng::mix(seed ^ 0xa0d10ULL));
  Tensor audio({frames * 2, d_audio});
  for (int64_t t = 0; t < frames; ++t) {
    for (int half = 0; half < 2; ++half) {
      const int64_t row_off = half == 0 ? 0 : d_audio;
      for (int64_t a = 0; a < d_audio; ++a) {
        double v = 0.0;
        for (int64_t j = 0; j < d_expr; ++j)
          v += audio_map.at(row_off + a, j) * track.beta.at(t, j);
        if (noise_level > 0.0) v += rng.normal(0.0, noise_level);
        audio.at(2 * t + half, a) = v;
      }
    }
  }
  return audio;
}

namespace {

void hash_color(uint64_t h, double* rgb, double lo, double hi) {
  for (int c = 0; c < 3; ++c) {
    const double u = double((h >> (c * 21)) & 0x1fffff) / double(0x1fffff);
    rgb[c] = lo + (hi - lo) * u;
  }
}

}  // namespace

Tensor oracle_render(const face::MorphableModel& m, const face::Coeff3D& c,
                     int64_t h, int64_t w, double focal, uint64_t bg_seed) {
  Tensor img({3, h, w});
  // seeded background: linear gradient plus a few soft blobs
  {
    Rng rng(Rng::mix(bg_seed ^ 0xb9ULL));
    double base[3], grad[3];
    hash_color(rng.next_u64(), base, 0.12, 0.45);
    for (int ch = 0; ch < 3; ++ch) grad[ch] = rng.uniform(-0.18, 0.18);
    const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
    struct Blob {
      double x, y, r, amp[3];
    };
    std::vector<Blob> blobs(4);
    for (auto& b : blobs) {
      b.x = rng.uniform(0.1, 0.9) * double(w);
      b.y = rng.uniform(0.1, 0.9) * double(h);
      b.r = rng.uniform(0.15, 0.35) * double(std::max(h, w));
      for (int ch = 0; ch < 3; ++ch) b.amp[ch] = rng.uniform(-0.16, 0.16);
    }
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double u = (double(x) / double(w) - 0.5) * gx +
                         (double(y) / double(h) - 0.5) * gy;
        for (int ch = 0; ch < 3; ++ch) {
          double v = base[ch] + grad[ch] * u;
          for (const auto& b : blobs) {
            const double dx = double(x) - b.x, dy = double(y) - b.y;
            v += b.amp[ch] * std::exp(-(dx * dx + dy * dy) / (2 * b.r * b.r));
          }
          img[(ch * h + y) * w + x] = std::min(1.0, std::max(0.0, v));
        }
      }
  }

  Tensor verts = face::compute_vertices(m, c);
  Tensor proj = face::project(verts, c.offset, focal);

  std::vector<int64_t> order(size_t(m.n_vertices()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return verts.at(a, 2) < verts.at(b, 2);  // back to front
  });

  std::vector<bool> is_mouth(size_t(m.n_vertices()), false);
  std::vector<bool> is_teeth(size_t(m.n_vertices()), false);
  for (int64_t i : m.mouth_indices) is_mouth[size_t(i)] = true;
  for (int64_t i : m.teeth_indices) is_teeth[size_t(i)] = true;

  const double sigma = 1.3;
  const int64_t radius = 4;
  for (int64_t vi : order) {
    double rgb[3];
    const uint64_t hash = Rng::mix(m.seed ^ (uint64_t(vi) * 0x9e3779b9ULL));
    if (is_teeth[size_t(vi)]) {
      hash_color(hash, rgb, 0.85, 1.0);  // near-white teeth
    } else if (is_mouth[size_t(vi)]) {
      hash_color(hash, rgb, 0.05, 0.25);  // dark base, red dominant
      rgb[0] = 0.75 + 0.2 * rgb[0];
    } else {
      hash_color(hash, rgb, 0.35, 0.9);
    }
    // projected coordinates map directly to tensor (col, row); files are
    // flipped for display at write time only
    const double px = proj.at(vi, 0), py = proj.at(vi, 1);
    const double iy = py;
    const int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(px)) - radius);
    const int64_t x1 = std::min<int64_t>(w - 1, int64_t(std::floor(px)) + radius);
    const int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(iy)) - radius);
    const int64_t y1 = std::min<int64_t>(h - 1, int64_t(std::floor(iy)) + radius);
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) {
        const double dx = double(x) - px, dy = double(y) - iy;
        const double a = 0.9 * std::exp(-(dx * dx + dy * dy) /
                                        (2.0 * sigma * sigma));
        for (int ch = 0; ch < 3; ++ch) {
          double& p = img[(ch * h + y) * w + x];
          p = p * (1.0 - a) + rgb[ch] * a;
        }
      }
  }
  return img;
}

face::Coeff3D Dataset::coeffs_at(int64_t clip, int64_t frame) const {
  const ClipSample& s = clips.at(size_t(clip));
  face::Coeff3D c;
  c.shape = s.coeffs.alpha;
  c.expr = Tensor({params.d_expr});
  for (int64_t j = 0; j < params.d_expr; ++j)
    c.expr[j] = s.coeffs.beta.at(frame, j);
  c.pose.angles = {s.coeffs.pose.at(frame, 0), s.coeffs.pose.at(frame, 1),
                   s.coeffs.pose.at(frame, 2)};
  c.pose.translation = {s.coeffs.pose.at(frame, 3), s.coeffs.pose.at(frame, 4),
                        s.coeffs.pose.at(frame, 5)};
  c.offset = {s.coeffs.offset.at(frame, 0), s.coeffs.offset.at(frame, 1)};
  return c;
}

Tensor Dataset::frame_at(int64_t clip, int64_t frame) const {
  const Tensor& all = clips.at(size_t(clip)).frames;
  const int64_t plane = 3 * params.image_h * params.image_w;
  Tensor out({3, params.image_h, params.image_w});
  std::copy(all.data() + frame * plane, all.data() + (frame + 1) * plane,
            out.data());
  return out;
}

Dataset generate_dataset(const DatasetParams& p) {
  Dataset ds;
  ds.params = p;
  ds.model = face::gen_synthetic_model(Rng::mix(p.seed ^ 0x30de1ULL),
                                       p.n_vertices, p.d_shape, p.d_expr);

  Rng const_rng(Rng::mix(p.seed ^ 0xc0257ULL));
  const bool structured = p.d_expr >= 6;
  const int64_t dyn_end = structured ? p.d_expr - 4 : p.d_expr;
  ds.audio_map = Tensor({2 * p.d_audio, p.d_expr});
  const double scale = 1.0 / std::sqrt(double(std::max<int64_t>(dyn_end, 1)));
  for (int64_t r = 0; r < 2 * p.d_audio; ++r)
    for (int64_t j = 0; j < p.d_expr; ++j)
      ds.audio_map.at(r, j) = j < dyn_end ? const_rng.normal(0.0, scale) : 0.0;

  ds.shape_to_offset = Tensor({2, p.d_shape});
  const double so_scale = 0.8 / std::sqrt(double(p.d_shape));
  for (int64_t i = 0; i < ds.shape_to_offset.numel(); ++i)
    ds.shape_to_offset[i] = const_rng.normal(0.0, so_scale);

  const double cx = double(p.image_w) / 2.0;
  const double cy = double(p.image_h) / 2.0;
  for (int64_t ci = 0; ci < p.clips; ++ci) {
    ClipSample s;
    s.clip_seed =
        Rng::mix(p.seed ^ Rng::mix(0x11c0ULL + p.clip_salt * 7919 +
                                   uint64_t(ci)));
    s.coeffs = gen_coeff_track(s.clip_seed, p.frames_per_clip, p.d_shape,
                               p.d_expr, ds.shape_to_offset, cx, cy);
    s.audio = derive_audio(s.coeffs, ds.audio_map, p.audio_noise, s.clip_seed);
    s.frames = Tensor({p.frames_per_clip, 3, p.image_h, p.image_w});
    ds.clips.push_back(std::move(s));
    ClipSample& sc = ds.clips.back();
    const int64_t plane = 3 * p.image_h * p.image_w;
    for (int64_t t = 0; t < p.frames_per_clip; ++t) {
      face::Coeff3D c = ds.coeffs_at(ci, t);
      Tensor frame =
          oracle_render(ds.model, c, p.image_h, p.image_w, p.focal,
                        sc.clip_seed);
      std::copy(frame.data(), frame.data() + plane,
                sc.frames.data() + t * plane);
    }
  }
  return ds;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  face::save_model(dir + "/model", ds.model);
  io::write_tensor(dir + "/audio_map.rta", ds.audio_map);
  io::write_tensor(dir + "/shape_to_offset.rta", ds.shape_to_offset);

  std::ofstream mf(dir + "/manifest.txt");
  const DatasetParams& p = ds.params;
  mf << "format = rtds1\n";
  mf << "seed = " << p.seed << "\n";
  mf << "clip_salt = " << p.clip_salt << "\n";
  mf << "clips = " << p.clips << "\n";
  mf << "frames_per_clip = " << p.frames_per_clip << "\n";
  mf << "n_vertices = " << p.n_vertices << "\n";
  mf << "d_shape = " << p.d_shape << "\n";
  mf << "d_expr = " << p.d_expr << "\n";
  mf << "d_audio = " << p.d_audio << "\n";
  mf << "image_h = " << p.image_h << "\n";
  mf << "image_w = " << p.image_w << "\n";
  mf << "focal = " << p.focal << "\n";
  mf << "audio_noise = " << p.audio_noise << "\n";
  auto shape_str = [](const Tensor& t) {
    std::string s;
    for (int i = 0; i < t.ndim(); ++i)
      s += (i ? "x" : "") + std::to_string(t.dim(i));
    return s;
  };
  mf << "array audio_map " << shape_str(ds.audio_map) << "\n";
  mf << "array shape_to_offset " << shape_str(ds.shape_to_offset) << "\n";
  char name[64];
  for (int64_t ci = 0; ci < p.clips; ++ci) {
    const ClipSample& s = ds.clips[size_t(ci)];
    std::snprintf(name, sizeof(name), "clip_%04lld", (long long)ci);
    const std::string cdir = dir + "/" + name;
    fs::create_directories(cdir);
    io::write_tensor(cdir + "/alpha.rta", s.coeffs.alpha);
    io::write_tensor(cdir + "/beta.rta", s.coeffs.beta);
    io::write_tensor(cdir + "/pose.rta", s.coeffs.pose);
    io::write_tensor(cdir + "/tau.rta", s.coeffs.offset);
    io::write_tensor(cdir + "/audio.rta", s.audio);
    io::write_tensor(cdir + "/frames.rta", s.frames);
    io::write_tensor(cdir + "/step_bound.rta",
                     Tensor::scalar(s.coeffs.max_step_bound));
    mf << "clip " << ci << " seed " << s.clip_seed << "\n";
    mf << "array " << name << "/beta " << shape_str(s.coeffs.beta) << "\n";
    mf << "array " << name << "/audio " << shape_str(s.audio) << "\n";
    mf << "array " << name << "/frames " << shape_str(s.frames) << "\n";
  }
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw io::FormatError("missing manifest in " + dir);
  Dataset ds;
  DatasetParams& p = ds.params;
  std::string line;
  std::vector<std::pair<int64_t, uint64_t>> clip_seeds;
  while (std::getline(mf, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "clip") {
      int64_t idx;
      std::string kw;
      uint64_t seed;
      if (ss >> idx >> kw >> seed && kw == "seed")
        clip_seeds.push_back({idx, seed});
      continue;
    }
    if (key == "array" || key == "format") continue;
    std::string eq, value;
    if (!(ss >> eq >> value) || eq != "=") continue;
    if (key == "seed") p.seed = std::stoull(value);
    else if (key == "clip_salt") p.clip_salt = std::stoull(value);
    else if (key == "clips") p.clips = std::stoll(value);
    else if (key == "frames_per_clip") p.frames_per_clip = std::stoll(value);
    else if (key == "n_vertices") p.n_vertices = std::stoll(value);
    else if (key == "d_shape") p.d_shape = std::stoll(value);
    else if (key == "d_expr") p.d_expr = std::stoll(value);
    else if (key == "d_audio") p.d_audio = std::stoll(value);
    else if (key == "image_h") p.image_h = std::stoll(value);
    else if (key == "image_w") p.image_w = std::stoll(value);
    else if (key == "focal") p.focal = std::stod(value);
    else if (key == "audio_noise") p.audio_noise = std::stod(value);
  }
  ds.model = face::load_model(dir + "/model");
  ds.audio_map = io::read_tensor(dir + "/audio_map.rta");
  ds.shape_to_offset = io::read_tensor(dir + "/shape_to_offset.rta");
  char name[64];
  for (int64_t ci = 0; ci < p.clips; ++ci) {
    std::snprintf(name, sizeof(name), "clip_%04lld", (long long)ci);
    const std::string cdir = dir + "/" + name;
    ClipSample s;
    s.coeffs.alpha = io::read_tensor(cdir + "/alpha.rta");
    s.coeffs.beta = io::read_tensor(cdir + "/beta.rta");
    s.coeffs.pose = io::read_tensor(cdir + "/pose.rta");
    s.coeffs.offset = io::read_tensor(cdir + "/tau.rta");
    s.audio = io::read_tensor(cdir + "/audio.rta");
    s.frames = io::read_tensor(cdir + "/frames.rta");
    s.coeffs.max_step_bound = io::read_tensor(cdir + "/step_bound.rta")[0];
    for (const auto& [idx, seed] : clip_seeds)
      if (idx == ci) s.clip_seed = seed;
    ds.clips.push_back(std::move(s));
  }
  return ds;
}

}  // namespace rt::data
