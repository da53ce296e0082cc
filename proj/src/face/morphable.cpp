#include "realtalk/morphable.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "realtalk/container.hpp"
#include "realtalk/kernels.hpp"
#include "realtalk/rng.hpp"

namespace rt::face {

namespace {

constexpr double kRadiusX = 1.0;
constexpr double kRadiusY = 1.3;
constexpr double kRadiusZ = 0.85;

void normalize_columns(Tensor& basis) {
  const int64_t rows = basis.dim(0), cols = basis.dim(1);
  for (int64_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (int64_t i = 0; i < rows; ++i) s += basis.at(i, j) * basis.at(i, j);
    const double inv = 1.0 / std::sqrt(s);
    for (int64_t i = 0; i < rows; ++i) basis.at(i, j) *= inv;
  }
}

}  // namespace

MorphableModel gen_synthetic_model(uint64_t seed, int64_t n_vertices,
                                   int64_t d_s, int64_t d_e) {
  if (n_vertices < 16)
    throw std::invalid_argument("gen_synthetic_model: need n_vertices >= 16");
  if (d_s < 1 || d_e < 1)
    throw std::invalid_argument("gen_synthetic_model: basis dims must be >= 1");

  MorphableModel m;
  m.seed = seed;
  Rng rng(Rng::mix(seed ^ 0x3db5a1c6f0e94d72ULL));

  // Ellipsoidal head: Fibonacci distribution over the vertical axis plus a
  // small seeded jitter so different seeds give different geometry.
  m.mean_vertices = Tensor({n_vertices, 3});
  const double golden = 2.399963229728653;
  for (int64_t i = 0; i < n_vertices; ++i) {
    const double yu = 1.0 - 2.0 * (double(i) + 0.5) / double(n_vertices);
    const double r = std::sqrt(std::max(0.0, 1.0 - yu * yu));
    const double theta = golden * double(i);
    double x = kRadiusX * r * std::cos(theta);
    double y = kRadiusY * yu;
    double z = kRadiusZ * r * std::sin(theta);
    x += rng.normal(0.0, 0.02);
    y += rng.normal(0.0, 0.02);
    z += rng.normal(0.0, 0.02);
    m.mean_vertices.at(i, 0) = x;
    m.mean_vertices.at(i, 1) = y;
    m.mean_vertices.at(i, 2) = z;
  }

  double ymin = m.mean_vertices.at(0, 1), ymax = ymin;
  for (int64_t i = 0; i < n_vertices; ++i) {
    ymin = std::min(ymin, m.mean_vertices.at(i, 1));
    ymax = std::max(ymax, m.mean_vertices.at(i, 1));
  }
  const double range = ymax - ymin;

  // Mouth band: a front-facing strip in the lower part of the face.
  auto collect_band = [&](double lo_frac, double hi_frac, double max_abs_x,
                          bool front_only) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < n_vertices; ++i) {
      const double x = m.mean_vertices.at(i, 0);
      const double y = m.mean_vertices.at(i, 1);
      const double z = m.mean_vertices.at(i, 2);
      if (y < ymin + lo_frac * range || y > ymin + hi_frac * range) continue;
      if (std::fabs(x) > max_abs_x) continue;
      if (front_only && z <= 0.0) continue;
      idx.push_back(i);
    }
    return idx;
  };

  double widen = 0.0;
  do {
    m.mouth_indices = collect_band(std::max(0.0, 0.14 - widen),
                                   std::min(0.33, 0.28 + widen),
                                   kRadiusX * (0.7 + widen), true);
    widen += 0.01;
  } while (m.mouth_indices.empty() && widen < 0.5);
  if (m.mouth_indices.empty())
    throw std::runtime_error("gen_synthetic_model: empty mouth region");

  widen = 0.0;
  do {
    m.teeth_indices = collect_band(std::max(0.0, 0.17 - widen),
                                   std::min(0.30, 0.25 + widen),
                                   kRadiusX * (0.4 + widen), true);
    widen += 0.01;
  } while (m.teeth_indices.size() < 3 && widen < 0.5);
  if (m.teeth_indices.empty())
    throw std::runtime_error("gen_synthetic_model: empty teeth region");

  // Contour: ordered loop over the mouth-and-neck area of interest. Targets
  // on an ellipse in the x-y plane snap to the nearest front-hemisphere
  // vertex; the lower arc reaches further down to take in the neck.
  {
    const int64_t loop_points =
        std::clamp<int64_t>(n_vertices / 6, 8, 24);
    const double cy = ymin + 0.34 * range;
    const double ry_up = 0.16 * range;
    const double ry_down = 0.30 * range;
    std::vector<int64_t> loop;
    for (int64_t k = 0; k < loop_points; ++k) {
      const double th = 2.0 * M_PI * double(k) / double(loop_points);
      const double tx = 0.85 * kRadiusX * std::cos(th);
      const double s = std::sin(th);
      const double ty = cy + (s >= 0.0 ? ry_up : ry_down) * s;
      int64_t best = -1;
      double best_d = 1e300;
      for (int64_t i = 0; i < n_vertices; ++i) {
        if (m.mean_vertices.at(i, 2) <= 0.0) continue;
        const double dx = m.mean_vertices.at(i, 0) - tx;
        const double dy = m.mean_vertices.at(i, 1) - ty;
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      if (best >= 0 && (loop.empty() || loop.back() != best) &&
          std::find(loop.begin(), loop.end(), best) == loop.end())
        loop.push_back(best);
    }
    if (loop.size() < 3)
      throw std::runtime_error("gen_synthetic_model: degenerate contour");
    m.contour_indices = std::move(loop);
  }

  // Bases: random normal entries; expression columns are weighted toward the
  // mouth so beta actually moves the lip region, then unit-normalized.
  m.shape_basis = Tensor({n_vertices * 3, d_s});
  for (int64_t i = 0; i < m.shape_basis.numel(); ++i)
    m.shape_basis[i] = rng.normal();
  normalize_columns(m.shape_basis);

  double mcx = 0.0, mcy = 0.0, mcz = 0.0;
  for (int64_t i : m.mouth_indices) {
    mcx += m.mean_vertices.at(i, 0);
    mcy += m.mean_vertices.at(i, 1);
    mcz += m.mean_vertices.at(i, 2);
  }
  mcx /= double(m.mouth_indices.size());
  mcy /= double(m.mouth_indices.size());
  mcz /= double(m.mouth_indices.size());

  m.expr_basis = Tensor({n_vertices * 3, d_e});
  for (int64_t v = 0; v < n_vertices; ++v) {
    const double dx = m.mean_vertices.at(v, 0) - mcx;
    const double dy = m.mean_vertices.at(v, 1) - mcy;
    const double dz = m.mean_vertices.at(v, 2) - mcz;
    const double d2 = dx * dx + dy * dy + dz * dz;
    const double w = 0.2 + std::exp(-d2 / (2.0 * 0.45 * 0.45));
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t j = 0; j < d_e; ++j)
        m.expr_basis.at(v * 3 + c, j) = w * rng.normal();
  }
  normalize_columns(m.expr_basis);

  return m;
}

ag::Var compute_vertices_var(const MorphableModel& m, const ag::Var& alpha,
                             const ag::Var& beta, const ag::Var& angles,
                             const ag::Var& translation) {
  const int64_t nv = m.n_vertices();
  if (alpha->value.numel() != m.d_shape())
    throw std::invalid_argument("compute_vertices: alpha length mismatch");
  if (beta->value.numel() != m.d_expr())
    throw std::invalid_argument("compute_vertices: beta length mismatch");

  ag::Var mean = ag::constant(m.mean_vertices.reshaped({nv * 3, 1}));
  ag::Var s = ag::matmul(ag::constant(m.shape_basis),
                         ag::reshape(alpha, {m.d_shape(), 1}));
  ag::Var e = ag::matmul(ag::constant(m.expr_basis),
                         ag::reshape(beta, {m.d_expr(), 1}));
  ag::Var flat = ag::add(mean, ag::add(s, e));
  ag::Var pts = ag::reshape(flat, {nv, 3});
  ag::Var rotated = ag::euler_rotate(pts, angles);
  return ag::add_row_bias(rotated, translation);
}

Tensor compute_vertices(const MorphableModel& m, const Coeff3D& c) {
  ag::Var v = compute_vertices_var(
      m, ag::constant(c.shape), ag::constant(c.expr),
      ag::constant(Tensor({3}, {c.pose.angles[0], c.pose.angles[1],
                                c.pose.angles[2]})),
      ag::constant(Tensor({3}, {c.pose.translation[0], c.pose.translation[1],
                                c.pose.translation[2]})));
  return v->value;
}

Tensor project(const Tensor& vertices, std::array<double, 2> tau,
               double focal_scale) {
  if (!(focal_scale > 0.0))
    throw std::invalid_argument("project: focal_scale must be positive");
  const int64_t nv = vertices.dim(0);
  Tensor out({nv, 2});
  for (int64_t i = 0; i < nv; ++i) {
    out.at(i, 0) = focal_scale * vertices.at(i, 0) + tau[0];
    out.at(i, 1) = focal_scale * vertices.at(i, 1) + tau[1];
  }
  return out;
}

Tensor mouth_vertex_subset(const MorphableModel& m, const Tensor& vertices) {
  const int64_t cols = vertices.dim(1);
  Tensor out({int64_t(m.mouth_indices.size()), cols});
  for (size_t r = 0; r < m.mouth_indices.size(); ++r)
    for (int64_t c = 0; c < cols; ++c)
      out.at(int64_t(r), c) = vertices.at(m.mouth_indices[r], c);
  return out;
}

void save_model(const std::string& dir, const MorphableModel& m) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  io::write_tensor(dir + "/mean.rta", m.mean_vertices);
  io::write_tensor(dir + "/shape_basis.rta", m.shape_basis);
  io::write_tensor(dir + "/expr_basis.rta", m.expr_basis);
  io::write_indices(dir + "/mouth_idx.rta", m.mouth_indices);
  io::write_indices(dir + "/contour_idx.rta", m.contour_indices);
  io::write_indices(dir + "/teeth_idx.rta", m.teeth_indices);
  std::ofstream mf(dir + "/model.txt");
  mf << "seed = " << m.seed << "\n";
  mf << "n_vertices = " << m.n_vertices() << "\n";
  mf << "d_shape = " << m.d_shape() << "\n";
  mf << "d_expr = " << m.d_expr() << "\n";
}

MorphableModel load_model(const std::string& dir) {
  MorphableModel m;
  m.mean_vertices = io::read_tensor(dir + "/mean.rta");
  m.shape_basis = io::read_tensor(dir + "/shape_basis.rta");
  m.expr_basis = io::read_tensor(dir + "/expr_basis.rta");
  m.mouth_indices = io::read_indices(dir + "/mouth_idx.rta");
  m.contour_indices = io::read_indices(dir + "/contour_idx.rta");
  m.teeth_indices = io::read_indices(dir + "/teeth_idx.rta");
  std::ifstream mf(dir + "/model.txt");
  std::string key, eq;
  uint64_t seed = 0;
  if (mf >> key >> eq >> seed && key == "seed") m.seed = seed;
  return m;
}

}  // namespace rt::face
