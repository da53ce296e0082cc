#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "realtalk/morphable.hpp"
#include "test_util.hpp"

using namespace rt;
using namespace rt::face;
using testutil::random_tensor;

namespace {

Coeff3D random_coeffs(const MorphableModel& m, Rng& rng) {
  Coeff3D c;
  c.shape = random_tensor({m.d_shape()}, rng, 0.5);
  c.expr = random_tensor({m.d_expr()}, rng, 0.5);
  c.pose.angles = {rng.normal(0.0, 0.3), rng.normal(0.0, 0.3),
                   rng.normal(0.0, 0.3)};
  c.pose.translation = {rng.normal(), rng.normal(), rng.normal()};
  c.offset = {rng.normal(0.0, 3.0), rng.normal(0.0, 3.0)};
  return c;
}

// Independent per-vertex oracle: explicit 3x3 rotation applied in a loop.
Tensor oracle_vertices(const MorphableModel& m, const Coeff3D& c) {
  const int64_t nv = m.n_vertices();
  std::vector<double> flat(size_t(nv) * 3);
  for (int64_t i = 0; i < nv * 3; ++i) {
    double v = m.mean_vertices[i];
    for (int64_t j = 0; j < m.d_shape(); ++j)
      v += m.shape_basis.at(i, j) * c.shape[j];
    for (int64_t j = 0; j < m.d_expr(); ++j)
      v += m.expr_basis.at(i, j) * c.expr[j];
    flat[size_t(i)] = v;
  }
  const double ax = c.pose.angles[0], ay = c.pose.angles[1],
               az = c.pose.angles[2];
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);
  // R = Rz * Ry * Rx, written out entry by entry
  double R[3][3];
  R[0][0] = cz * cy;
  R[0][1] = cz * sy * sx - sz * cx;
  R[0][2] = cz * sy * cx + sz * sx;
  R[1][0] = sz * cy;
  R[1][1] = sz * sy * sx + cz * cx;
  R[1][2] = sz * sy * cx - cz * sx;
  R[2][0] = -sy;
  R[2][1] = cy * sx;
  R[2][2] = cy * cx;
  Tensor out({nv, 3});
  for (int64_t i = 0; i < nv; ++i) {
    for (int r = 0; r < 3; ++r) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += R[r][k] * flat[size_t(i * 3 + k)];
      out.at(i, r) = s + c.pose.translation[size_t(r)];
    }
  }
  return out;
}

}  // namespace

TEST_CASE("gen_synthetic_model constructive contract") {
  MorphableModel m = gen_synthetic_model(0, 64, 4, 8);
  CHECK(m.n_vertices() == 64);
  CHECK(m.d_shape() == 4);
  CHECK(m.d_expr() == 8);
  CHECK(m.contour_indices.size() >= 3);
  CHECK(!m.mouth_indices.empty());
  CHECK(!m.teeth_indices.empty());

  // mouth vertices sit in the lower third of the mean face
  double ymin = 1e300, ymax = -1e300;
  for (int64_t i = 0; i < m.n_vertices(); ++i) {
    ymin = std::min(ymin, m.mean_vertices.at(i, 1));
    ymax = std::max(ymax, m.mean_vertices.at(i, 1));
  }
  const double cut = ymin + (ymax - ymin) / 3.0;
  for (int64_t i : m.mouth_indices) CHECK(m.mean_vertices.at(i, 1) <= cut);

  for (int64_t i : m.mouth_indices) CHECK(i < m.n_vertices());
  for (int64_t i : m.contour_indices) CHECK(i < m.n_vertices());
  for (int64_t i : m.teeth_indices) CHECK(i < m.n_vertices());

  // basis columns are unit-norm
  for (int64_t j = 0; j < m.d_expr(); ++j) {
    double s = 0.0;
    for (int64_t i = 0; i < m.expr_basis.dim(0); ++i)
      s += m.expr_basis.at(i, j) * m.expr_basis.at(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gen_synthetic_model determinism and seed sensitivity") {
  MorphableModel a = gen_synthetic_model(0, 64, 4, 8);
  MorphableModel b = gen_synthetic_model(0, 64, 4, 8);
  CHECK(testutil::max_abs_diff(a.mean_vertices, b.mean_vertices) == 0.0);
  CHECK(testutil::max_abs_diff(a.shape_basis, b.shape_basis) == 0.0);
  CHECK(testutil::max_abs_diff(a.expr_basis, b.expr_basis) == 0.0);
  CHECK(a.mouth_indices == b.mouth_indices);
  CHECK(a.contour_indices == b.contour_indices);
  CHECK(a.teeth_indices == b.teeth_indices);

  MorphableModel c = gen_synthetic_model(1, 64, 4, 8);
  CHECK(testutil::max_abs_diff(a.expr_basis, c.expr_basis) > 0.0);
  CHECK(testutil::max_abs_diff(a.shape_basis, c.shape_basis) > 0.0);
}

TEST_CASE("gen_synthetic_model rejects bad dimensions") {
  CHECK_THROWS(gen_synthetic_model(0, 8, 4, 8));
  CHECK_THROWS(gen_synthetic_model(0, 64, 0, 8));
  CHECK_THROWS(gen_synthetic_model(0, 64, 4, 0));
}

TEST_CASE("compute_vertices zero case and linearity") {
  MorphableModel m = gen_synthetic_model(3, 64, 4, 8);
  Coeff3D c;
  c.shape = Tensor::zeros({4});
  c.expr = Tensor::zeros({8});
  Tensor v = compute_vertices(m, c);
  CHECK(testutil::max_abs_diff(v, m.mean_vertices) == 0.0);

  // doubling beta doubles the displacement exactly
  Rng rng(5);
  Coeff3D c1 = c;
  c1.expr = random_tensor({8}, rng, 0.7);
  Coeff3D c2 = c;
  c2.expr = c1.expr;
  for (int64_t i = 0; i < 8; ++i) c2.expr[i] *= 2.0;
  Tensor v1 = compute_vertices(m, c1);
  Tensor v2 = compute_vertices(m, c2);
  for (int64_t i = 0; i < v.numel(); ++i) {
    const double d1 = v1[i] - m.mean_vertices[i];
    const double d2 = v2[i] - m.mean_vertices[i];
    CHECK(d2 == doctest::Approx(2.0 * d1).epsilon(1e-12));
  }
}

TEST_CASE("compute_vertices matches per-vertex loop oracle") {
  MorphableModel m = gen_synthetic_model(9, 80, 5, 7);
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Coeff3D c = random_coeffs(m, rng);
    Tensor got = compute_vertices(m, c);
    Tensor want = oracle_vertices(m, c);
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(testutil::rel_err(got[i], want[i]) < 1e-10);
  }
}

TEST_CASE("compute_vertices dimension mismatch is rejected") {
  MorphableModel m = gen_synthetic_model(2, 64, 4, 8);
  Coeff3D c;
  c.shape = Tensor::zeros({5});  // wrong
  c.expr = Tensor::zeros({8});
  CHECK_THROWS(compute_vertices(m, c));
}

TEST_CASE("linearity in alpha at fixed pose: difference independent of base") {
  MorphableModel m = gen_synthetic_model(4, 64, 4, 8);
  Rng rng(23);
  Tensor delta = random_tensor({4}, rng);
  Tensor ref;
  for (int trial = 0; trial < 3; ++trial) {
    Coeff3D a;
    a.shape = random_tensor({4}, rng);
    a.expr = random_tensor({8}, rng);
    Coeff3D b = a;
    b.shape = a.shape;
    for (int64_t i = 0; i < 4; ++i) b.shape[i] += delta[i];
    Tensor va = compute_vertices(m, a);
    Tensor vb = compute_vertices(m, b);
    Tensor diff({m.n_vertices(), 3});
    for (int64_t i = 0; i < diff.numel(); ++i) diff[i] = vb[i] - va[i];
    if (trial == 0)
      ref = diff;
    else
      CHECK(testutil::max_abs_diff(ref, diff) < 1e-12);
  }
}

TEST_CASE("rotation preserves pairwise distances") {
  MorphableModel m = gen_synthetic_model(6, 48, 4, 8);
  Rng rng(31);
  Coeff3D c = random_coeffs(m, rng);
  Coeff3D c0 = c;
  c0.pose = Pose{};  // identity
  Tensor v = compute_vertices(m, c);
  Tensor v0 = compute_vertices(m, c0);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t i = int64_t(rng.below(uint64_t(m.n_vertices())));
    const int64_t j = int64_t(rng.below(uint64_t(m.n_vertices())));
    auto dist = [](const Tensor& t, int64_t a, int64_t b) {
      double s = 0.0;
      for (int64_t k = 0; k < 3; ++k) {
        const double d = t.at(a, k) - t.at(b, k);
        s += d * d;
      }
      return std::sqrt(s);
    };
    const double d0 = dist(v0, i, j);
    const double d1 = dist(v, i, j);
    if (d0 > 1e-12) CHECK(std::fabs(d1 - d0) / d0 < 1e-9);
  }
}

TEST_CASE("compute_vertices gradients match finite differences") {
  MorphableModel m = gen_synthetic_model(12, 32, 3, 4);
  Rng rng(37);
  Tensor alpha = random_tensor({3}, rng, 0.5);
  Tensor beta = random_tensor({4}, rng, 0.5);
  Tensor angles = random_tensor({3}, rng, 0.3);
  Tensor trans = random_tensor({3}, rng);
  Tensor weights = random_tensor({m.n_vertices(), 3}, rng);

  Tensor ga = Tensor::zeros({3}), gb = Tensor::zeros({4}),
         gan = Tensor::zeros({3}), gt = Tensor::zeros({3});
  auto eval = [&](bool do_backward) {
    ag::Var va = ag::make_param(alpha, &ga);
    ag::Var vb = ag::make_param(beta, &gb);
    ag::Var van = ag::make_param(angles, &gan);
    ag::Var vt = ag::make_param(trans, &gt);
    ag::Var v = compute_vertices_var(m, va, vb, van, vt);
    ag::Var loss = ag::sum_all(ag::mul(v, ag::constant(weights)));
    if (do_backward) ag::backward(loss);
    return loss->value[0];
  };
  eval(true);
  auto f = [&] { return eval(false); };
  CHECK(testutil::check_grad_fd(alpha, ga, f).max_rel_err < 1e-4);
  CHECK(testutil::check_grad_fd(beta, gb, f).max_rel_err < 1e-4);
  CHECK(testutil::check_grad_fd(angles, gan, f).max_rel_err < 1e-4);
  CHECK(testutil::check_grad_fd(trans, gt, f).max_rel_err < 1e-4);
}

TEST_CASE("project identity, translation and scaling") {
  MorphableModel m = gen_synthetic_model(1, 32, 4, 8);
  Coeff3D c;
  c.shape = Tensor::zeros({4});
  c.expr = Tensor::zeros({8});
  Tensor v = compute_vertices(m, c);

  Tensor p0 = project(v, {0.0, 0.0}, 1.0);
  for (int64_t i = 0; i < v.dim(0); ++i) {
    CHECK(p0.at(i, 0) == v.at(i, 0));
    CHECK(p0.at(i, 1) == v.at(i, 1));
  }
  Tensor p1 = project(v, {10.0, -5.0}, 1.0);
  for (int64_t i = 0; i < v.dim(0); ++i) {
    CHECK(p1.at(i, 0) == doctest::Approx(v.at(i, 0) + 10.0));
    CHECK(p1.at(i, 1) == doctest::Approx(v.at(i, 1) - 5.0));
  }
  Tensor unit({1, 3}, {1.0, 1.0, 0.0});
  Tensor p2 = project(unit, {0.0, 0.0}, 2.0);
  CHECK(p2.at(0, 0) == doctest::Approx(2.0));
  CHECK(p2.at(0, 1) == doctest::Approx(2.0));

  CHECK_THROWS(project(v, {0.0, 0.0}, 0.0));
  CHECK_THROWS(project(v, {0.0, 0.0}, -1.0));
}

TEST_CASE("projection of the linear model with identity pose is exact") {
  MorphableModel m = gen_synthetic_model(8, 40, 4, 6);
  Rng rng(41);
  Coeff3D c;
  c.shape = random_tensor({4}, rng);
  c.expr = random_tensor({6}, rng);
  Tensor v = compute_vertices(m, c);
  Tensor p = project(v, {0.0, 0.0}, 1.0);
  // x/y slice of mean + S*alpha + E*beta with no rotation applied
  for (int64_t i = 0; i < m.n_vertices(); ++i)
    for (int64_t k = 0; k < 2; ++k) {
      double want = m.mean_vertices.at(i, k);
      for (int64_t j = 0; j < 4; ++j)
        want += m.shape_basis.at(i * 3 + k, j) * c.shape[j];
      for (int64_t j = 0; j < 6; ++j)
        want += m.expr_basis.at(i * 3 + k, j) * c.expr[j];
      CHECK(p.at(i, k) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("mouth_vertex_subset picks rows in order") {
  MorphableModel m = gen_synthetic_model(0, 64, 4, 8);
  m.mouth_indices = {2, 5};
  Rng rng(43);
  Tensor v = random_tensor({64, 3}, rng);
  Tensor s = mouth_vertex_subset(m, v);
  REQUIRE(s.dim(0) == 2);
  for (int64_t k = 0; k < 3; ++k) {
    CHECK(s.at(0, k) == v.at(2, k));
    CHECK(s.at(1, k) == v.at(5, k));
  }
}

TEST_CASE("model save/load round-trip") {
  namespace fs = std::filesystem;
  MorphableModel m = gen_synthetic_model(77, 48, 4, 8);
  const std::string dir =
      (fs::temp_directory_path() / "rt_model_test").string();
  save_model(dir, m);
  MorphableModel l = load_model(dir);
  CHECK(testutil::max_abs_diff(m.mean_vertices, l.mean_vertices) == 0.0);
  CHECK(testutil::max_abs_diff(m.shape_basis, l.shape_basis) == 0.0);
  CHECK(testutil::max_abs_diff(m.expr_basis, l.expr_basis) == 0.0);
  CHECK(m.mouth_indices == l.mouth_indices);
  CHECK(m.contour_indices == l.contour_indices);
  CHECK(m.teeth_indices == l.teeth_indices);
  CHECK(m.seed == l.seed);
  fs::remove_all(dir);
}
