#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "realtalk/autodiff.hpp"
#include "realtalk/tensor.hpp"

namespace rt::face {

// Rigid head motion: intrinsic rotation (Rz*Ry*Rx Euler angles, radians)
// plus a 3D translation in model units. The 2D image-plane offset tau lives
// in Coeff3D::offset and is applied by project(), not here.
struct Pose {
  std::array<double, 3> angles{0.0, 0.0, 0.0};
  std::array<double, 3> translation{0.0, 0.0, 0.0};
};

// One frame's 3D face description.
struct Coeff3D {
  Tensor shape;  // alpha, [d_s]
  Tensor expr;   // beta, [d_e]
  Pose pose;     // rho
  std::array<double, 2> offset{0.0, 0.0};  // tau, pixels
};

// Synthetic linear face basis. Vertices live on an ellipsoidal head with a
// designated mouth band; index sets are carved out of that geometry so mouth
// and contour are meaningful regions rather than arbitrary subsets.
struct MorphableModel {
  Tensor mean_vertices;  // [Nv, 3]
  Tensor shape_basis;    // [3*Nv, d_s], unit-norm columns
  Tensor expr_basis;     // [3*Nv, d_e], unit-norm columns
  std::vector<int64_t> mouth_indices;
  std::vector<int64_t> contour_indices;  // ordered polygon loop
  std::vector<int64_t> teeth_indices;
  uint64_t seed = 0;

  int64_t n_vertices() const { return mean_vertices.dim(0); }
  int64_t d_shape() const { return shape_basis.dim(1); }
  int64_t d_expr() const { return expr_basis.dim(1); }
};

MorphableModel gen_synthetic_model(uint64_t seed, int64_t n_vertices,
                                   int64_t d_s, int64_t d_e);

// V = R(rho) * (mean + S*alpha + E*beta) + t, row-wise. Pure function.
Tensor compute_vertices(const MorphableModel& m, const Coeff3D& c);

// Graph-building variant; gradients flow to alpha, beta, angles, translation.
ag::Var compute_vertices_var(const MorphableModel& m, const ag::Var& alpha,
                             const ag::Var& beta, const ag::Var& angles,
                             const ag::Var& translation);

// Orthographic projection: V_xy = focal_scale * (x, y) + tau.
Tensor project(const Tensor& vertices, std::array<double, 2> tau,
               double focal_scale);

Tensor mouth_vertex_subset(const MorphableModel& m, const Tensor& vertices);

// Serialization into a directory using the array container format under the
// fixed names mean / shape_basis / expr_basis / mouth_idx / contour_idx /
// teeth_idx, plus a small manifest with the seed.
void save_model(const std::string& dir, const MorphableModel& m);
MorphableModel load_model(const std::string& dir);

}  // namespace rt::face
