#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "realtalk/morphable.hpp"
#include "realtalk/tensor.hpp"

namespace rt::mask {

using Point = std::array<double, 2>;  // (x, y) in pixels

struct MaskResult {
  Tensor mask;             // [H, W], entries in {0, 1}
  bool degenerate = false;  // geometry collapsed; mask fell back to default
};

// Even-odd scanline fill sampled at pixel centers (x+0.5, y+0.5).
// Returns [H, W] with 1 inside the polygon. Clips to the image rectangle.
Tensor rasterize_polygon(const std::vector<Point>& poly, int64_t h, int64_t w);

// Even-odd point-in-polygon test (ray cast to +x). The brute-force
// counterpart the scanline fill is verified against.
bool point_in_polygon(double px, double py, const std::vector<Point>& poly);

// Andrew monotone chain; returns CCW hull, size < 3 when degenerate.
std::vector<Point> convex_hull(std::vector<Point> pts);

// Learnable facial mask: project the contour loop, dilate it about its
// centroid, fill. Mask convention: 1 keeps the source pixel, 0 marks the
// region to generate. A contour with fewer than 3 distinct projected points
// degenerates to an all-ones mask with the flag set.
MaskResult build_mask(const face::MorphableModel& m, const face::Coeff3D& c,
                      double focal_scale, int64_t h, int64_t w,
                      double dilate = 1.15);

// Teeth-region mask: convex hull of the projected teeth vertices intersected
// with the generated region of face_mask, so teeth_mask * face_mask == 0.
MaskResult build_teeth_mask(const face::MorphableModel& m,
                            const face::Coeff3D& c, double focal_scale,
                            int64_t h, int64_t w, const Tensor& face_mask);

// Per-pixel multiply; img is [C,H,W] or [H,W].
Tensor apply_mask(const Tensor& img, const Tensor& mask);

// Naive baseline mask: keeps the top half, generates the lower half.
Tensor lower_half_mask(int64_t h, int64_t w);

}  // namespace rt::mask
