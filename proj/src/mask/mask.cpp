#include "realtalk/mask.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rt::mask {

Tensor rasterize_polygon(const std::vector<Point>& poly, int64_t h,
                         int64_t w) {
  Tensor out({h, w});
  const size_t n = poly.size();
  if (n < 3) return out;
  std::vector<double> xs;
  xs.reserve(n);
  for (int64_t y = 0; y < h; ++y) {
    const double yc = double(y) + 0.5;
    xs.clear();
    for (size_t i = 0; i < n; ++i) {
      const Point& a = poly[i];
      const Point& b = poly[(i + 1) % n];
      // half-open span [min(y), max(y)) so shared vertices count once
      if ((a[1] <= yc && b[1] > yc) || (b[1] <= yc && a[1] > yc)) {
        const double t = (yc - a[1]) / (b[1] - a[1]);
        xs.push_back(a[0] + t * (b[0] - a[0]));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (size_t i = 0; i + 1 < xs.size(); i += 2) {
      // pixel centers x+0.5 in [xs[i], xs[i+1])
      int64_t x0 = int64_t(std::ceil(xs[i] - 0.5));
      int64_t x1 = int64_t(std::ceil(xs[i + 1] - 0.5)) - 1;
      x0 = std::max<int64_t>(x0, 0);
      x1 = std::min<int64_t>(x1, w - 1);
      for (int64_t x = x0; x <= x1; ++x) out.at(y, x) = 1.0;
    }
  }
  return out;
}

bool point_in_polygon(double px, double py, const std::vector<Point>& poly) {
  const size_t n = poly.size();
  bool inside = false;
  for (size_t i = 0; i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    if ((a[1] <= py && b[1] > py) || (b[1] <= py && a[1] > py)) {
      const double t = (py - a[1]) / (b[1] - a[1]);
      if (px < a[0] + t * (b[0] - a[0])) inside = !inside;
    }
  }
  return inside;
}

std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const size_t n = pts.size();
  if (n < 3) return pts;
  auto cross = [](const Point& o, const Point& a, const Point& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  std::vector<Point> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = n - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

namespace {

std::vector<Point> project_indices(const face::MorphableModel& m,
                                   const face::Coeff3D& c, double focal_scale,
                                   const std::vector<int64_t>& indices) {
  Tensor v = face::compute_vertices(m, c);
  Tensor p = face::project(v, c.offset, focal_scale);
  std::vector<Point> out;
  out.reserve(indices.size());
  for (int64_t i : indices) out.push_back({p.at(i, 0), p.at(i, 1)});
  return out;
}

size_t count_distinct(const std::vector<Point>& pts) {
  size_t distinct = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    bool dup = false;
    for (size_t j = 0; j < i; ++j) {
      if (std::fabs(pts[i][0] - pts[j][0]) < 1e-9 &&
          std::fabs(pts[i][1] - pts[j][1]) < 1e-9) {
        dup = true;
        break;
      }
    }
    if (!dup) ++distinct;
  }
  return distinct;
}

}  // namespace

MaskResult build_mask(const face::MorphableModel& m, const face::Coeff3D& c,
                      double focal_scale, int64_t h, int64_t w,
                      double dilate) {
  if (h < 8 || w < 8)
    throw std::invalid_argument("build_mask: image must be at least 8x8");
  std::vector<Point> poly =
      project_indices(m, c, focal_scale, m.contour_indices);

  MaskResult res;
  if (count_distinct(poly) < 3) {
    res.mask = Tensor::full({h, w}, 1.0);
    res.degenerate = true;
    return res;
  }

  // dilate about the centroid: a larger contour accommodates lip motion
  double cx = 0.0, cy = 0.0;
  for (const Point& p : poly) {
    cx += p[0];
    cy += p[1];
  }
  cx /= double(poly.size());
  cy /= double(poly.size());
  for (Point& p : poly) {
    p[0] = cx + (p[0] - cx) * dilate;
    p[1] = cy + (p[1] - cy) * dilate;
  }

  Tensor inside = rasterize_polygon(poly, h, w);
  res.mask = Tensor({h, w});
  for (int64_t i = 0; i < inside.numel(); ++i)
    res.mask[i] = 1.0 - inside[i];
  return res;
}

MaskResult build_teeth_mask(const face::MorphableModel& m,
                            const face::Coeff3D& c, double focal_scale,
                            int64_t h, int64_t w, const Tensor& face_mask) {
  if (face_mask.ndim() != 2 || face_mask.dim(0) != h || face_mask.dim(1) != w)
    throw std::invalid_argument("build_teeth_mask: face_mask size mismatch");
  std::vector<Point> pts =
      project_indices(m, c, focal_scale, m.teeth_indices);
  std::vector<Point> hull = convex_hull(pts);

  MaskResult res;
  if (hull.size() < 3 || count_distinct(pts) < 3) {
    res.mask = Tensor::zeros({h, w});
    res.degenerate = true;
    return res;
  }
  Tensor inside = rasterize_polygon(hull, h, w);
  res.mask = Tensor({h, w});
  for (int64_t i = 0; i < inside.numel(); ++i)
    res.mask[i] = inside[i] * (1.0 - face_mask[i]);
  return res;
}

Tensor apply_mask(const Tensor& img, const Tensor& mask) {
  if (img.ndim() == 2) {
    if (!img.same_shape(mask))
      throw std::invalid_argument("apply_mask: shape mismatch");
    Tensor out(img.shape());
    for (int64_t i = 0; i < img.numel(); ++i) out[i] = img[i] * mask[i];
    return out;
  }
  if (img.ndim() != 3 || img.dim(1) != mask.dim(0) || img.dim(2) != mask.dim(1))
    throw std::invalid_argument("apply_mask: shape mismatch");
  const int64_t C = img.dim(0), P = mask.numel();
  Tensor out(img.shape());
  for (int64_t ch = 0; ch < C; ++ch)
    for (int64_t i = 0; i < P; ++i)
      out[ch * P + i] = img[ch * P + i] * mask[i];
  return out;
}

Tensor lower_half_mask(int64_t h, int64_t w) {
  // Projected y grows upward, so the displayed lower half of the face is
  // tensor rows [0, h/2): that's the generated region.
  Tensor m({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) m.at(y, x) = y < h / 2 ? 0.0 : 1.0;
  return m;
}

}  // namespace rt::mask
