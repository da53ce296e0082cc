#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "realtalk/nn.hpp"
#include "realtalk/rng.hpp"
#include "realtalk/tensor.hpp"

namespace testutil {

inline rt::Tensor random_tensor(std::vector<int64_t> shape, rt::Rng& rng,
                                double scale = 1.0) {
  rt::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

inline double rel_err(double a, double b) {
  const double m = std::max(std::fabs(a), std::fabs(b));
  return m > 0.0 ? std::fabs(a - b) / m : 0.0;
}

inline double max_abs_diff(const rt::Tensor& a, const rt::Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Central finite differences of a scalar function against an analytic
// gradient for one tensor. `f` must re-evaluate the full forward pass.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

inline GradCheckResult check_grad_fd(rt::Tensor& x, const rt::Tensor& analytic,
                                     const std::function<double()>& f,
                                     double h = 1e-5, double abs_floor = 1e-8) {
  GradCheckResult res;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double dn = f();
    x[i] = orig;
    const double fd = (up - dn) / (2.0 * h);
    const double an = analytic[i];
    const double denom = std::max(std::fabs(fd), std::fabs(an));
    if (denom > abs_floor)
      res.max_rel_err = std::max(res.max_rel_err, std::fabs(fd - an) / denom);
    ++res.checked;
  }
  return res;
}

// Same but samples a subset of entries of several named parameters.
inline GradCheckResult check_params_fd(
    rt::nn::ParamStore& ps, const std::vector<std::string>& names,
    const std::function<double()>& f, int64_t samples_per_param, rt::Rng& rng,
    double h = 1e-5, double abs_floor = 1e-8) {
  GradCheckResult res;
  for (const auto& name : names) {
    rt::Tensor& v = ps.value(name);
    const rt::Tensor& g = ps.grad(name);
    const int64_t n = v.numel();
    for (int64_t s = 0; s < std::min(samples_per_param, n); ++s) {
      const int64_t i =
          n <= samples_per_param ? s : int64_t(rng.below(uint64_t(n)));
      const double orig = v[i];
      v[i] = orig + h;
      const double up = f();
      v[i] = orig - h;
      const double dn = f();
      v[i] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = g[i];
      const double denom = std::max(std::fabs(fd), std::fabs(an));
      if (denom > abs_floor)
        res.max_rel_err =
            std::max(res.max_rel_err, std::fabs(fd - an) / denom);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace testutil
