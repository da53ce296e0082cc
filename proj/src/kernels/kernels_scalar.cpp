#include <cmath>
#include <cstring>

#include "realtalk/kernels.hpp"

// Reference kernels. Plain loops, no blocking; these define the semantics the
// SIMD variants are tested against.

namespace rt::kern {
namespace {

void s_gemm_nn(const double* a, const double* b, double* c, int m, int k,
               int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * size_t(m) * n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + size_t(i) * k;
    double* ci = c + size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + size_t(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void s_gemm_nt(const double* a, const double* b, double* c, int m, int k,
               int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + size_t(i) * k;
    double* ci = c + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + size_t(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = acc ? ci[j] + s : s;
    }
  }
}

void s_gemm_tn(const double* a, const double* b, double* c, int m, int k,
               int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * size_t(m) * n);
  for (int p = 0; p < k; ++p) {
    const double* ap = a + size_t(p) * m;
    const double* bp = b + size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = ap[i];
      double* ci = c + size_t(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void s_add(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}
void s_sub(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}
void s_mul(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}
void s_axpy(double a, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
void s_scale(double a, double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] *= a;
}
double s_dot(const double* x, const double* y, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}
double s_sum(const double* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}
double s_sum_sq(const double* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}
double s_max_abs(const double* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s = std::max(s, std::fabs(x[i]));
  return s;
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops table = {s_gemm_nn, s_gemm_nt, s_gemm_tn, s_add,
                            s_sub,     s_mul,     s_axpy,    s_scale,
                            s_dot,     s_sum,     s_sum_sq,  s_max_abs,
                            "scalar"};
  return table;
}

}  // namespace rt::kern
