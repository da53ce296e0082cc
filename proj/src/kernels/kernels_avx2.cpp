#include <algorithm>
#include <vector>
#include <cmath>
#include <cstring>

#include "realtalk/kernels.hpp"

// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a runtime CPU check (see kernels_dispatch.cpp).

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace rt::kern {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// 4x8 register-blocked microkernel over the K loop. Rows of B are contiguous,
// A elements are broadcast.
template <int MR>
inline void nn_block(const double* a, const double* b, double* c, int k, int n,
                     int lda, int ldb, int ldc, int j0) {
  __m256d acc[MR][2];
  for (int i = 0; i < MR; ++i) {
    acc[i][0] = _mm256_setzero_pd();
    acc[i][1] = _mm256_setzero_pd();
  }
  for (int p = 0; p < k; ++p) {
    const double* bp = b + size_t(p) * ldb + j0;
    __m256d b0 = _mm256_loadu_pd(bp);
    __m256d b1 = _mm256_loadu_pd(bp + 4);
    for (int i = 0; i < MR; ++i) {
      __m256d av = _mm256_set1_pd(a[size_t(i) * lda + p]);
      acc[i][0] = _mm256_fmadd_pd(av, b0, acc[i][0]);
      acc[i][1] = _mm256_fmadd_pd(av, b1, acc[i][1]);
    }
  }
  for (int i = 0; i < MR; ++i) {
    double* ci = c + size_t(i) * ldc + j0;
    _mm256_storeu_pd(ci, _mm256_add_pd(_mm256_loadu_pd(ci), acc[i][0]));
    _mm256_storeu_pd(ci + 4, _mm256_add_pd(_mm256_loadu_pd(ci + 4), acc[i][1]));
  }
}

void v_gemm_nn(const double* a, const double* b, double* c, int m, int k,
               int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * size_t(m) * n);
  // chunk the column range so the touched B panel stays L2-resident while
  // every row block re-reads it
  constexpr int kNc = 512;
  const int n8 = n & ~7;
  for (int jc = 0; jc < n8; jc += kNc) {
    const int jend = std::min(jc + kNc, n8);
    int i = 0;
    for (; i + 4 <= m; i += 4)
      for (int j0 = jc; j0 < jend; j0 += 8)
        nn_block<4>(a + size_t(i) * k, b, c + size_t(i) * n, k, n, k, n, n,
                    j0);
    for (; i < m; ++i)
      for (int j0 = jc; j0 < jend; j0 += 8)
        nn_block<1>(a + size_t(i) * k, b, c + size_t(i) * n, k, n, k, n, n,
                    j0);
  }
  if (n8 < n) {
    for (int r = 0; r < m; ++r) {
      const double* ar = a + size_t(r) * k;
      double* cr = c + size_t(r) * n;
      for (int p = 0; p < k; ++p) {
        const double av = ar[p];
        const double* bp = b + size_t(p) * n;
        for (int j = n8; j < n; ++j) cr[j] += av * bp[j];
      }
    }
  }
}

void v_gemm_nt(const double* a, const double* b, double* c, int m, int k,
               int n, bool acc) {
  const int k4 = k & ~3;
  for (int i = 0; i < m; ++i) {
    const double* ai = a + size_t(i) * k;
    double* ci = c + size_t(i) * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + size_t(j) * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (int p = 0; p < k4; p += 4) {
        __m256d av = _mm256_loadu_pd(ai + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double d0 = hsum(s0), d1 = hsum(s1), d2 = hsum(s2), d3 = hsum(s3);
      for (int p = k4; p < k; ++p) {
        d0 += ai[p] * b0[p];
        d1 += ai[p] * b1[p];
        d2 += ai[p] * b2[p];
        d3 += ai[p] * b3[p];
      }
      if (acc) {
        ci[j] += d0;
        ci[j + 1] += d1;
        ci[j + 2] += d2;
        ci[j + 3] += d3;
      } else {
        ci[j] = d0;
        ci[j + 1] = d1;
        ci[j + 2] = d2;
        ci[j + 3] = d3;
      }
    }
    for (; j < n; ++j) {
      const double* bj = b + size_t(j) * k;
      __m256d s = _mm256_setzero_pd();
      for (int p = 0; p < k4; p += 4)
        s = _mm256_fmadd_pd(_mm256_loadu_pd(ai + p), _mm256_loadu_pd(bj + p),
                            s);
      double d = hsum(s);
      for (int p = k4; p < k; ++p) d += ai[p] * bj[p];
      ci[j] = acc ? ci[j] + d : d;
    }
  }
}

void v_gemm_tn(const double* a, const double* b, double* c, int m, int k,
               int n, bool acc) {
  // A^T has a hostile access pattern; transpose into scratch once and reuse
  // the blocked nn kernel. The transpose is O(k*m) against O(k*m*n) math.
  thread_local std::vector<double> at;
  if (at.size() < size_t(m) * k) at.resize(size_t(m) * k);
  for (int p = 0; p < k; ++p) {
    const double* ap = a + size_t(p) * m;
    for (int i = 0; i < m; ++i) at[size_t(i) * k + p] = ap[i];
  }
  v_gemm_nn(at.data(), b, c, m, k, n, acc);
}

void v_add(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}
void v_sub(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}
void v_mul(const double* x, const double* y, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}
void v_axpy(double a, const double* x, double* y, size_t n) {
  __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}
void v_scale(double a, double* x, size_t n) {
  __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= a;
}
double v_dot(const double* x, const double* y, size_t n) {
  __m256d s = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    s = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s);
  double d = hsum(s);
  for (; i < n; ++i) d += x[i] * y[i];
  return d;
}
double v_sum(const double* x, size_t n) {
  __m256d s = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) s = _mm256_add_pd(s, _mm256_loadu_pd(x + i));
  double d = hsum(s);
  for (; i < n; ++i) d += x[i];
  return d;
}
double v_sum_sq(const double* x, size_t n) {
  __m256d s = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    s = _mm256_fmadd_pd(v, v, s);
  }
  double d = hsum(s);
  for (; i < n; ++i) d += x[i] * x[i];
  return d;
}
double v_max_abs(const double* x, size_t n) {
  const __m256d signmask = _mm256_set1_pd(-0.0);
  __m256d mx = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    mx = _mm256_max_pd(mx, _mm256_andnot_pd(signmask, _mm256_loadu_pd(x + i)));
  double lanes[4];
  _mm256_storeu_pd(lanes, mx);
  double d = std::max(std::max(lanes[0], lanes[1]),
                      std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) d = std::max(d, std::fabs(x[i]));
  return d;
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops table = {v_gemm_nn, v_gemm_nt, v_gemm_tn, v_add,
                            v_sub,     v_mul,     v_axpy,    v_scale,
                            v_dot,     v_sum,     v_sum_sq,  v_max_abs,
                            "avx2"};
  return table;
}

}  // namespace rt::kern

#else  // no AVX2 at compile time

namespace rt::kern {
const Ops& avx2_ops() { return scalar_ops(); }
}  // namespace rt::kern

#endif
