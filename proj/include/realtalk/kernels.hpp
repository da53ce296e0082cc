#pragma once

#include <cstddef>
#include <cstdint>

// Dense double-precision kernels behind the tensor layer. Every entry point
// has a scalar reference implementation and (on x86-64) an AVX2+FMA variant;
// the active table is chosen once at startup and can be overridden for
// equivalence tests and benchmarking.

namespace rt::kern {

enum class Isa { scalar, avx2 };

// All matrices are row-major, fully packed.
//   gemm_nn: C (+)= A[M x K] * B[K x N]
//   gemm_nt: C (+)= A[M x K] * B[N x K]^T
//   gemm_tn: C (+)= A[K x M]^T * B[K x N]
// When acc is false, C is overwritten.
struct Ops {
  void (*gemm_nn)(const double* a, const double* b, double* c, int m, int k,
                  int n, bool acc);
  void (*gemm_nt)(const double* a, const double* b, double* c, int m, int k,
                  int n, bool acc);
  void (*gemm_tn)(const double* a, const double* b, double* c, int m, int k,
                  int n, bool acc);
  void (*add)(const double* x, const double* y, double* out, size_t n);
  void (*sub)(const double* x, const double* y, double* out, size_t n);
  void (*mul)(const double* x, const double* y, double* out, size_t n);
  void (*axpy)(double a, const double* x, double* y, size_t n);  // y += a*x
  void (*scale)(double a, double* x, size_t n);                  // x *= a
  double (*dot)(const double* x, const double* y, size_t n);
  double (*sum)(const double* x, size_t n);
  double (*sum_sq)(const double* x, size_t n);
  double (*max_abs)(const double* x, size_t n);
  const char* name;
};

const Ops& scalar_ops();
const Ops& avx2_ops();  // falls back to scalar_ops if AVX2 is unavailable

bool avx2_available();  // CPU + compiler support

// Active table. Defaults to the best available ISA; the REALTALK_SIMD
// environment variable ("scalar" / "avx2" / "auto") overrides detection.
const Ops& ops();
Isa active_isa();
void force_isa(Isa isa);
void reset_isa();

}  // namespace rt::kern
