#include <doctest.h>

#include <vector>

#include "realtalk/kernels.hpp"
#include "realtalk/rng.hpp"
#include "test_util.hpp"

using namespace rt;

namespace {

// Sizes chosen to hit remainder lanes of the 4x8 / 4-wide blocking.
const std::vector<std::array<int, 3>> kGemmSizes = {
    {1, 1, 1}, {3, 5, 7}, {4, 8, 8}, {5, 9, 11}, {16, 16, 16},
    {17, 31, 29}, {32, 48, 64}, {2, 64, 1}, {7, 1, 13}};

}  // namespace

TEST_CASE("scalar and avx2 gemm variants agree") {
  if (!kern::avx2_available()) {
    MESSAGE("AVX2 unavailable; dispatch test degenerates to scalar==scalar");
  }
  Rng rng(7);
  const auto& s = kern::scalar_ops();
  const auto& v = kern::avx2_ops();
  for (const auto& [m, k, n] : kGemmSizes) {
    std::vector<double> a(size_t(m) * k), b_nn(size_t(k) * n),
        b_nt(size_t(n) * k), a_tn(size_t(k) * m);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b_nn) x = rng.normal();
    for (auto& x : b_nt) x = rng.normal();
    for (auto& x : a_tn) x = rng.normal();
    std::vector<double> c0(size_t(m) * n, 0.5), c1(size_t(m) * n, 0.5);

    s.gemm_nn(a.data(), b_nn.data(), c0.data(), m, k, n, true);
    v.gemm_nn(a.data(), b_nn.data(), c1.data(), m, k, n, true);
    for (size_t i = 0; i < c0.size(); ++i)
      CHECK(c0[i] == doctest::Approx(c1[i]).epsilon(1e-12));

    s.gemm_nt(a.data(), b_nt.data(), c0.data(), m, k, n, false);
    v.gemm_nt(a.data(), b_nt.data(), c1.data(), m, k, n, false);
    for (size_t i = 0; i < c0.size(); ++i)
      CHECK(c0[i] == doctest::Approx(c1[i]).epsilon(1e-12));

    s.gemm_tn(a_tn.data(), b_nn.data(), c0.data(), m, k, n, false);
    v.gemm_tn(a_tn.data(), b_nn.data(), c1.data(), m, k, n, false);
    for (size_t i = 0; i < c0.size(); ++i)
      CHECK(c0[i] == doctest::Approx(c1[i]).epsilon(1e-12));
  }
}

TEST_CASE("gemm_nt and gemm_tn match explicit transposition through gemm_nn") {
  Rng rng(11);
  const int m = 9, k = 13, n = 17;
  std::vector<double> a(size_t(m) * k), b(size_t(k) * n);
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();
  std::vector<double> bt(size_t(n) * k), at(size_t(k) * m);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) bt[size_t(j) * k + i] = b[size_t(i) * n + j];
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) at[size_t(j) * m + i] = a[size_t(i) * k + j];

  const auto& K = kern::ops();
  std::vector<double> c_ref(size_t(m) * n), c_nt(size_t(m) * n),
      c_tn(size_t(m) * n);
  K.gemm_nn(a.data(), b.data(), c_ref.data(), m, k, n, false);
  K.gemm_nt(a.data(), bt.data(), c_nt.data(), m, k, n, false);
  K.gemm_tn(at.data(), b.data(), c_tn.data(), m, k, n, false);
  for (size_t i = 0; i < c_ref.size(); ++i) {
    CHECK(c_ref[i] == doctest::Approx(c_nt[i]).epsilon(1e-12));
    CHECK(c_ref[i] == doctest::Approx(c_tn[i]).epsilon(1e-12));
  }
}

TEST_CASE("elementwise and reduction kernels agree across ISAs") {
  Rng rng(3);
  for (size_t n : {1u, 4u, 5u, 31u, 256u, 1027u}) {
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    const auto& s = kern::scalar_ops();
    const auto& v = kern::avx2_ops();

    std::vector<double> o0(n), o1(n);
    s.add(x.data(), y.data(), o0.data(), n);
    v.add(x.data(), y.data(), o1.data(), n);
    CHECK(o0 == o1);
    s.sub(x.data(), y.data(), o0.data(), n);
    v.sub(x.data(), y.data(), o1.data(), n);
    CHECK(o0 == o1);
    s.mul(x.data(), y.data(), o0.data(), n);
    v.mul(x.data(), y.data(), o1.data(), n);
    CHECK(o0 == o1);

    o0 = y;
    o1 = y;
    s.axpy(0.37, x.data(), o0.data(), n);
    v.axpy(0.37, x.data(), o1.data(), n);
    for (size_t i = 0; i < n; ++i)
      CHECK(o0[i] == doctest::Approx(o1[i]).epsilon(1e-14));

    CHECK(s.dot(x.data(), y.data(), n) ==
          doctest::Approx(v.dot(x.data(), y.data(), n)).epsilon(1e-12));
    CHECK(s.sum(x.data(), n) ==
          doctest::Approx(v.sum(x.data(), n)).epsilon(1e-12));
    CHECK(s.sum_sq(x.data(), n) ==
          doctest::Approx(v.sum_sq(x.data(), n)).epsilon(1e-12));
    CHECK(s.max_abs(x.data(), n) == v.max_abs(x.data(), n));
  }
}

TEST_CASE("isa dispatch can be forced and reset") {
  kern::force_isa(kern::Isa::scalar);
  CHECK(kern::active_isa() == kern::Isa::scalar);
  CHECK(std::string(kern::ops().name) == "scalar");
  kern::reset_isa();
  if (kern::avx2_available()) CHECK(kern::active_isa() == kern::Isa::avx2);
}
