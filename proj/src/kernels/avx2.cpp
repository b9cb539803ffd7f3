// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// CPUID check, so no other translation unit may call into here directly.

#include <immintrin.h>

#include <vector>

#include "aspan/kernels.hpp"

namespace aspan::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// C[m x n] += A * B where A(i,p) = a[i*rs + p*cs] and B is k x n row-major.
// Register block: 4 rows x 8 columns held in eight accumulators across the p loop.
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rs, std::size_t cs,
                  const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * rs;
    const double* a1 = a + (i + 1) * rs;
    const double* a2 = a + (i + 2) * rs;
    const double* a3 = a + (i + 3) * rs;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
      __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        const std::size_t off = p * cs;
        __m256d av = _mm256_broadcast_sd(a0 + off);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a1 + off);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a2 + off);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a3 + off);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      double* r0 = c + (i + 0) * n + j;
      double* r1 = c + (i + 1) * n + j;
      double* r2 = c + (i + 2) * n + j;
      double* r3 = c + (i + 3) * n + j;
      _mm256_storeu_pd(r0, _mm256_add_pd(_mm256_loadu_pd(r0), c00));
      _mm256_storeu_pd(r0 + 4, _mm256_add_pd(_mm256_loadu_pd(r0 + 4), c01));
      _mm256_storeu_pd(r1, _mm256_add_pd(_mm256_loadu_pd(r1), c10));
      _mm256_storeu_pd(r1 + 4, _mm256_add_pd(_mm256_loadu_pd(r1 + 4), c11));
      _mm256_storeu_pd(r2, _mm256_add_pd(_mm256_loadu_pd(r2), c20));
      _mm256_storeu_pd(r2 + 4, _mm256_add_pd(_mm256_loadu_pd(r2 + 4), c21));
      _mm256_storeu_pd(r3, _mm256_add_pd(_mm256_loadu_pd(r3), c30));
      _mm256_storeu_pd(r3 + 4, _mm256_add_pd(_mm256_loadu_pd(r3 + 4), c31));
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      __m256d c2 = _mm256_setzero_pd(), c3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * n + j);
        const std::size_t off = p * cs;
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + off), bv, c0);
        c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + off), bv, c1);
        c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + off), bv, c2);
        c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + off), bv, c3);
      }
      double* r0 = c + (i + 0) * n + j;
      double* r1 = c + (i + 1) * n + j;
      double* r2 = c + (i + 2) * n + j;
      double* r3 = c + (i + 3) * n + j;
      _mm256_storeu_pd(r0, _mm256_add_pd(_mm256_loadu_pd(r0), c0));
      _mm256_storeu_pd(r1, _mm256_add_pd(_mm256_loadu_pd(r1), c1));
      _mm256_storeu_pd(r2, _mm256_add_pd(_mm256_loadu_pd(r2), c2));
      _mm256_storeu_pd(r3, _mm256_add_pd(_mm256_loadu_pd(r3), c3));
    }
    for (; j < n; ++j) {
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double bv = b[p * n + j];
        const std::size_t off = p * cs;
        s0 += a0[off] * bv;
        s1 += a1[off] * bv;
        s2 += a2[off] * bv;
        s3 += a3[off] * bv;
      }
      c[(i + 0) * n + j] += s0;
      c[(i + 1) * n + j] += s1;
      c[(i + 2) * n + j] += s2;
      c[(i + 3) * n + j] += s3;
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) axpy_avx2(a[i * rs + p * cs], b + p * n, ci, n);
  }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  gemm_strided(m, n, k, a, k, 1, b, c);
}

void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  gemm_strided(m, n, k, a, 1, m, b, c);
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  if (m < 4 || n < 4) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_avx2(a + i * k, b + j * k, k);
    return;
  }
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_strided(m, n, k, a, k, 1, bt.data(), c);
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::avx2, "avx2", dot_avx2, axpy_avx2, gemm_nn_avx2, gemm_tn_avx2, gemm_nt_avx2};
  return &table;
}

}  // namespace aspan::kernels
