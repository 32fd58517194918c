#include <cstddef>
#include <algorithm>
#include <vector>

#include "kernels_internal.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>

namespace flow4d::kernels::avx512 {

namespace {

inline double aelem(const double* a, std::size_t lda, bool trans,
                    std::size_t i, std::size_t p) {
  return trans ? a[p * lda + i] : a[i * lda + p];
}

void gemm_edge(bool trans_a, bool trans_b, std::size_t i0, std::size_t i1,
               std::size_t j0, std::size_t j1, std::size_t k, double alpha,
               const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = i0; i < i1; ++i) {
    for (std::size_t j = j0; j < j1; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        s += aelem(a, lda, trans_a, i, p) *
             (trans_b ? b[j * ldb + p] : b[p * ldb + j]);
      c[i * ldc + j] += alpha * s;
    }
  }
}

// 4x16 register tile over zmm vectors; B rows streamed, A broadcast.
template <bool TransA>
void gemm_bn(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t mb = m / 4 * 4;
  const std::size_t nb = n / 16 * 16;
  const __m512d valpha = _mm512_set1_pd(alpha);
  for (std::size_t i = 0; i < mb; i += 4) {
    for (std::size_t j = 0; j < nb; j += 16) {
      __m512d a00 = _mm512_setzero_pd(), a01 = _mm512_setzero_pd();
      __m512d a10 = _mm512_setzero_pd(), a11 = _mm512_setzero_pd();
      __m512d a20 = _mm512_setzero_pd(), a21 = _mm512_setzero_pd();
      __m512d a30 = _mm512_setzero_pd(), a31 = _mm512_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m512d b0 = _mm512_loadu_pd(b + p * ldb + j);
        const __m512d b1 = _mm512_loadu_pd(b + p * ldb + j + 8);
        const __m512d v0 = _mm512_set1_pd(aelem(a, lda, TransA, i + 0, p));
        const __m512d v1 = _mm512_set1_pd(aelem(a, lda, TransA, i + 1, p));
        const __m512d v2 = _mm512_set1_pd(aelem(a, lda, TransA, i + 2, p));
        const __m512d v3 = _mm512_set1_pd(aelem(a, lda, TransA, i + 3, p));
        a00 = _mm512_fmadd_pd(v0, b0, a00);
        a01 = _mm512_fmadd_pd(v0, b1, a01);
        a10 = _mm512_fmadd_pd(v1, b0, a10);
        a11 = _mm512_fmadd_pd(v1, b1, a11);
        a20 = _mm512_fmadd_pd(v2, b0, a20);
        a21 = _mm512_fmadd_pd(v2, b1, a21);
        a30 = _mm512_fmadd_pd(v3, b0, a30);
        a31 = _mm512_fmadd_pd(v3, b1, a31);
      }
      double* c0 = c + (i + 0) * ldc + j;
      double* c1 = c + (i + 1) * ldc + j;
      double* c2 = c + (i + 2) * ldc + j;
      double* c3 = c + (i + 3) * ldc + j;
      _mm512_storeu_pd(c0, _mm512_fmadd_pd(valpha, a00, _mm512_loadu_pd(c0)));
      _mm512_storeu_pd(c0 + 8,
                       _mm512_fmadd_pd(valpha, a01, _mm512_loadu_pd(c0 + 8)));
      _mm512_storeu_pd(c1, _mm512_fmadd_pd(valpha, a10, _mm512_loadu_pd(c1)));
      _mm512_storeu_pd(c1 + 8,
                       _mm512_fmadd_pd(valpha, a11, _mm512_loadu_pd(c1 + 8)));
      _mm512_storeu_pd(c2, _mm512_fmadd_pd(valpha, a20, _mm512_loadu_pd(c2)));
      _mm512_storeu_pd(c2 + 8,
                       _mm512_fmadd_pd(valpha, a21, _mm512_loadu_pd(c2 + 8)));
      _mm512_storeu_pd(c3, _mm512_fmadd_pd(valpha, a30, _mm512_loadu_pd(c3)));
      _mm512_storeu_pd(c3 + 8,
                       _mm512_fmadd_pd(valpha, a31, _mm512_loadu_pd(c3 + 8)));
    }
    if (nb < n) gemm_edge(TransA, false, i, i + 4, nb, n, k, alpha, a, lda, b, ldb, c, ldc);
  }
  if (mb < m) gemm_edge(TransA, false, mb, m, 0, n, k, alpha, a, lda, b, ldb, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t nb = n / 4 * 4;
  const std::size_t kb = k / 8 * 8;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    for (std::size_t j = 0; j < nb; j += 4) {
      __m512d s0 = _mm512_setzero_pd(), s1 = _mm512_setzero_pd();
      __m512d s2 = _mm512_setzero_pd(), s3 = _mm512_setzero_pd();
      for (std::size_t p = 0; p < kb; p += 8) {
        const __m512d av = _mm512_loadu_pd(arow + p);
        s0 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + (j + 0) * ldb + p), s0);
        s1 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + (j + 1) * ldb + p), s1);
        s2 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + (j + 2) * ldb + p), s2);
        s3 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + (j + 3) * ldb + p), s3);
      }
      double d0 = _mm512_reduce_add_pd(s0), d1 = _mm512_reduce_add_pd(s1);
      double d2 = _mm512_reduce_add_pd(s2), d3 = _mm512_reduce_add_pd(s3);
      for (std::size_t p = kb; p < k; ++p) {
        const double av = arow[p];
        d0 += av * b[(j + 0) * ldb + p];
        d1 += av * b[(j + 1) * ldb + p];
        d2 += av * b[(j + 2) * ldb + p];
        d3 += av * b[(j + 3) * ldb + p];
      }
      c[i * ldc + j + 0] += alpha * d0;
      c[i * ldc + j + 1] += alpha * d1;
      c[i * ldc + j + 2] += alpha * d2;
      c[i * ldc + j + 3] += alpha * d3;
    }
    if (nb < n) gemm_edge(false, true, i, i + 1, nb, n, k, alpha, a, lda, b, ldb, c, ldc);
  }
}

}  // namespace

namespace {

void transpose_into(std::vector<double>& dst, const double* src,
                    std::size_t rows, std::size_t cols, std::size_t lds) {
  dst.resize(rows * cols);
  constexpr std::size_t kB = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kB)
    for (std::size_t j0 = 0; j0 < cols; j0 += kB) {
      const std::size_t i1 = std::min(rows, i0 + kB);
      const std::size_t j1 = std::min(cols, j0 + kB);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j)
          dst[i * cols + j] = src[j * lds + i];
    }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    if (beta == 0.0) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    } else if (beta != 1.0) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (!trans_b) {
    if (trans_a) {
      static thread_local std::vector<double> scratch;
      transpose_into(scratch, a, m, k, lda);
      gemm_bn<false>(m, n, k, alpha, scratch.data(), k, b, ldb, c, ldc);
    } else {
      gemm_bn<false>(m, n, k, alpha, a, lda, b, ldb, c, ldc);
    }
  } else if (!trans_a) {
    gemm_nt(m, n, k, alpha, a, lda, b, ldb, c, ldc);
  } else {
    gemm_edge(true, true, 0, m, 0, n, k, alpha, a, lda, b, ldb, c, ldc);
  }
}

}  // namespace flow4d::kernels::avx512

#endif  // x86
