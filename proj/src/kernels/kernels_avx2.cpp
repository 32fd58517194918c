#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <vector>

#include "kernels_internal.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>

namespace flow4d::kernels::avx2 {

namespace {

inline double aelem(const double* a, std::size_t lda, bool trans,
                    std::size_t i, std::size_t p) {
  return trans ? a[p * lda + i] : a[i * lda + p];
}

// Scalar cleanup for tile edges.
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

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_pd(lo, _mm_unpackhi_pd(lo, lo)));
}

// C += alpha * op(A) * B with B untransposed: 4x8 register tile, A values
// broadcast, B rows streamed.
template <bool TransA>
void gemm_bn(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t mb = m / 4 * 4;
  const std::size_t nb = n / 8 * 8;
  const __m256d valpha = _mm256_set1_pd(alpha);
  for (std::size_t i = 0; i < mb; i += 4) {
    for (std::size_t j = 0; j < nb; j += 8) {
      __m256d acc00 = _mm256_setzero_pd(), acc01 = _mm256_setzero_pd();
      __m256d acc10 = _mm256_setzero_pd(), acc11 = _mm256_setzero_pd();
      __m256d acc20 = _mm256_setzero_pd(), acc21 = _mm256_setzero_pd();
      __m256d acc30 = _mm256_setzero_pd(), acc31 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + j + 4);
        const __m256d a0 = _mm256_set1_pd(aelem(a, lda, TransA, i + 0, p));
        const __m256d a1 = _mm256_set1_pd(aelem(a, lda, TransA, i + 1, p));
        const __m256d a2 = _mm256_set1_pd(aelem(a, lda, TransA, i + 2, p));
        const __m256d a3 = _mm256_set1_pd(aelem(a, lda, TransA, i + 3, p));
        acc00 = _mm256_fmadd_pd(a0, b0, acc00);
        acc01 = _mm256_fmadd_pd(a0, b1, acc01);
        acc10 = _mm256_fmadd_pd(a1, b0, acc10);
        acc11 = _mm256_fmadd_pd(a1, b1, acc11);
        acc20 = _mm256_fmadd_pd(a2, b0, acc20);
        acc21 = _mm256_fmadd_pd(a2, b1, acc21);
        acc30 = _mm256_fmadd_pd(a3, b0, acc30);
        acc31 = _mm256_fmadd_pd(a3, b1, acc31);
      }
      double* c0 = c + (i + 0) * ldc + j;
      double* c1 = c + (i + 1) * ldc + j;
      double* c2 = c + (i + 2) * ldc + j;
      double* c3 = c + (i + 3) * ldc + j;
      _mm256_storeu_pd(c0, _mm256_fmadd_pd(valpha, acc00, _mm256_loadu_pd(c0)));
      _mm256_storeu_pd(c0 + 4,
                       _mm256_fmadd_pd(valpha, acc01, _mm256_loadu_pd(c0 + 4)));
      _mm256_storeu_pd(c1, _mm256_fmadd_pd(valpha, acc10, _mm256_loadu_pd(c1)));
      _mm256_storeu_pd(c1 + 4,
                       _mm256_fmadd_pd(valpha, acc11, _mm256_loadu_pd(c1 + 4)));
      _mm256_storeu_pd(c2, _mm256_fmadd_pd(valpha, acc20, _mm256_loadu_pd(c2)));
      _mm256_storeu_pd(c2 + 4,
                       _mm256_fmadd_pd(valpha, acc21, _mm256_loadu_pd(c2 + 4)));
      _mm256_storeu_pd(c3, _mm256_fmadd_pd(valpha, acc30, _mm256_loadu_pd(c3)));
      _mm256_storeu_pd(c3 + 4,
                       _mm256_fmadd_pd(valpha, acc31, _mm256_loadu_pd(c3 + 4)));
    }
    if (nb < n) gemm_edge(TransA, false, i, i + 4, nb, n, k, alpha, a, lda, b, ldb, c, ldc);
  }
  if (mb < m) gemm_edge(TransA, false, mb, m, 0, n, k, alpha, a, lda, b, ldb, c, ldc);
}

// C += alpha * A * B^T: rows of A dotted with rows of B.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, std::size_t lda, const double* b,
             std::size_t ldb, double* c, std::size_t ldc) {
  const std::size_t nb = n / 4 * 4;
  const std::size_t kb = k / 4 * 4;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    for (std::size_t j = 0; j < nb; j += 4) {
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < kb; p += 4) {
        const __m256d av = _mm256_loadu_pd(arow + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + (j + 0) * ldb + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + (j + 1) * ldb + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + (j + 2) * ldb + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + (j + 3) * ldb + p), s3);
      }
      double d0 = hsum(s0), d1 = hsum(s1), d2 = hsum(s2), d3 = hsum(s3);
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

// blocked out-of-place transpose: dst (rows x cols) from src (cols x rows)
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
      // strided A reads starve the microkernel; transpose once instead
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

void relu(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_max_pd(zero, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d gated = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), gated));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void add(std::size_t n, const double* x, const double* y, double* z) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i,
                     _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void mul(std::size_t n, const double* x, const double* y, double* z) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(z + i,
                     _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sum(std::size_t n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

void colmax(std::size_t rows, std::size_t cols, const double* x,
            double* out_max, std::uint32_t* out_argrow) {
  std::size_t j = 0;
  for (; j + 4 <= cols; j += 4) {
    __m256d best = _mm256_loadu_pd(x + j);
    __m256i arg = _mm256_setzero_si256();
    for (std::size_t i = 1; i < rows; ++i) {
      const __m256d v = _mm256_loadu_pd(x + i * cols + j);
      const __m256d gt = _mm256_cmp_pd(v, best, _CMP_GT_OQ);
      best = _mm256_blendv_pd(best, v, gt);
      const __m256i iv = _mm256_set1_epi64x(static_cast<long long>(i));
      arg = _mm256_blendv_epi8(arg, iv, _mm256_castpd_si256(gt));
    }
    _mm256_storeu_pd(out_max + j, best);
    alignas(32) long long tmp[4];
    _mm256_store_si256(reinterpret_cast<__m256i*>(tmp), arg);
    for (int l = 0; l < 4; ++l)
      out_argrow[j + l] = static_cast<std::uint32_t>(tmp[l]);
  }
  for (; j < cols; ++j) {
    double best = x[j];
    std::uint32_t arg = 0;
    for (std::size_t i = 1; i < rows; ++i) {
      const double v = x[i * cols + j];
      if (v > best) {
        best = v;
        arg = static_cast<std::uint32_t>(i);
      }
    }
    out_max[j] = best;
    out_argrow[j] = arg;
  }
}

void nn_scan(const double* q, std::size_t nq, const double* tx,
             const double* ty, const double* tz, std::size_t nt,
             double* out_d2, std::uint32_t* out_idx) {
  const std::size_t ntb = nt / 4 * 4;
  for (std::size_t i = 0; i < nq; ++i) {
    const __m256d qx = _mm256_set1_pd(q[3 * i]);
    const __m256d qy = _mm256_set1_pd(q[3 * i + 1]);
    const __m256d qz = _mm256_set1_pd(q[3 * i + 2]);
    __m256d best = _mm256_set1_pd(1e300);
    __m256i bidx = _mm256_setzero_si256();
    __m256i cur = _mm256_setr_epi64x(0, 1, 2, 3);
    const __m256i step = _mm256_set1_epi64x(4);
    for (std::size_t t = 0; t < ntb; t += 4) {
      const __m256d dx = _mm256_sub_pd(qx, _mm256_loadu_pd(tx + t));
      const __m256d dy = _mm256_sub_pd(qy, _mm256_loadu_pd(ty + t));
      const __m256d dz = _mm256_sub_pd(qz, _mm256_loadu_pd(tz + t));
      // mul/add only, matching the scalar kernel bit-for-bit
      const __m256d d2 = _mm256_add_pd(
          _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy)),
          _mm256_mul_pd(dz, dz));
      const __m256d lt = _mm256_cmp_pd(d2, best, _CMP_LT_OQ);
      best = _mm256_blendv_pd(best, d2, lt);
      bidx = _mm256_blendv_epi8(bidx, cur, _mm256_castpd_si256(lt));
      cur = _mm256_add_epi64(cur, step);
    }
    alignas(32) double bd[4];
    alignas(32) long long bi[4];
    _mm256_store_pd(bd, best);
    _mm256_store_si256(reinterpret_cast<__m256i*>(bi), bidx);
    double bestd = 1e301;
    std::uint32_t besti = 0;
    for (int l = 0; l < 4; ++l) {
      const auto idx = static_cast<std::uint32_t>(bi[l]);
      if (bd[l] < bestd || (bd[l] == bestd && idx < besti)) {
        bestd = bd[l];
        besti = idx;
      }
    }
    const double sqx = q[3 * i], sqy = q[3 * i + 1], sqz = q[3 * i + 2];
    for (std::size_t t = ntb; t < nt; ++t) {
      const double dx = sqx - tx[t];
      const double dy = sqy - ty[t];
      const double dz = sqz - tz[t];
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < bestd) {
        bestd = d2;
        besti = static_cast<std::uint32_t>(t);
      }
    }
    out_d2[i] = bestd;
    out_idx[i] = besti;
  }
}

const Kernels kTable = {
    "avx2", &gemm, &relu, &relu_bwd, &axpy, &add,
    &mul,   &dot,  &sum,  &colmax,   &nn_scan,
};

}  // namespace flow4d::kernels::avx2

#endif  // x86
