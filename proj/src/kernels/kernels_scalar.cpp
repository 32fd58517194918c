#include <cstddef>
#include <cstdint>
#include <limits>

#include "kernels_internal.hpp"

namespace flow4d::kernels::scalar {

namespace {

inline double elem(const double* a, std::size_t ld, bool trans, std::size_t i,
                   std::size_t j) {
  return trans ? a[j * ld + i] : a[i * ld + j];
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
    for (std::size_t p = 0; p < k; ++p) {
      const double av = alpha * elem(a, lda, trans_a, i, p);
      if (!trans_b) {
        const double* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      }
    }
  }
}

void relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add(std::size_t n, const double* x, const double* y, double* z) {
  for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

void mul(std::size_t n, const double* x, const double* y, double* z) {
  for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

double dot(std::size_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sum(std::size_t n, const double* x) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

void colmax(std::size_t rows, std::size_t cols, const double* x,
            double* out_max, std::uint32_t* out_argrow) {
  for (std::size_t j = 0; j < cols; ++j) {
    out_max[j] = x[j];
    out_argrow[j] = 0;
  }
  for (std::size_t i = 1; i < rows; ++i) {
    const double* row = x + i * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      if (row[j] > out_max[j]) {
        out_max[j] = row[j];
        out_argrow[j] = static_cast<std::uint32_t>(i);
      }
    }
  }
}

void nn_scan(const double* q, std::size_t nq, const double* tx,
             const double* ty, const double* tz, std::size_t nt,
             double* out_d2, std::uint32_t* out_idx) {
  for (std::size_t i = 0; i < nq; ++i) {
    const double qx = q[3 * i], qy = q[3 * i + 1], qz = q[3 * i + 2];
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_idx = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      const double dx = qx - tx[t];
      const double dy = qy - ty[t];
      const double dz = qz - tz[t];
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) {
        best = d2;
        best_idx = static_cast<std::uint32_t>(t);
      }
    }
    out_d2[i] = best;
    out_idx[i] = best_idx;
  }
}

const Kernels kTable = {
    "scalar", &gemm, &relu, &relu_bwd, &axpy, &add,
    &mul,     &dot,  &sum,  &colmax,   &nn_scan,
};

}  // namespace flow4d::kernels::scalar
