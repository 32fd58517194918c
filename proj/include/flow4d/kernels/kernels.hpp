#pragma once

// Double-precision compute kernels behind the hot loops: GEMM for the fully
// connected layers, directed nearest-neighbor scans for Chamfer terms, and
// column reductions for point-feature pooling. Scalar reference
// implementations always exist; AVX2 / AVX-512F variants are selected at
// runtime and are equivalence-tested against the scalar ones.

#include <cstddef>
#include <cstdint>

namespace flow4d::kernels {

// C(M x N) = alpha * op(A) * op(B) + beta * C, row-major.
// op(A) is A (M x K) or A^T (A stored K x M) when trans_a; likewise for B.
using GemmFn = void (*)(bool trans_a, bool trans_b, std::size_t m,
                        std::size_t n, std::size_t k, double alpha,
                        const double* a, std::size_t lda, const double* b,
                        std::size_t ldb, double beta, double* c,
                        std::size_t ldc);

using MapFn = void (*)(const double* x, double* y, std::size_t n);
// dx += dy where x > 0
using ReluBwdFn = void (*)(const double* x, const double* dy, double* dx,
                           std::size_t n);
// y += a * x
using AxpyFn = void (*)(std::size_t n, double a, const double* x, double* y);
using BinaryFn = void (*)(std::size_t n, const double* x, const double* y,
                          double* z);
using DotFn = double (*)(std::size_t n, const double* x, const double* y);
using SumFn = double (*)(std::size_t n, const double* x);
// Per-column max over `rows` rows; argrow reports the smallest row index
// attaining the max (strict-greater update).
using ColMaxFn = void (*)(std::size_t rows, std::size_t cols, const double* x,
                          double* out_max, std::uint32_t* out_argrow);
// For each query (xyz triple in q), squared distance to and index of the
// nearest target point; targets given as separate x/y/z arrays. Ties go to
// the lowest index. No FMA anywhere so all backends agree bit-for-bit.
using NnScanFn = void (*)(const double* q, std::size_t nq, const double* tx,
                          const double* ty, const double* tz, std::size_t nt,
                          double* out_d2, std::uint32_t* out_idx);

struct Kernels {
  const char* name;
  GemmFn gemm;
  MapFn relu;
  ReluBwdFn relu_bwd;
  AxpyFn axpy;
  BinaryFn add;
  BinaryFn mul;
  DotFn dot;
  SumFn sum;
  ColMaxFn colmax;
  NnScanFn nn_scan;
};

enum class Backend { scalar, avx2, avx512 };

// Active kernel table. First call resolves the backend: the F4D_KERNELS env
// var (scalar|avx2|avx512) if set, otherwise the best ISA the CPU supports.
const Kernels& active();

// Force a backend (tests and benchmarks). Throws if the CPU lacks it.
void set_backend(Backend b);
bool backend_available(Backend b);
const Kernels& table(Backend b);
const char* backend_name();

}  // namespace flow4d::kernels
