#pragma once

#include "flow4d/kernels/kernels.hpp"

namespace flow4d::kernels {

namespace scalar {
extern const Kernels kTable;
}

#ifdef FLOW4D_WITH_AVX2
namespace avx2 {
extern const Kernels kTable;
}
#endif

#ifdef FLOW4D_WITH_AVX512
namespace avx512 {
// AVX-512 provides its own GEMM; everything else comes from the AVX2 table.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, double alpha, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);
}
#endif

}  // namespace flow4d::kernels
