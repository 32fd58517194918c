#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "kernels_internal.hpp"

namespace flow4d::kernels {

namespace {

// Activation tensors are tens of MB and reallocated every step; with the
// default mmap threshold each one is a fresh kernel-zeroed mapping, which
// costs more than the arithmetic. Keep large blocks inside the heap so they
// recycle.
struct MallocTuning {
  MallocTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  }
};
const MallocTuning kMallocTuning;

bool cpu_has_avx2() {
#ifdef FLOW4D_WITH_AVX2
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

bool cpu_has_avx512() {
#ifdef FLOW4D_WITH_AVX512
  return __builtin_cpu_supports("avx512f");
#else
  return false;
#endif
}

#if defined(FLOW4D_WITH_AVX2) && defined(FLOW4D_WITH_AVX512)
Kernels make_avx512_table() {
  Kernels k = avx2::kTable;
  k.name = "avx512";
  k.gemm = &avx512::gemm;
  return k;
}
const Kernels kAvx512Table = make_avx512_table();
#endif

const Kernels* g_active = nullptr;

const Kernels* resolve_default() {
  if (const char* env = std::getenv("F4D_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return &table(Backend::scalar);
    if (std::strcmp(env, "avx2") == 0 && backend_available(Backend::avx2))
      return &table(Backend::avx2);
    if (std::strcmp(env, "avx512") == 0 && backend_available(Backend::avx512))
      return &table(Backend::avx512);
  }
  if (backend_available(Backend::avx512)) return &table(Backend::avx512);
  if (backend_available(Backend::avx2)) return &table(Backend::avx2);
  return &table(Backend::scalar);
}

}  // namespace

bool backend_available(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
      return cpu_has_avx2();
    case Backend::avx512:
      return cpu_has_avx2() && cpu_has_avx512();
  }
  return false;
}

const Kernels& table(Backend b) {
  switch (b) {
    case Backend::scalar:
      return scalar::kTable;
#ifdef FLOW4D_WITH_AVX2
    case Backend::avx2:
      return avx2::kTable;
#endif
#if defined(FLOW4D_WITH_AVX2) && defined(FLOW4D_WITH_AVX512)
    case Backend::avx512:
      return kAvx512Table;
#endif
    default:
      return scalar::kTable;
  }
}

const Kernels& active() {
  if (!g_active) g_active = resolve_default();
  return *g_active;
}

void set_backend(Backend b) {
  if (!backend_available(b))
    throw std::runtime_error("kernel backend unavailable");
  g_active = &table(b);
}

const char* backend_name() { return active().name; }

}  // namespace flow4d::kernels
