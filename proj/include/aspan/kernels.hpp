#pragma once

// Dense inner loops behind every tensor op. Each routine has a portable scalar
// reference and an AVX2+FMA variant; the variant is picked once at startup from
// CPUID and can be pinned with ASPAN_SIMD=scalar|avx2 or select().
//
// All matrices are contiguous row-major doubles. gemm routines accumulate into C.

#include <cstddef>
#include <string_view>

namespace aspan::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
};

const KernelTable& scalar_table();
// Null when the binary was built without the AVX2 translation unit.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);
const KernelTable& active();
// Throws ParameterError if the CPU lacks the requested ISA.
void select(Isa isa);
Isa parse_isa(std::string_view name);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  active().gemm_nn(m, n, k, a, b, c);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  active().gemm_tn(m, n, k, a, b, c);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  active().gemm_nt(m, n, k, a, b, c);
}

}  // namespace aspan::kernels
