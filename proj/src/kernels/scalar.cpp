#include "aspan/kernels.hpp"

namespace aspan::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_tn_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void gemm_nt_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_scalar(a + i * k, b + j * k, k);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, "scalar", dot_scalar, axpy_scalar,
                                 gemm_nn_scalar, gemm_tn_scalar, gemm_nt_scalar};
  return table;
}

}  // namespace aspan::kernels
