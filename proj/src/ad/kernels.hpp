#pragma once

#include <cstddef>

// Row-major dense kernels shared by the forward and backward passes.
namespace salign::ad::kernels {

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
inline void gemm_nt(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
      ci[p] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn(double* c, const double* a, const double* b, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace salign::ad::kernels
