#pragma once

#include <cstddef>

namespace sasnet::blas {

// Number of threads used by the GEMM backend. Defaults to the SASNET_THREADS
// environment variable, else the hardware thread count.
void set_threads(int n);
int threads();

// When enabled, GEMMs run in single precision internally (inputs converted,
// result widened back to double). Tensors stay 64-bit everywhere else.
void set_fast32(bool on);
bool fast32();

// C = alpha * op(A) * op(B) + beta * C, row-major.
// op(A) is M x K, op(B) is K x N, C is M x N. The summation order along K is
// fixed for a given thread count.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

} // namespace sasnet::blas
