#pragma once

#include <cstddef>

namespace wah::kernels {

// Row-major matrix kernels with explicit leading dimensions. The OpenMP
// variants split rows of C across threads; every output element is
// accumulated by exactly one thread in a fixed k order, so results are
// bit-identical to the serial variants at any thread count.

// C[m x n] (+)= A[m x k] * B[k x n]
void matmul_nn(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
               int m, int k, int n, bool accumulate = false);
void matmul_nn_serial(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                      int m, int k, int n, bool accumulate = false);

// C[m x n] (+)= A[m x k] * B[n x k]^T
void matmul_nt(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
               int m, int k, int n, bool accumulate = false);
void matmul_nt_serial(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                      int m, int k, int n, bool accumulate = false);

// C[m x n] (+)= A[k x m]^T * B[k x n]
void matmul_tn(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
               int m, int k, int n, bool accumulate = false);
void matmul_tn_serial(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                      int m, int k, int n, bool accumulate = false);

// Row-wise softmax in place, x is [m x n] with leading dimension ld.
void softmax_rows(double* x, int ld, int m, int n);
void softmax_rows_serial(double* x, int ld, int m, int n);

void add_row_bias(double* x, const double* bias, int m, int n);

}  // namespace wah::kernels
