#include "wah/kernels.hpp"

#include <cmath>
#include <cstring>

namespace wah::kernels {

namespace {

inline void nn_row(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                   int i, int k, int n, bool accumulate) {
    double* ci = c + static_cast<size_t>(i) * ldc;
    if (!accumulate) std::memset(ci, 0, sizeof(double) * n);
    const double* ai = a + static_cast<size_t>(i) * lda;
    int kk = 0;
    for (; kk + 4 <= k; kk += 4) {
        const double a0 = ai[kk], a1 = ai[kk + 1], a2 = ai[kk + 2], a3 = ai[kk + 3];
        const double* b0 = b + static_cast<size_t>(kk) * ldb;
        const double* b1 = b0 + ldb;
        const double* b2 = b1 + ldb;
        const double* b3 = b2 + ldb;
#pragma omp simd
        for (int j = 0; j < n; ++j) ci[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; kk < k; ++kk) {
        const double av = ai[kk];
        const double* bk = b + static_cast<size_t>(kk) * ldb;
#pragma omp simd
        for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
}

// simd reductions fix a lane order per build, so results stay reproducible
// across runs and thread counts
inline void nt_row(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                   int i, int k, int n, bool accumulate) {
    double* ci = c + static_cast<size_t>(i) * ldc;
    const double* ai = a + static_cast<size_t>(i) * lda;
    int j = 0;
    for (; j + 4 <= n; j += 4) {  // 4 dots share one pass over the a row
        const double* b0 = b + static_cast<size_t>(j) * ldb;
        const double* b1 = b0 + ldb;
        const double* b2 = b1 + ldb;
        const double* b3 = b2 + ldb;
        double d0 = 0, d1 = 0, d2 = 0, d3 = 0;
#pragma omp simd reduction(+ : d0, d1, d2, d3)
        for (int kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            d0 += av * b0[kk];
            d1 += av * b1[kk];
            d2 += av * b2[kk];
            d3 += av * b3[kk];
        }
        if (accumulate) {
            ci[j] += d0;
            ci[j + 1] += d1;
            ci[j + 2] += d2;
            ci[j + 3] += d3;
        } else {
            ci[j] = d0;
            ci[j + 1] = d1;
            ci[j + 2] = d2;
            ci[j + 3] = d3;
        }
    }
    for (; j < n; ++j) {
        const double* bj = b + static_cast<size_t>(j) * ldb;
        double dot = 0.0;
#pragma omp simd reduction(+ : dot)
        for (int kk = 0; kk < k; ++kk) dot += ai[kk] * bj[kk];
        ci[j] = accumulate ? ci[j] + dot : dot;
    }
}

inline void tn_row(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                   int i, int k, int n, bool accumulate) {
    double* ci = c + static_cast<size_t>(i) * ldc;
    if (!accumulate) std::memset(ci, 0, sizeof(double) * n);
    for (int kk = 0; kk < k; ++kk) {
        const double av = a[static_cast<size_t>(kk) * lda + i];
        const double* bk = b + static_cast<size_t>(kk) * ldb;
#pragma omp simd
        for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
}

inline void softmax_row(double* row, int n) {
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = row[j] > mx ? row[j] : mx;
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < n; ++j) row[j] *= inv;
}

}  // namespace

void matmul_nn(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
               int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) nn_row(a, lda, b, ldb, c, ldc, i, k, n, accumulate);
}

void matmul_nn_serial(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                      int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) nn_row(a, lda, b, ldb, c, ldc, i, k, n, accumulate);
}

void matmul_nt(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
               int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) nt_row(a, lda, b, ldb, c, ldc, i, k, n, accumulate);
}

void matmul_nt_serial(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                      int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) nt_row(a, lda, b, ldb, c, ldc, i, k, n, accumulate);
}

void matmul_tn(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
               int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) tn_row(a, lda, b, ldb, c, ldc, i, k, n, accumulate);
}

void matmul_tn_serial(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
                      int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) tn_row(a, lda, b, ldb, c, ldc, i, k, n, accumulate);
}

void softmax_rows(double* x, int ld, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) softmax_row(x + static_cast<size_t>(i) * ld, n);
}

void softmax_rows_serial(double* x, int ld, int m, int n) {
    for (int i = 0; i < m; ++i) softmax_row(x + static_cast<size_t>(i) * ld, n);
}

void add_row_bias(double* x, const double* bias, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* xi = x + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) xi[j] += bias[j];
    }
}

}  // namespace wah::kernels
