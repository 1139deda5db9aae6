#pragma once

#include <cblas.h>

#include <mutex>

extern "C" void openblas_set_num_threads(int);

namespace npbg::detail {

// All GEMMs run on one BLAS thread: reduction order inside a product is then
// fixed, which keeps every forward pass bitwise reproducible.
inline void pin_blas_single_thread() {
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
}

// C[m x n] = A[m x k] * B[k x n] + beta * C, row-major dense.
inline void gemm_rm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda,
                    const float* b, int ldb, float beta, float* c, int ldc) {
    pin_blas_single_thread();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0f, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm_rm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
                    const double* b, int ldb, double beta, double* c, int ldc) {
    pin_blas_single_thread();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace npbg::detail
