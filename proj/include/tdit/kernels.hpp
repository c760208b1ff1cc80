#pragma once

// Dense kernels used by attention and linear layers.
//
// Every output element is accumulated over the contraction index in
// increasing order, so results are bitwise identical for any thread count.
// `kernels::` is the OpenMP build; `kernels::reference::` holds plain serial
// loops kept for testing and benchmarking.

#include <cstddef>
#include <span>

namespace tdit::kernels {

// All matrices are row-major, dimensions given as (rows, cols) of the
// operand as stored.

/// C[m x n] += A[m x k] * B[k x n]
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);
/// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);
/// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);

/// out[m x n] = x[m x k] * w[k x n] + bias (bias may be null).
void linear(const double* x, const double* w, const double* bias, double* out, std::size_t m,
            std::size_t k, std::size_t n);

/// Column sums of g[m x n] added into out[n].
void colsum_acc(const double* g, double* out, std::size_t m, std::size_t n);

namespace reference {
void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);
}  // namespace reference

/// Threads OpenMP will use for the parallel kernels (1 when built without it).
int max_threads();

}  // namespace tdit::kernels
