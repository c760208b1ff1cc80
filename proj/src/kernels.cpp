#include "tdit/kernels.hpp"

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tdit::kernels {

namespace {
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

// C[rows x n] += A * B where A(r, p) = a[r * a_row + p * a_col] and B is
// row-major [depth x n]. Every C element accumulates p = 0..depth-1 in order,
// so the result does not depend on the blocking.
template <std::size_t R>
void block_rows(const double* a, std::size_t a_row, std::size_t a_col, const double* b, double* c,
                std::size_t depth, std::size_t n) {
  constexpr std::size_t kCols = 16;
  std::size_t j0 = 0;
  for (; j0 + kCols <= n; j0 += kCols) {
    double acc[R][kCols];
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < kCols; ++j) acc[r][j] = c[r * n + j0 + j];
    for (std::size_t p = 0; p < depth; ++p) {
      const double* __restrict brow = b + p * n + j0;
      for (std::size_t r = 0; r < R; ++r) {
        const double av = a[r * a_row + p * a_col];
#pragma omp simd
        for (std::size_t j = 0; j < kCols; ++j) acc[r][j] += av * brow[j];
      }
    }
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < kCols; ++j) c[r * n + j0 + j] = acc[r][j];
  }
  if (j0 == n) return;
  for (std::size_t r = 0; r < R; ++r) {
    double* __restrict crow = c + r * n;
    for (std::size_t p = 0; p < depth; ++p) {
      const double av = a[r * a_row + p * a_col];
      const double* __restrict brow = b + p * n;
      for (std::size_t j = j0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void blocked_gemm(const double* a, std::size_t a_row, std::size_t a_col, const double* b, double* c,
                  std::size_t rows, std::size_t depth, std::size_t n) {
  constexpr std::size_t kRows = 4;
  const std::size_t full = rows / kRows;
  const bool par = rows * depth * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t bb = 0; bb < static_cast<std::ptrdiff_t>(full); ++bb) {
    const std::size_t i = static_cast<std::size_t>(bb) * kRows;
    block_rows<kRows>(a + i * a_row, a_row, a_col, b, c + i * n, depth, n);
  }
  for (std::size_t i = full * kRows; i < rows; ++i)
    block_rows<1>(a + i * a_row, a_row, a_col, b, c + i * n, depth, n);
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  blocked_gemm(a, k, 1, b, c, m, k, n);
}

void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  // C[k x n] += A^T B: row p of C contracts over i = 0..m-1.
  blocked_gemm(a, 1, k, b, c, k, m, n);
}

void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  // Transpose B once so the inner loop streams contiguous memory; the
  // contraction order is still p = 0..k-1 for every element.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn_acc(a, bt.data(), c, m, k, n);
}

void linear(const double* x, const double* w, const double* bias, double* out, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = 0.0;
  gemm_nn_acc(x, w, out, m, k, n);
  if (bias != nullptr)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
}

void colsum_acc(const double* g, double* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += g[i * n + j];
}

namespace reference {

void gemm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = c[p * n + j];
      for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
      c[p * n + j] = acc;
    }
}

void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

}  // namespace reference

}  // namespace tdit::kernels
