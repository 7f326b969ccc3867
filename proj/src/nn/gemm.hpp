#pragma once

#include <algorithm>
#include <cstddef>

// Row-major dense kernels for the conv layers. Loop orders are fixed, so the
// results are bitwise reproducible for a given build.
namespace infocam::nn::detail {

/// C[M,N] += A[M,K] * B[K,N], A addressed as A[i*a_rs + k*a_cs].
/// (a_rs, a_cs) = (K, 1) for A, (1, M) for A stored transposed as (K,M).
inline void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t a_rs,
                     std::size_t a_cs, const double* B, double* C) {
  constexpr std::size_t kRows = 4, kCols = 256;
  for (std::size_t j0 = 0; j0 < N; j0 += kCols) {
    const std::size_t jn = std::min(kCols, N - j0);
    std::size_t i = 0;
    for (; i + kRows <= M; i += kRows) {
      double* c0 = C + i * N + j0;
      double* c1 = c0 + N;
      double* c2 = c1 + N;
      double* c3 = c2 + N;
      for (std::size_t k = 0; k < K; ++k) {
        const double a0 = A[i * a_rs + k * a_cs];
        const double a1 = A[(i + 1) * a_rs + k * a_cs];
        const double a2 = A[(i + 2) * a_rs + k * a_cs];
        const double a3 = A[(i + 3) * a_rs + k * a_cs];
        const double* b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const double bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      double* c = C + i * N + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const double a = A[i * a_rs + k * a_cs];
        const double* b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

/// out[cols, rows] = in[rows, cols]^T
inline void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

}  // namespace infocam::nn::detail
