#pragma once

// Small row-major matrix kernels. Everything the conv/attention paths need
// reduces to these three product shapes; loops are arranged so the innermost
// dimension is contiguous in both the streamed operand and the accumulator,
// which lets the compiler vectorize them.

#include <cstddef>
#include <vector>

namespace jct {

// C[M x N] (+)= A[M x K] * B[K x N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K,
             const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < M * N; ++i) C[i] = T(0);
  }
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) {
    T* c0 = C + i * N;
    T* c1 = c0 + N;
    T* c2 = c1 + N;
    T* c3 = c2 + N;
    const T* a0 = A + i * K;
    const T* a1 = a0 + K;
    const T* a2 = a1 + K;
    const T* a3 = a2 + K;
    for (std::size_t k = 0; k < K; ++k) {
      const T* b = B + k * N;
      const T s0 = a0[k], s1 = a1[k], s2 = a2[k], s3 = a3[k];
      for (std::size_t j = 0; j < N; ++j) {
        const T bj = b[j];
        c0[j] += s0 * bj;
        c1[j] += s1 * bj;
        c2[j] += s2 * bj;
        c3[j] += s3 * bj;
      }
    }
  }
  for (; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T s = a[k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += s * b[j];
    }
  }
}

// C[M x N] (+)= A[M x K] * B^T, with B stored [N x K].
//
// Dot-product reductions cannot be auto-vectorized under strict FP semantics,
// so beyond a small cutoff B is transposed into a scratch buffer and the
// vectorizable gemm_nn kernel runs instead.
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K,
             const T* A, const T* B, T* C, bool accumulate) {
  if (M * N * K >= 32768) {
    static thread_local std::vector<T> scratch;
    scratch.resize(K * N);
    constexpr std::size_t blk = 32;
    for (std::size_t j0 = 0; j0 < N; j0 += blk) {
      const std::size_t j1 = j0 + blk < N ? j0 + blk : N;
      for (std::size_t k0 = 0; k0 < K; k0 += blk) {
        const std::size_t k1 = k0 + blk < K ? k0 + blk : K;
        for (std::size_t j = j0; j < j1; ++j)
          for (std::size_t k = k0; k < k1; ++k) scratch[k * N + j] = B[j * K + k];
      }
    }
    gemm_nn<T>(M, N, K, A, scratch.data(), C, accumulate);
    return;
  }
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc0 = T(0), acc1 = T(0);
      std::size_t k = 0;
      for (; k + 2 <= K; k += 2) {
        acc0 += a[k] * b[k];
        acc1 += a[k + 1] * b[k + 1];
      }
      if (k < K) acc0 += a[k] * b[k];
      const T dot = acc0 + acc1;
      c[j] = accumulate ? c[j] + dot : dot;
    }
  }
}

// C[K x N] (+)= A^T * B, with A stored [M x K], B stored [M x N].
// Rank-1 update per row of A/B; inner loop streams B and C rows.
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K,
             const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < K * N; ++i) C[i] = T(0);
  }
  for (std::size_t m = 0; m < M; ++m) {
    const T* a = A + m * K;
    const T* b = B + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T s = a[k];
      if (s == T(0)) continue;
      T* c = C + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += s * b[j];
    }
  }
}

}  // namespace jct
