#pragma once

#include <cstddef>
#include <vector>

// Plain row-major GEMM loops. Inner loops run over contiguous memory so the
// compiler can vectorize them; summation order is fixed, which keeps results
// bit-reproducible run to run.

namespace cplae::gemm {

/// C[M×N] += A[M×K] · B[K×N]
template <typename T>
void nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t p = 0; p < K; ++p) {
      const T av = a[p];
      const T* b = B + p * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

/// C[M×N] += Aᵀ · B with A stored [K×M], B stored [K×N]
template <typename T>
void tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t p = 0; p < K; ++p) {
    const T* a = A + p * M;
    const T* b = B + p * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T av = a[i];
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

/// C[M×N] += A · Bᵀ with A stored [M×K], B stored [N×K]
template <typename T>
void nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  std::vector<T> bt(K * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t p = 0; p < K; ++p) bt[p * N + j] = B[j * K + p];
  nn(M, N, K, A, bt.data(), C);
}

}  // namespace cplae::gemm
