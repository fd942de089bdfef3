#pragma once

#include "triage/nn/tensor.hpp"

#include <span>

namespace triage::nn {

// Row-major GEMMs with explicit leading dimensions. All accumulate into C.
//   gemm_nn: C[MxN] += A[MxK]   * B[KxN]
//   gemm_tn: C[MxN] += A[KxM]^T * B[KxN]
//   gemm_nt: C[MxN] += A[MxK]   * B[NxK]^T
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc);
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc);
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc);

// Stride-1 "same" convolution (zero padding of k/2 per side, odd kernels).
// weight is (Co, Ci, kd, kh, kw), bias is (Co). Output has x's spatial shape.
template <typename T>
void conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int out_channels,
                  Kernel3 k, Tensor<T>& y);

// grad_x may be null when the input gradient is not needed. grad_w and
// grad_b are accumulated.
template <typename T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& grad_y, Kernel3 k,
                   Tensor<T>* grad_x, std::span<T> grad_w, std::span<T> grad_b);

// Serial direct-loop versions of the same contracts; kept for tests and the benchmark.
namespace reference {

template <typename T>
void conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int out_channels,
                  Kernel3 k, Tensor<T>& y);
template <typename T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& grad_y, Kernel3 k,
                   Tensor<T>* grad_x, std::span<T> grad_w, std::span<T> grad_b);
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc);

} // namespace reference

} // namespace triage::nn
