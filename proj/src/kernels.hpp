#pragma once

// Internal dense kernels. All matrices are row-major and contiguous.

#include <cstddef>

namespace dfl::kernels {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

// Single-image im2col: input [C,H,W] -> cols [C*kh*kw, oh*ow].
void im2col(const double* in, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* cols);
// Adjoint of im2col, accumulating into `in_grad`.
void col2im(const double* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* in_grad);

}  // namespace dfl::kernels
