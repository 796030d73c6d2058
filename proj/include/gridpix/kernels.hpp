#pragma once

#include "gridpix/tensor.hpp"

namespace gridpix::kernels {

// Low-level compute kernels. The production paths (gemm/im2col/col2im) are
// OpenMP-parallel over independent output elements; the *_naive variants are
// the serial references the tests and the benchmark compare against.

// C[M,N] = A[M,K] * B[K,N]  (C overwritten; row-major)
void gemm(int m, int n, int k, const float* a, const float* b, float* c);

// C[M,N] = A^T[K,M] * B[K,N] with A given as [K,M] row-major.
void gemm_at(int m, int n, int k, const float* a, const float* b, float* c);

// C[M,N] = A[M,K] * B^T[N,K] with B given as [N,K] row-major.
void gemm_bt(int m, int n, int k, const float* a, const float* b, float* c);

// Serial reference for gemm.
void gemm_naive(int m, int n, int k, const float* a, const float* b, float* c);

inline int conv_out_extent(int in, int kernel, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (kernel - 1) - 1) / stride + 1;
}

// x: [C,H,W] -> col: [C*kh*kw, OH*OW], rows ordered (c, kh, kw).
void im2col(const float* x, int c, int h, int w, int kh, int kw, int stride,
            int pad, int dil, float* col);

// col: [C*kh*kw, OH*OW] -> x: [C,H,W], summing overlapping taps (gather form).
void col2im(const float* col, int c, int h, int w, int kh, int kw, int stride,
            int pad, int dil, float* x);

// Direct seven-loop convolution, serial. Reference for the im2col path.
// x: [N,Ci,H,W], wgt: [Co,Ci,kh,kw], bias: [Co] or nullptr, y: [N,Co,OH,OW].
void conv2d_naive(const float* x, int n, int ci, int h, int w, const float* wgt,
                  int co, int kh, int kw, const float* bias, int stride,
                  int pad, int dil, float* y);

}  // namespace gridpix::kernels
