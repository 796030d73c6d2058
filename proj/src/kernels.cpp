#include "gridpix/kernels.hpp"

#include <cstring>

namespace gridpix::kernels {

namespace {
constexpr int kNBlock = 512;  // columns of C kept hot per tile
}

// Each (row, column-block) tile of C is owned by one thread and its k-loop
// runs in a fixed order, so the result is identical for any thread count.
void gemm(int m, int n, int k, const float* a, const float* b, float* c) {
  const int nblocks = (n + kNBlock - 1) / kNBlock;
#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int nb = 0; nb < nblocks; ++nb) {
      const int n0 = nb * kNBlock;
      const int n1 = n0 + kNBlock < n ? n0 + kNBlock : n;
      float* __restrict crow = c + static_cast<std::size_t>(i) * n;
      const float* __restrict arow = a + static_cast<std::size_t>(i) * k;
      for (int j = n0; j < n1; ++j) crow[j] = 0.0f;
      for (int p = 0; p < k; ++p) {
        const float av = arow[p];
        const float* __restrict brow = b + static_cast<std::size_t>(p) * n;
        for (int j = n0; j < n1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_at(int m, int n, int k, const float* a, const float* b, float* c) {
  const int nblocks = (n + kNBlock - 1) / kNBlock;
#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int nb = 0; nb < nblocks; ++nb) {
      const int n0 = nb * kNBlock;
      const int n1 = n0 + kNBlock < n ? n0 + kNBlock : n;
      float* __restrict crow = c + static_cast<std::size_t>(i) * n;
      for (int j = n0; j < n1; ++j) crow[j] = 0.0f;
      for (int p = 0; p < k; ++p) {
        const float av = a[static_cast<std::size_t>(p) * m + i];
        const float* __restrict brow = b + static_cast<std::size_t>(p) * n;
        for (int j = n0; j < n1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_bt(int m, int n, int k, const float* a, const float* b, float* c) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const float* __restrict arow = a + static_cast<std::size_t>(i) * k;
    float* __restrict crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* __restrict brow = b + static_cast<std::size_t>(j) * k;
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

void gemm_naive(int m, int n, int k, const float* a, const float* b, float* c) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (int p = 0; p < k; ++p)
        acc += a[static_cast<std::size_t>(i) * k + p] *
               b[static_cast<std::size_t>(p) * n + j];
      c[static_cast<std::size_t>(i) * n + j] = acc;
    }
  }
}

void im2col(const float* x, int c, int h, int w, int kh, int kw, int stride,
            int pad, int dil, float* col) {
  const int oh = conv_out_extent(h, kh, stride, pad, dil);
  const int ow = conv_out_extent(w, kw, stride, pad, dil);
  const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int row = 0; row < c * kh * kw; ++row) {
    const int kx = row % kw;
    const int ky = (row / kw) % kh;
    const int ch = row / (kh * kw);
    float* __restrict out = col + static_cast<std::size_t>(row) * ncols;
    const float* __restrict src =
        x + static_cast<std::size_t>(ch) * h * w;
    std::size_t o = 0;
    for (int oy = 0; oy < oh; ++oy) {
      const int iy = oy * stride - pad + ky * dil;
      if (iy < 0 || iy >= h) {
        for (int ox = 0; ox < ow; ++ox) out[o++] = 0.0f;
        continue;
      }
      const float* __restrict srow = src + static_cast<std::size_t>(iy) * w;
      for (int ox = 0; ox < ow; ++ox) {
        const int ix = ox * stride - pad + kx * dil;
        out[o++] = (ix >= 0 && ix < w) ? srow[ix] : 0.0f;
      }
    }
  }
}

// Gather form: each input element sums the col entries that map onto it.
void col2im(const float* col, int c, int h, int w, int kh, int kw, int stride,
            int pad, int dil, float* x) {
  const int oh = conv_out_extent(h, kh, stride, pad, dil);
  const int ow = conv_out_extent(w, kw, stride, pad, dil);
  const std::size_t ncols = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    float* __restrict dst = x + static_cast<std::size_t>(ch) * h * w;
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        float acc = 0.0f;
        for (int ky = 0; ky < kh; ++ky) {
          const int ty = iy + pad - ky * dil;
          if (ty < 0 || ty % stride != 0) continue;
          const int oy = ty / stride;
          if (oy >= oh) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int tx = ix + pad - kx * dil;
            if (tx < 0 || tx % stride != 0) continue;
            const int ox = tx / stride;
            if (ox >= ow) continue;
            const std::size_t row =
                static_cast<std::size_t>(ch) * kh * kw + ky * kw + kx;
            acc += col[row * ncols + static_cast<std::size_t>(oy) * ow + ox];
          }
        }
        dst[static_cast<std::size_t>(iy) * w + ix] = acc;
      }
    }
  }
}

void conv2d_naive(const float* x, int n, int ci, int h, int w, const float* wgt,
                  int co, int kh, int kw, const float* bias, int stride,
                  int pad, int dil, float* y) {
  const int oh = conv_out_extent(h, kh, stride, pad, dil);
  const int ow = conv_out_extent(w, kw, stride, pad, dil);
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < co; ++oc) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          float acc = 0.0f;
          for (int ic = 0; ic < ci; ++ic) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride - pad + ky * dil;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride - pad + kx * dil;
                if (ix < 0 || ix >= w) continue;
                acc += x[((static_cast<std::size_t>(b) * ci + ic) * h + iy) * w + ix] *
                       wgt[((static_cast<std::size_t>(oc) * ci + ic) * kh + ky) * kw + kx];
              }
            }
          }
          if (bias) acc += bias[oc];
          y[((static_cast<std::size_t>(b) * co + oc) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

}  // namespace gridpix::kernels
