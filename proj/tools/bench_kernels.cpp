// Times the production kernels against their serial references: im2col+GEMM
// convolution vs the direct seven-loop form, and the gather (CSP) center
// computation vs the pixel-indexed scatter form, at 1 thread and at the
// configured thread count.

#include <chrono>
#include <cstdio>
#include <vector>

#include "gridpix/assoc.hpp"
#include "gridpix/kernels.hpp"
#include "gridpix/ops.hpp"
#include "gridpix/parallel.hpp"
#include "gridpix/rng.hpp"

using namespace gridpix;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename F>
double time_best(F&& fn, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_s();
    fn();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

void bench_conv(int ci, int co, int hw, int k, int stride) {
  Rng rng(7);
  Tensor x({1, ci, hw, hw});
  Tensor w({co, ci, k, k});
  Tensor b({co});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
  const int pad = (k - 1) / 2;
  const int oh = kernels::conv_out_extent(hw, k, stride, pad, 1);
  Tensor y_naive({1, co, oh, oh});

  const double t_naive = time_best(
      [&] {
        kernels::conv2d_naive(x.ptr(), 1, ci, hw, hw, w.ptr(), co, k, k, b.ptr(),
                              stride, pad, 1, y_naive.ptr());
      },
      3);

  auto xn = ad::constant(x);
  auto wn = ad::constant(w);
  auto bn = ad::constant(b);
  const double t_gemm =
      time_best([&] { ad::conv2d(xn, wn, bn, stride, pad, 1); }, 5);

  const double flops = 2.0 * ci * co * k * k * static_cast<double>(oh) * oh;
  std::printf("conv %3dx%-3d %3d^2 k%d s%d | naive %8.3f ms | im2col+gemm %8.3f ms"
              " (%5.1fx, %6.2f GFLOP/s)\n",
              ci, co, hw, k, stride, t_naive * 1e3, t_gemm * 1e3,
              t_naive / t_gemm, flops / t_gemm / 1e9);
}

void bench_centers(int hw, int cell) {
  Rng rng(11);
  GridSpec grid(hw, hw, cell);
  Tensor probs({hw, hw, 9});
  Tensor feat({hw, hw, 3});
  for (auto& v : feat.data) v = static_cast<float>(rng.uniform(0, 1));
  for (int y = 0; y < hw; ++y)
    for (int x = 0; x < hw; ++x) {
      const auto ns = neighborhood(grid, x, y);
      double sum = 0.0;
      float* qp = probs.ptr() + (static_cast<std::size_t>(y) * hw + x) * 9;
      for (int k = 0; k < 9; ++k)
        if (ns.valid[k]) {
          qp[k] = static_cast<float>(rng.uniform(0.01, 1));
          sum += qp[k];
        }
      for (int k = 0; k < 9; ++k) qp[k] = static_cast<float>(qp[k] / sum);
    }
  AssociationMap assoc{probs, grid};

  const double t_scatter = time_best([&] { compute_centers(assoc, feat); }, 5);
  const double t_gather = time_best([&] { csp_centers(assoc, feat, cell); }, 5);
  std::printf("centers %4d^2 S=%-2d       | scatter %7.3f ms | gather      %8.3f ms"
              " (%5.1fx)\n",
              hw, cell, t_scatter * 1e3, t_gather * 1e3, t_scatter / t_gather);
}

}  // namespace

int main() {
  par::init_from_env();
  std::printf("threads: %d\n", par::threads());
  bench_conv(16, 16, 208, 3, 1);
  bench_conv(16, 32, 208, 3, 2);
  bench_conv(64, 64, 52, 3, 1);
  bench_conv(256, 256, 13, 3, 1);
  bench_centers(208, 16);
  bench_centers(512, 16);
  return 0;
}
