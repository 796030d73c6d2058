#include "gridpix/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gridpix {

Tensor downsample(const AssociationMap& assoc, const Tensor& features_hwc) {
  return compute_centers(assoc, features_hwc).property;
}

Tensor upsample(const AssociationMap& assoc, const Tensor& low_res_hwc) {
  const int gh = assoc.grid.grid_h(), gw = assoc.grid.grid_w();
  if (low_res_hwc.ndim() != 3 || low_res_hwc.dim(0) != gh ||
      low_res_hwc.dim(1) != gw)
    throw std::invalid_argument("upsample: low-res map must be [h,w,C] = [" +
                                std::to_string(gh) + "," + std::to_string(gw) +
                                ",C], got " + shape_str(low_res_hwc.shape));
  return cells_to_pixels(assoc.probs, low_res_hwc, assoc.grid);
}

Tensor cell_block_mean(const Tensor& features_hwc, const GridSpec& grid) {
  if (features_hwc.ndim() != 3 || features_hwc.dim(0) != grid.image_h ||
      features_hwc.dim(1) != grid.image_w)
    throw std::invalid_argument("cell_block_mean: features must be [H,W,C]");
  const int gh = grid.grid_h(), gw = grid.grid_w(), c = features_hwc.dim(2);
  Tensor out({gh, gw, c});
  for (int ci = 0; ci < gh; ++ci) {
    const int y0 = ci * grid.cell;
    const int y1 = std::min(grid.image_h, y0 + grid.cell);
    for (int cj = 0; cj < gw; ++cj) {
      const int x0 = cj * grid.cell;
      const int x1 = std::min(grid.image_w, x0 + grid.cell);
      std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const float* src = features_hwc.ptr() +
                             (static_cast<std::size_t>(y) * grid.image_w + x) * c;
          for (int ch = 0; ch < c; ++ch) acc[ch] += src[ch];
        }
      const double inv = 1.0 / ((y1 - y0) * (x1 - x0));
      float* dst = out.ptr() + (static_cast<std::size_t>(ci) * gw + cj) * c;
      for (int ch = 0; ch < c; ++ch) dst[ch] = static_cast<float>(acc[ch] * inv);
    }
  }
  return out;
}

Tensor bilinear_resize(const Tensor& src_hwc, int out_h, int out_w) {
  if (src_hwc.ndim() != 3)
    throw std::invalid_argument("bilinear_resize: need [H,W,C]");
  const int h = src_hwc.dim(0), w = src_hwc.dim(1), c = src_hwc.dim(2);
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("bilinear_resize: empty target");
  Tensor out({out_h, out_w, c});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    const int ya = std::min(h - 1, std::max(0, y0));
    const int yb = std::min(h - 1, std::max(0, y0 + 1));
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      const int xa = std::min(w - 1, std::max(0, x0));
      const int xb = std::min(w - 1, std::max(0, x0 + 1));
      float* dst = out.ptr() + (static_cast<std::size_t>(y) * out_w + x) * c;
      const float* p00 = src_hwc.ptr() + (static_cast<std::size_t>(ya) * w + xa) * c;
      const float* p01 = src_hwc.ptr() + (static_cast<std::size_t>(ya) * w + xb) * c;
      const float* p10 = src_hwc.ptr() + (static_cast<std::size_t>(yb) * w + xa) * c;
      const float* p11 = src_hwc.ptr() + (static_cast<std::size_t>(yb) * w + xb) * c;
      for (int ch = 0; ch < c; ++ch) {
        const double top = p00[ch] + wx * (p01[ch] - p00[ch]);
        const double bot = p10[ch] + wx * (p11[ch] - p10[ch]);
        dst[ch] = static_cast<float>(top + wy * (bot - top));
      }
    }
  }
  return out;
}

Tensor bilinear_upsample(const Tensor& low_res_hwc, int out_h, int out_w) {
  if (out_h < low_res_hwc.dim(0) || out_w < low_res_hwc.dim(1))
    throw std::invalid_argument("bilinear_upsample: target smaller than source");
  return bilinear_resize(low_res_hwc, out_h, out_w);
}

double edge_preservation_score(const Tensor& full_res_gt_hwc,
                               const Tensor& reconstructed_hwc,
                               const std::vector<std::uint8_t>& edge_mask) {
  if (!same_shape(full_res_gt_hwc, reconstructed_hwc))
    throw std::invalid_argument("edge_preservation_score: shape mismatch");
  const int h = full_res_gt_hwc.dim(0), w = full_res_gt_hwc.dim(1);
  const int c = full_res_gt_hwc.dim(2);
  if (edge_mask.size() != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument("edge_preservation_score: mask size mismatch");
  double acc = 0.0;
  long count = 0;
  for (std::size_t p = 0; p < edge_mask.size(); ++p) {
    if (!edge_mask[p]) continue;
    for (int ch = 0; ch < c; ++ch)
      acc += std::fabs(static_cast<double>(full_res_gt_hwc.data[p * c + ch]) -
                       reconstructed_hwc.data[p * c + ch]);
    count += c;
  }
  if (count == 0)
    throw std::invalid_argument("edge_preservation_score: empty edge mask");
  return acc / static_cast<double>(count);
}

}  // namespace gridpix
