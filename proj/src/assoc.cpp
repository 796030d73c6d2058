#include "gridpix/assoc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace gridpix {

namespace {

void check_assoc_shapes(const AssociationMap& assoc) {
  if (assoc.probs.ndim() != 3 || assoc.probs.dim(2) != 9 ||
      assoc.probs.dim(0) != assoc.grid.image_h ||
      assoc.probs.dim(1) != assoc.grid.image_w)
    throw std::invalid_argument("association map: probs must be [H,W,9], got " +
                                shape_str(assoc.probs.shape));
}

void check_features(const Tensor& f, const GridSpec& grid) {
  if (f.ndim() != 3 || f.dim(0) != grid.image_h || f.dim(1) != grid.image_w)
    throw std::invalid_argument("features must be [H,W,C], got " +
                                shape_str(f.shape));
}

inline float probs_at(const Tensor& probs, int y, int x, int k, int w) {
  return probs.data[(static_cast<std::size_t>(y) * w + x) * 9 + k];
}

// Plain per-cell average of the owned pixels; the inert default for cells
// that receive no association mass.
void owned_average(const Tensor& signal, const GridSpec& grid, int ci, int cj,
                   float* out, int channels) {
  const int y0 = ci * grid.cell, y1 = std::min((ci + 1) * grid.cell, grid.image_h);
  const int x0 = cj * grid.cell, x1 = std::min((cj + 1) * grid.cell, grid.image_w);
  std::vector<double> acc(static_cast<std::size_t>(channels), 0.0);
  int count = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const float* src = signal.ptr() + (static_cast<std::size_t>(y) * grid.image_w + x) * channels;
      for (int c = 0; c < channels; ++c) acc[c] += src[c];
      ++count;
    }
  for (int c = 0; c < channels; ++c)
    out[c] = count > 0 ? static_cast<float>(acc[c] / count) : 0.0f;
}

}  // namespace

void validate(const AssociationMap& assoc, double tol) {
  check_assoc_shapes(assoc);
  const GridSpec& g = assoc.grid;
  for (int y = 0; y < g.image_h; ++y) {
    for (int x = 0; x < g.image_w; ++x) {
      const NeighborSet ns = neighborhood(g, x, y);
      double sum = 0.0;
      for (int k = 0; k < 9; ++k) {
        const float q = assoc.probs.at(y, x, k);
        if (!ns.valid[k]) {
          if (q != 0.0f)
            throw std::runtime_error("association map: off-grid channel not zero");
          continue;
        }
        if (q < -1e-7f || q > 1.0f + 1e-6f)
          throw std::runtime_error("association map: probability out of [0,1]");
        sum += q;
      }
      if (std::abs(sum - 1.0) > tol)
        throw std::runtime_error("association map: per-pixel sum differs from 1");
    }
  }
}

Tensor coordinate_map(int h, int w) {
  Tensor m({h, w, 2});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      m.at(y, x, 0) = static_cast<float>(x);
      m.at(y, x, 1) = static_cast<float>(y);
    }
  return m;
}

Tensor cell_weighted_mean(const Tensor& probs_hw9, const Tensor& signal_hwc,
                          const GridSpec& grid, Tensor* mass_out) {
  const int h = grid.image_h, w = grid.image_w;
  const int gh = grid.grid_h(), gw = grid.grid_w();
  const int channels = signal_hwc.dim(2);
  std::vector<double> wsum(static_cast<std::size_t>(gh) * gw * channels, 0.0);
  std::vector<double> mass(static_cast<std::size_t>(gh) * gw, 0.0);

  // pixel-indexed scatter (Eq. 1 in its written form), serial
  for (int y = 0; y < h; ++y) {
    const int oi = grid.owner_row(y);
    for (int x = 0; x < w; ++x) {
      const int oj = grid.owner_col(x);
      const float* qp = probs_hw9.ptr() + (static_cast<std::size_t>(y) * w + x) * 9;
      const float* fp = signal_hwc.ptr() + (static_cast<std::size_t>(y) * w + x) * channels;
      for (int k = 0; k < 9; ++k) {
        const int ci = oi + offset_row(k);
        const int cj = oj + offset_col(k);
        if (ci < 0 || ci >= gh || cj < 0 || cj >= gw) continue;
        const double q = qp[k];
        const std::size_t s = static_cast<std::size_t>(ci) * gw + cj;
        mass[s] += q;
        double* dst = wsum.data() + s * channels;
        for (int c = 0; c < channels; ++c) dst[c] += q * fp[c];
      }
    }
  }

  Tensor mean({gh, gw, channels});
  if (mass_out) *mass_out = Tensor({gh, gw});
  for (int ci = 0; ci < gh; ++ci) {
    for (int cj = 0; cj < gw; ++cj) {
      const std::size_t s = static_cast<std::size_t>(ci) * gw + cj;
      float* out = mean.ptr() + s * channels;
      if (mass_out) mass_out->data[s] = static_cast<float>(mass[s]);
      if (mass[s] < kDegenerateMass) {
        owned_average(signal_hwc, grid, ci, cj, out, channels);
      } else {
        for (int c = 0; c < channels; ++c)
          out[c] = static_cast<float>(wsum[s * channels + c] / mass[s]);
      }
    }
  }
  return mean;
}

CenterMap compute_centers(const AssociationMap& assoc, const Tensor& features) {
  check_assoc_shapes(assoc);
  check_features(features, assoc.grid);
  CenterMap cm;
  cm.property = cell_weighted_mean(assoc.probs, features, assoc.grid, &cm.mass);
  cm.location =
      cell_weighted_mean(assoc.probs, coordinate_map(assoc.grid.image_h, assoc.grid.image_w),
                         assoc.grid, nullptr);
  return cm;
}

CenterMap csp_centers(const AssociationMap& assoc, const Tensor& features,
                      int cell_size) {
  check_assoc_shapes(assoc);
  check_features(features, assoc.grid);
  if (cell_size != assoc.grid.cell)
    throw std::invalid_argument("csp_centers: cell size does not match the grid");
  const GridSpec& g = assoc.grid;
  const int h = g.image_h, w = g.image_w, S = g.cell;
  const int gh = g.grid_h(), gw = g.grid_w();
  const int channels = features.dim(2);
  const Tensor coords = coordinate_map(h, w);

  CenterMap cm;
  cm.property = Tensor({gh, gw, channels});
  cm.location = Tensor({gh, gw, 2});
  cm.mass = Tensor({gh, gw});

  // cell-indexed gather with an explicit 3S x 3S window; the kernel weights
  // are the window-normalized association entries pointing at this cell
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < gh; ++ci) {
    for (int cj = 0; cj < gw; ++cj) {
      const int y0 = std::max(0, (ci - 1) * S), y1 = std::min(h, (ci + 2) * S);
      const int x0 = std::max(0, (cj - 1) * S), x1 = std::min(w, (cj + 2) * S);
      double mass = 0.0;
      for (int y = y0; y < y1; ++y) {
        const int di = ci - y / S;
        for (int x = x0; x < x1; ++x) {
          const int dj = cj - x / S;
          const int k = (di + 1) * 3 + (dj + 1);
          mass += probs_at(assoc.probs, y, x, k, w);
        }
      }
      const std::size_t s = static_cast<std::size_t>(ci) * gw + cj;
      cm.mass.data[s] = static_cast<float>(mass);
      float* up = cm.property.ptr() + s * channels;
      float* lp = cm.location.ptr() + s * 2;
      if (mass < kDegenerateMass) {
        owned_average(features, g, ci, cj, up, channels);
        owned_average(coords, g, ci, cj, lp, 2);
        continue;
      }
      std::vector<double> acc(static_cast<std::size_t>(channels) + 2, 0.0);
      for (int y = y0; y < y1; ++y) {
        const int di = ci - y / S;
        for (int x = x0; x < x1; ++x) {
          const int dj = cj - x / S;
          const int k = (di + 1) * 3 + (dj + 1);
          const double qn = probs_at(assoc.probs, y, x, k, w) / mass;
          const float* fp = features.ptr() + (static_cast<std::size_t>(y) * w + x) * channels;
          for (int c = 0; c < channels; ++c) acc[c] += qn * fp[c];
          acc[channels] += qn * x;
          acc[channels + 1] += qn * y;
        }
      }
      for (int c = 0; c < channels; ++c) up[c] = static_cast<float>(acc[c]);
      lp[0] = static_cast<float>(acc[channels]);
      lp[1] = static_cast<float>(acc[channels + 1]);
    }
  }
  return cm;
}

Tensor cells_to_pixels(const Tensor& probs_hw9, const Tensor& values_hwc,
                       const GridSpec& grid) {
  const int h = grid.image_h, w = grid.image_w;
  const int gh = grid.grid_h(), gw = grid.grid_w();
  if (values_hwc.ndim() != 3 || values_hwc.dim(0) != gh || values_hwc.dim(1) != gw)
    throw std::invalid_argument("cells_to_pixels: values must be [h,w,C], got " +
                                shape_str(values_hwc.shape));
  const int channels = values_hwc.dim(2);
  Tensor out({h, w, channels});
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    const int oi = grid.owner_row(y);
    for (int x = 0; x < w; ++x) {
      const int oj = grid.owner_col(x);
      const float* qp = probs_hw9.ptr() + (static_cast<std::size_t>(y) * w + x) * 9;
      float* op = out.ptr() + (static_cast<std::size_t>(y) * w + x) * channels;
      for (int k = 0; k < 9; ++k) {
        const int ci = oi + offset_row(k);
        const int cj = oj + offset_col(k);
        if (ci < 0 || ci >= gh || cj < 0 || cj >= gw) continue;
        const float q = qp[k];
        const float* vp = values_hwc.ptr() + (static_cast<std::size_t>(ci) * gw + cj) * channels;
        for (int c = 0; c < channels; ++c) op[c] += q * vp[c];
      }
    }
  }
  return out;
}

std::pair<Tensor, Tensor> reconstruct(const AssociationMap& assoc,
                                      const CenterMap& centers) {
  check_assoc_shapes(assoc);
  return {cells_to_pixels(assoc.probs, centers.property, assoc.grid),
          cells_to_pixels(assoc.probs, centers.location, assoc.grid)};
}

namespace assoc_detail {

void cell_mean_backward(const Tensor& probs_hw9, const Tensor& signal_hwc,
                        const Tensor& mean_hwc, const Tensor& mass_hw,
                        const Tensor& d_mean, const GridSpec& grid, Tensor* dq,
                        Tensor* df) {
  const int h = grid.image_h, w = grid.image_w;
  const int gh = grid.grid_h(), gw = grid.grid_w();
  const int channels = signal_hwc.dim(2);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    const int oi = grid.owner_row(y);
    for (int x = 0; x < w; ++x) {
      const int oj = grid.owner_col(x);
      const std::size_t pix = static_cast<std::size_t>(y) * w + x;
      const float* qp = probs_hw9.ptr() + pix * 9;
      const float* fp = signal_hwc.ptr() + pix * channels;
      for (int k = 0; k < 9; ++k) {
        const int ci = oi + offset_row(k);
        const int cj = oj + offset_col(k);
        if (ci < 0 || ci >= gh || cj < 0 || cj >= gw) continue;
        const std::size_t s = static_cast<std::size_t>(ci) * gw + cj;
        const double mass = mass_hw.data[s];
        if (mass < kDegenerateMass) continue;
        const float* us = mean_hwc.ptr() + s * channels;
        const float* gs = d_mean.ptr() + s * channels;
        if (dq) {
          double acc = 0.0;
          for (int c = 0; c < channels; ++c)
            acc += static_cast<double>(gs[c]) * (fp[c] - us[c]) / mass;
          dq->data[pix * 9 + k] += static_cast<float>(acc);
        }
        if (df) {
          const double qn = qp[k] / mass;
          float* dst = df->ptr() + pix * channels;
          for (int c = 0; c < channels; ++c)
            dst[c] += static_cast<float>(qn * gs[c]);
        }
      }
    }
  }
}

void cells_to_pixels_backward(const Tensor& probs_hw9, const Tensor& values_hwc,
                              const Tensor& d_out, const GridSpec& grid,
                              Tensor* dq, Tensor* du) {
  const int h = grid.image_h, w = grid.image_w, S = grid.cell;
  const int gh = grid.grid_h(), gw = grid.grid_w();
  const int channels = values_hwc.dim(2);
  if (dq) {
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
      const int oi = grid.owner_row(y);
      for (int x = 0; x < w; ++x) {
        const int oj = grid.owner_col(x);
        const std::size_t pix = static_cast<std::size_t>(y) * w + x;
        const float* gp = d_out.ptr() + pix * channels;
        for (int k = 0; k < 9; ++k) {
          const int ci = oi + offset_row(k);
          const int cj = oj + offset_col(k);
          if (ci < 0 || ci >= gh || cj < 0 || cj >= gw) continue;
          const float* vp = values_hwc.ptr() + (static_cast<std::size_t>(ci) * gw + cj) * channels;
          double acc = 0.0;
          for (int c = 0; c < channels; ++c)
            acc += static_cast<double>(gp[c]) * vp[c];
          dq->data[pix * 9 + k] += static_cast<float>(acc);
        }
      }
    }
  }
  if (du) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < gh; ++ci) {
      for (int cj = 0; cj < gw; ++cj) {
        const int y0 = std::max(0, (ci - 1) * S), y1 = std::min(h, (ci + 2) * S);
        const int x0 = std::max(0, (cj - 1) * S), x1 = std::min(w, (cj + 2) * S);
        float* dst = du->ptr() + (static_cast<std::size_t>(ci) * gw + cj) * channels;
        for (int y = y0; y < y1; ++y) {
          const int di = ci - y / S;
          for (int x = x0; x < x1; ++x) {
            const int dj = cj - x / S;
            const int k = (di + 1) * 3 + (dj + 1);
            const std::size_t pix = static_cast<std::size_t>(y) * w + x;
            const float q = probs_hw9.data[pix * 9 + k];
            if (q == 0.0f) continue;
            const float* gp = d_out.ptr() + pix * channels;
            for (int c = 0; c < channels; ++c) dst[c] += q * gp[c];
          }
        }
      }
    }
  }
}

}  // namespace assoc_detail

}  // namespace gridpix
