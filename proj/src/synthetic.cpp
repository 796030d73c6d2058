#include "gridpix/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "gridpix/sampling.hpp"

namespace gridpix {

Mosaic voronoi_mosaic(Rng& rng, int h, int w, int min_regions, int max_regions) {
  const int n = rng.uniform_int(min_regions, max_regions);
  const double min_sep = 0.55 * std::sqrt(static_cast<double>(h) * w / n);

  std::vector<double> sx, sy;
  int attempts = 0;
  while (static_cast<int>(sx.size()) < n && attempts < 10000) {
    ++attempts;
    const double x = rng.uniform(0.0, w);
    const double y = rng.uniform(0.0, h);
    bool ok = true;
    for (std::size_t i = 0; i < sx.size(); ++i) {
      const double dx = x - sx[i], dy = y - sy[i];
      if (dx * dx + dy * dy < min_sep * min_sep) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    sx.push_back(x);
    sy.push_back(y);
  }
  const int k = static_cast<int>(sx.size());

  // colors drawn until pairwise-separated in RGB
  std::vector<float> colors(static_cast<std::size_t>(k) * 3);
  for (int i = 0; i < k; ++i) {
    for (int tries = 0; tries < 200; ++tries) {
      float c[3];
      for (int ch = 0; ch < 3; ++ch)
        c[ch] = static_cast<float>(rng.uniform(0.05, 0.95));
      bool ok = true;
      for (int j = 0; j < i && ok; ++j) {
        double d2 = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          const double d = c[ch] - colors[static_cast<std::size_t>(j) * 3 + ch];
          d2 += d * d;
        }
        if (d2 < 0.05) ok = false;
      }
      if (ok || tries == 199) {
        for (int ch = 0; ch < 3; ++ch)
          colors[static_cast<std::size_t>(i) * 3 + ch] = c[ch];
        break;
      }
    }
  }

  Mosaic m;
  m.image = Tensor({h, w, 3});
  m.regions = LabelMap(h, w);
  m.regions.n_labels = k;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_d = 1e300;
      for (int i = 0; i < k; ++i) {
        const double dx = x - sx[i], dy = y - sy[i];
        const double d = dx * dx + dy * dy;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      m.regions.at(y, x) = best;
      float* px = m.image.ptr() + (static_cast<std::size_t>(y) * w + x) * 3;
      for (int ch = 0; ch < 3; ++ch)
        px[ch] = colors[static_cast<std::size_t>(best) * 3 + ch];
    }
  }
  return m;
}

Tensor piecewise_constant_map(const LabelMap& regions, Rng& rng, double lo,
                              double hi) {
  std::vector<float> values(static_cast<std::size_t>(regions.n_labels));
  for (auto& v : values) v = static_cast<float>(rng.uniform(lo, hi));
  Tensor out({regions.h, regions.w, 1});
  for (std::size_t i = 0; i < regions.labels.size(); ++i)
    out.data[i] = values[static_cast<std::size_t>(regions.labels[i])];
  return out;
}

AssociationMap soft_assoc_from_image(const Tensor& image_hwc,
                                     const GridSpec& grid) {
  const int h = grid.image_h, w = grid.image_w;
  const int gh = grid.grid_h(), gw = grid.grid_w();
  const int c = image_hwc.dim(2);
  const Tensor means = cell_block_mean(image_hwc, grid);
  const double sigma_c2 = 2.0 * 0.08 * 0.08;
  const double sigma_x2 = 2.0 * static_cast<double>(grid.cell) * grid.cell;

  AssociationMap assoc{Tensor({h, w, 9}), grid};
  for (int y = 0; y < h; ++y) {
    const int oi = grid.owner_row(y);
    for (int x = 0; x < w; ++x) {
      const int oj = grid.owner_col(x);
      const float* px = image_hwc.ptr() + (static_cast<std::size_t>(y) * w + x) * c;
      double logit[9];
      double mx = -1e300;
      for (int k = 0; k < 9; ++k) {
        const int ci = oi + offset_row(k);
        const int cj = oj + offset_col(k);
        if (ci < 0 || ci >= gh || cj < 0 || cj >= gw) {
          logit[k] = -1e300;
          continue;
        }
        const float* mu = means.ptr() + (static_cast<std::size_t>(ci) * gw + cj) * c;
        double dc = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double d = px[ch] - mu[ch];
          dc += d * d;
        }
        const double cx = std::min((cj + 1.0) * grid.cell, static_cast<double>(w));
        const double cy = std::min((ci + 1.0) * grid.cell, static_cast<double>(h));
        const double dx = x - (cj * grid.cell + cx) / 2.0 + 0.5;
        const double dy = y - (ci * grid.cell + cy) / 2.0 + 0.5;
        logit[k] = -(dc / sigma_c2 + (dx * dx + dy * dy) / sigma_x2);
        mx = std::max(mx, logit[k]);
      }
      double sum = 0.0;
      float* qp = assoc.probs.ptr() + (static_cast<std::size_t>(y) * w + x) * 9;
      for (int k = 0; k < 9; ++k) {
        const double e = logit[k] <= -1e299 ? 0.0 : std::exp(logit[k] - mx);
        qp[k] = static_cast<float>(e);
        sum += e;
      }
      for (int k = 0; k < 9; ++k) qp[k] = static_cast<float>(qp[k] / sum);
    }
  }
  return assoc;
}

std::vector<std::uint8_t> label_edge_mask(const LabelMap& regions) {
  const int h = regions.h, w = regions.w;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::int32_t lab = regions.at(y, x);
      const bool edge = (x > 0 && regions.at(y, x - 1) != lab) ||
                        (x + 1 < w && regions.at(y, x + 1) != lab) ||
                        (y > 0 && regions.at(y - 1, x) != lab) ||
                        (y + 1 < h && regions.at(y + 1, x) != lab);
      if (edge) mask[static_cast<std::size_t>(y) * w + x] = 1;
    }
  return mask;
}

}  // namespace gridpix
