#include "gridpix/grid.hpp"

#include <stdexcept>

namespace gridpix {

GridSpec::GridSpec(int h, int w, int s) : image_h(h), image_w(w), cell(s) {
  if (h < 1 || w < 1) throw std::invalid_argument("GridSpec: empty image");
  if (s < 2) throw std::invalid_argument("GridSpec: cell size must be >= 2");
}

NeighborSet neighborhood(const GridSpec& grid, int x, int y) {
  if (!grid.in_image(x, y))
    throw std::out_of_range("neighborhood: pixel outside image");
  NeighborSet ns;
  const int oi = grid.owner_row(y);
  const int oj = grid.owner_col(x);
  const int gh = grid.grid_h();
  const int gw = grid.grid_w();
  for (int k = 0; k < 9; ++k) {
    const int ci = oi + offset_row(k);
    const int cj = oj + offset_col(k);
    const bool ok = ci >= 0 && ci < gh && cj >= 0 && cj < gw;
    ns.valid[k] = ok;
    ns.cell[k] = ok ? ci * gw + cj : -1;
    if (ok) ++ns.valid_count;
  }
  return ns;
}

Tensor validity_mask(const GridSpec& grid) {
  const int h = grid.image_h, w = grid.image_w;
  Tensor mask({9, h, w});
  const int gh = grid.grid_h();
  const int gw = grid.grid_w();
  for (int k = 0; k < 9; ++k) {
    const int di = offset_row(k), dj = offset_col(k);
    for (int y = 0; y < h; ++y) {
      const int ci = grid.owner_row(y) + di;
      const bool row_ok = ci >= 0 && ci < gh;
      float* dst = mask.ptr() + (static_cast<std::size_t>(k) * h + y) * w;
      for (int x = 0; x < w; ++x) {
        const int cj = grid.owner_col(x) + dj;
        dst[x] = (row_ok && cj >= 0 && cj < gw) ? 1.0f : 0.0f;
      }
    }
  }
  return mask;
}

}  // namespace gridpix
