#pragma once

#include <array>

#include "gridpix/tensor.hpp"

namespace gridpix {

// Regular seed grid over an H x W image with square cells of side S.
// A pixel p = (x, y) is owned by cell (floor(y/S), floor(x/S)); the last
// row/column of cells may be smaller when S does not divide H or W.
struct GridSpec {
  int image_h = 0;
  int image_w = 0;
  int cell = 0;

  GridSpec() = default;
  GridSpec(int h, int w, int s);

  int grid_h() const { return (image_h + cell - 1) / cell; }
  int grid_w() const { return (image_w + cell - 1) / cell; }
  int cells() const { return grid_h() * grid_w(); }
  int owner_row(int y) const { return y / cell; }
  int owner_col(int x) const { return x / cell; }
  int cell_index(int row, int col) const { return row * grid_w() + col; }
  bool in_image(int x, int y) const {
    return x >= 0 && x < image_w && y >= 0 && y < image_h;
  }
};

// The 9 candidate cells of a pixel, in fixed row-major offset order
// (di,dj) over {-1,0,1}^2: channel k = (di+1)*3 + (dj+1).
struct NeighborSet {
  std::array<int, 9> cell;    // flat cell index, -1 when off-grid
  std::array<bool, 9> valid;
  int valid_count = 0;
};

NeighborSet neighborhood(const GridSpec& grid, int x, int y);

// [9,H,W] mask, 1 where the pixel's k-th candidate cell exists.
Tensor validity_mask(const GridSpec& grid);

inline constexpr int offset_row(int k) { return k / 3 - 1; }
inline constexpr int offset_col(int k) { return k % 3 - 1; }

}  // namespace gridpix
