#pragma once

#include <cmath>
#include <vector>

#include "gridpix/assoc.hpp"
#include "gridpix/rng.hpp"
#include "gridpix/tensor.hpp"

namespace testutil {

using namespace gridpix;

inline Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Valid random association map: positive weights on valid channels,
// normalized per pixel, exact zeros elsewhere.
inline AssociationMap random_assoc(Rng& rng, int h, int w, int s) {
  GridSpec grid(h, w, s);
  AssociationMap assoc{Tensor({h, w, 9}), grid};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const NeighborSet ns = neighborhood(grid, x, y);
      double sum = 0.0;
      float* qp = assoc.probs.ptr() + (static_cast<std::size_t>(y) * w + x) * 9;
      for (int k = 0; k < 9; ++k) {
        if (!ns.valid[k]) continue;
        qp[k] = static_cast<float>(rng.uniform(0.02, 1.0));
        sum += qp[k];
      }
      for (int k = 0; k < 9; ++k)
        if (ns.valid[k]) qp[k] = static_cast<float>(qp[k] / sum);
    }
  return assoc;
}

// Probability 1 on the owning cell.
inline AssociationMap hard_owner_assoc(int h, int w, int s) {
  GridSpec grid(h, w, s);
  AssociationMap assoc{Tensor({h, w, 9}), grid};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) assoc.probs.at(y, x, 4) = 1.0f;  // (0,0) offset
  return assoc;
}

// Equal mass on every valid neighbor.
inline AssociationMap uniform_assoc(int h, int w, int s) {
  GridSpec grid(h, w, s);
  AssociationMap assoc{Tensor({h, w, 9}), grid};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const NeighborSet ns = neighborhood(grid, x, y);
      for (int k = 0; k < 9; ++k)
        if (ns.valid[k])
          assoc.probs.at(y, x, k) = 1.0f / static_cast<float>(ns.valid_count);
    }
  return assoc;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(a.data[i]) - b.data[i]));
  return worst;
}

}  // namespace testutil
