#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gridpix/assoc.hpp"
#include "gridpix/tensor.hpp"

namespace gridpix {

struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<std::int32_t> labels;
  int n_labels = 0;

  LabelMap() = default;
  LabelMap(int hh, int ww) : h(hh), w(ww), labels(static_cast<std::size_t>(hh) * ww, 0) {}

  std::int32_t at(int y, int x) const {
    return labels[static_cast<std::size_t>(y) * w + x];
  }
  std::int32_t& at(int y, int x) {
    return labels[static_cast<std::size_t>(y) * w + x];
  }
};

// Argmax assignment: each pixel takes the flat index of its most probable
// candidate cell; ties break to the lowest channel index.
LabelMap hard_assign(const AssociationMap& assoc);

// Renumbers labels to 0..n-1 in order of first appearance (raster order).
LabelMap compact_labels(const LabelMap& in);

// Splits every label into its 4-connected components, then merges any
// component smaller than min_size_fraction * nominal_cell_area into the
// neighboring component sharing the longest boundary (ties to the smaller
// component id). Output labels are compacted.
LabelMap enforce_connectivity(const LabelMap& in, double min_size_fraction,
                              double nominal_cell_area);

// Recolors pixels whose 4-neighborhood contains a different label.
Tensor overlay_boundaries(const Tensor& image_hwc, const LabelMap& labels,
                          std::array<float, 3> color = {1.0f, 0.0f, 0.0f});

}  // namespace gridpix
