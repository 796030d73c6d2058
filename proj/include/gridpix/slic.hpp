#pragma once

#include <vector>

#include "gridpix/segmentation.hpp"
#include "gridpix/tensor.hpp"

namespace gridpix {

struct LabImage {
  Tensor values;    // [H,W,3]: L in [0,100], a/b roughly [-128,127]
  int clamped = 0;  // out-of-range sRGB inputs clamped during conversion
};

// sRGB in [0,1] -> linear RGB -> XYZ (D65) -> CIELAB.
LabImage rgb_to_lab(const Tensor& rgb_hwc);
// Inverse conversion, clamped to [0,1].
Tensor lab_to_rgb(const Tensor& lab_hwc);

struct SlicResult {
  LabelMap labels;      // connectivity enforced
  LabelMap raw_labels;  // before enforcement (label ids = seed ids)
  int n_seeds = 0;
  std::vector<double> cost_history;  // summed D^2 after each iteration
};

// Classical SLIC: K-means over (L,a,b,x,y) with seeds on a regular grid
// (perturbed to the lowest-gradient position in a 3x3 neighborhood) and
// assignment restricted to 2S x 2S windows, D = sqrt(d_lab^2 + (m/S)^2 d_xy^2).
SlicResult slic(const LabImage& lab, int n_superpixels, double compactness = 10.0,
                int iterations = 10);

}  // namespace gridpix
