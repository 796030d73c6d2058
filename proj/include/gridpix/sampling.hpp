#pragma once

#include <cstdint>
#include <vector>

#include "gridpix/assoc.hpp"
#include "gridpix/tensor.hpp"

namespace gridpix {

// Association-weighted downsampling: output cell (i,j) holds the property
// center of superpixel (i,j).
Tensor downsample(const AssociationMap& assoc, const Tensor& features_hwc);

// Association-weighted upsampling: per-pixel convex combination of the 9
// neighboring cell values.
Tensor upsample(const AssociationMap& assoc, const Tensor& low_res_hwc);

// Plain per-cell average over the grid blocks (the pooled-downsample
// baseline).
Tensor cell_block_mean(const Tensor& features_hwc, const GridSpec& grid);

// Half-pixel-center bilinear interpolation (align-corners=false); handles
// both directions.
Tensor bilinear_resize(const Tensor& src_hwc, int out_h, int out_w);

// Same convention, restricted to upsampling (target >= source dims).
Tensor bilinear_upsample(const Tensor& low_res_hwc, int out_h, int out_w);

// Mean absolute error restricted to the masked pixels (all channels).
double edge_preservation_score(const Tensor& full_res_gt_hwc,
                               const Tensor& reconstructed_hwc,
                               const std::vector<std::uint8_t>& edge_mask);

}  // namespace gridpix
