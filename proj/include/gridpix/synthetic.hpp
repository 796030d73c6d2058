#pragma once

#include <cstdint>
#include <vector>

#include "gridpix/rng.hpp"
#include "gridpix/segmentation.hpp"
#include "gridpix/tensor.hpp"

namespace gridpix {

// Voronoi mosaic: randomly placed sites (with a minimum separation so regions
// stay chunky), one flat well-separated color per region.
struct Mosaic {
  Tensor image;      // [H,W,3] in [0,1]
  LabelMap regions;  // ground-truth segment map
};

Mosaic voronoi_mosaic(Rng& rng, int h, int w, int min_regions = 8,
                      int max_regions = 15);

// One constant value per region, drawn uniformly from [lo, hi]. Shape [H,W,1].
Tensor piecewise_constant_map(const LabelMap& regions, Rng& rng, double lo,
                              double hi);

// Pixels whose 4-neighborhood crosses a region boundary.
std::vector<std::uint8_t> label_edge_mask(const LabelMap& regions);

// A soft association map built directly from the image: per-pixel affinity to
// each candidate cell falls off with color distance to the cell's block-mean
// color and spatial distance to the cell center. Stands in for a trained
// network in the sampling demo.
AssociationMap soft_assoc_from_image(const Tensor& image_hwc,
                                     const GridSpec& grid);

}  // namespace gridpix
