#pragma once

#include <utility>

#include "gridpix/grid.hpp"
#include "gridpix/tensor.hpp"

namespace gridpix {

// Soft pixel-to-cell association map. probs is [H,W,9]; channel k holds the
// probability that the pixel belongs to the k-th cell of its neighborhood.
// Off-grid channels are exactly 0 and the valid channels sum to 1 per pixel.
struct AssociationMap {
  Tensor probs;
  GridSpec grid;
};

// Per-cell centers: the association-weighted mean of pixel properties and of
// pixel coordinates. mass is the total incoming weight of each cell; cells
// with mass below the degeneracy threshold carry the plain average over the
// pixels they own instead (and receive ~zero weight at reconstruction).
struct CenterMap {
  Tensor property;  // [h,w,C]
  Tensor location;  // [h,w,2] (x, y)
  Tensor mass;      // [h,w]
};

inline constexpr double kDegenerateMass = 1e-12;

// Throws unless the map satisfies its invariants (sum-to-one within tol,
// zeros on off-grid channels, probabilities in [0,1]).
void validate(const AssociationMap& assoc, double tol = 1e-6);

// Pixel-indexed scatter form of the center computation.
CenterMap compute_centers(const AssociationMap& assoc, const Tensor& features);

// Cell-indexed gather form: per-cell normalized weights over the 3S x 3S
// region reachable from each cell, then the windowed weighted sum. Agrees
// with compute_centers within 1e-6; parallel over cells.
CenterMap csp_centers(const AssociationMap& assoc, const Tensor& features,
                      int cell_size);

// Per-pixel convex combination of the 9 neighboring centers.
// Returns (features' [H,W,C], positions' [H,W,2]).
std::pair<Tensor, Tensor> reconstruct(const AssociationMap& assoc,
                                      const CenterMap& centers);

// Weighted mean of an arbitrary per-pixel signal into cells (the shared core
// of compute_centers/csp_centers); exposed for the autodiff ops and sampling.
Tensor cell_weighted_mean(const Tensor& probs_hw9, const Tensor& signal_hwc,
                          const GridSpec& grid, Tensor* mass_out);

// Convex combination of per-cell values back to pixels.
Tensor cells_to_pixels(const Tensor& probs_hw9, const Tensor& values_hwc,
                       const GridSpec& grid);

// [H,W,2] constant map of pixel coordinates (x, y).
Tensor coordinate_map(int h, int w);

namespace assoc_detail {

// Reverse-mode rules for cell_weighted_mean. d_mean is [h,w,C]; adds into
// dq ([H,W,9]) and df ([H,W,C]) when non-null. Degenerate cells contribute
// nothing.
void cell_mean_backward(const Tensor& probs_hw9, const Tensor& signal_hwc,
                        const Tensor& mean_hwc, const Tensor& mass_hw,
                        const Tensor& d_mean, const GridSpec& grid, Tensor* dq,
                        Tensor* df);

// Reverse-mode rules for cells_to_pixels. d_out is [H,W,C]; adds into dq and
// du ([h,w,C]) when non-null.
void cells_to_pixels_backward(const Tensor& probs_hw9, const Tensor& values_hwc,
                              const Tensor& d_out, const GridSpec& grid,
                              Tensor* dq, Tensor* du);

}  // namespace assoc_detail

}  // namespace gridpix
