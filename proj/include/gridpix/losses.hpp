#pragma once

#include <array>

#include "gridpix/ops.hpp"

namespace gridpix {

enum class DistanceKind { L2, CrossEntropy };

enum class LossReduction {
  Sum,          // the literal per-pixel sum
  MeanPerPixel  // sum / (N*H*W); keeps m independent of crop size
};

struct LossConfig {
  double m = 0.003;  // compactness weight
  double lambda = 0.1;
  std::array<double, 3> alphas{0.5, 0.7, 1.0};
  double ce_eps = 1e-10;
  LossReduction reduction = LossReduction::MeanPerPixel;
};

// total = property + (m/S) * position, both reduced per cfg.reduction.
// property and position are the two reduced addends (position already
// carries the m/S weight) for logging.
struct LossTerms {
  ad::NodePtr total;
  ad::NodePtr property;
  ad::NodePtr position;
};

// q: [N,9,H,W] association node; features: [N,C,H,W] node. The center /
// reconstruction pipeline is built on the graph so gradients flow to the
// association logits (and to the features when they require grad).
LossTerms general_loss(ad::NodePtr q, ad::NodePtr features, const GridSpec& grid,
                       DistanceKind dist, const LossConfig& cfg);

// f = CIELAB color, dist = l2 norm. lab_hwc is [H,W,3] (single image).
LossTerms slic_loss(ad::NodePtr q, const Tensor& lab_hwc, const GridSpec& grid,
                    const LossConfig& cfg);

// f = one-hot labels [H,W,N], dist = cross-entropy with the eps guard.
LossTerms semantic_loss(ad::NodePtr q, const Tensor& onehot_hwn,
                        const GridSpec& grid, const LossConfig& cfg);

// Plain elementwise smooth-L1 (0.5 x^2 below |x|=1, |x|-0.5 above).
Tensor smooth_l1(const Tensor& x);
float smooth_l1(float x);

// Eq.-style joint objective: sum_s alpha_s * mean_valid(smooth_l1(pred_s-gt))
// + (lambda/N) * L_SLIC(Q), N = number of valid pixels.
// preds are [1,1,H,W] nodes; gt and valid_mask are [H,W].
ad::NodePtr joint_loss(const std::array<ad::NodePtr, 3>& disparity_preds,
                       const Tensor& gt_hw, const Tensor& valid_mask_hw,
                       ad::NodePtr q, const Tensor& lab_hwc, const GridSpec& grid,
                       const LossConfig& cfg);

}  // namespace gridpix
