#include "gridpix/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "gridpix/assoc.hpp"

namespace gridpix {

namespace {

// coordinate map replicated across the batch, as [N,2,H,W]
Tensor coords_nchw(int n, int h, int w) {
  Tensor out({n, 2, h, w});
  const Tensor chw = chw_from_hwc(coordinate_map(h, w));
  for (int b = 0; b < n; ++b)
    std::copy(chw.data.begin(), chw.data.end(),
              out.data.begin() + static_cast<std::size_t>(b) * chw.numel());
  return out;
}

}  // namespace

LossTerms general_loss(ad::NodePtr q, ad::NodePtr features, const GridSpec& grid,
                       DistanceKind dist, const LossConfig& cfg) {
  if (cfg.m < 0.0) throw std::invalid_argument("loss: m must be >= 0");
  const Tensor& qv = q->value;
  if (qv.ndim() != 4 || qv.dim(1) != 9)
    throw std::invalid_argument("general_loss: q must be [N,9,H,W]");
  const int n = qv.dim(0), h = qv.dim(2), w = qv.dim(3);

  ad::NodePtr u = ad::weighted_cell_mean(q, features, grid);
  ad::NodePtr recon = ad::reconstruct_cells(q, u, grid);

  ad::NodePtr dist_map;
  switch (dist) {
    case DistanceKind::L2:
      dist_map = ad::l2norm_channels(ad::sub(features, recon));
      break;
    case DistanceKind::CrossEntropy:
      dist_map = ad::cross_entropy_channels(recon, features->value,
                                            static_cast<float>(cfg.ce_eps));
      break;
    default:
      throw std::invalid_argument("general_loss: unknown distance kind");
  }

  ad::NodePtr coords = ad::constant(coords_nchw(n, h, w));
  ad::NodePtr l = ad::weighted_cell_mean(q, coords, grid);
  ad::NodePtr pos_recon = ad::reconstruct_cells(q, l, grid);
  ad::NodePtr pos_map = ad::l2norm_channels(ad::sub(coords, pos_recon));

  const double red = cfg.reduction == LossReduction::MeanPerPixel
                         ? 1.0 / (static_cast<double>(n) * h * w)
                         : 1.0;
  LossTerms terms;
  terms.property = ad::scale(ad::sum_all(dist_map), red);
  terms.position =
      ad::scale(ad::sum_all(pos_map), red * cfg.m / static_cast<double>(grid.cell));
  terms.total = ad::add(terms.property, terms.position);
  return terms;
}

LossTerms slic_loss(ad::NodePtr q, const Tensor& lab_hwc, const GridSpec& grid,
                    const LossConfig& cfg) {
  if (lab_hwc.ndim() != 3 || lab_hwc.dim(2) != 3)
    throw std::invalid_argument("slic_loss: lab image must be [H,W,3]");
  Tensor f({1, 3, lab_hwc.dim(0), lab_hwc.dim(1)});
  const Tensor chw = chw_from_hwc(lab_hwc);
  std::copy(chw.data.begin(), chw.data.end(), f.data.begin());
  return general_loss(std::move(q), ad::constant(std::move(f)), grid,
                      DistanceKind::L2, cfg);
}

LossTerms semantic_loss(ad::NodePtr q, const Tensor& onehot_hwn,
                        const GridSpec& grid, const LossConfig& cfg) {
  if (onehot_hwn.ndim() != 3)
    throw std::invalid_argument("semantic_loss: one-hot map must be [H,W,N]");
  const int h = onehot_hwn.dim(0), w = onehot_hwn.dim(1), nc = onehot_hwn.dim(2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int c = 0; c < nc; ++c) s += onehot_hwn.at(y, x, c);
      if (std::abs(s - 1.0) > 1e-5)
        throw std::invalid_argument("semantic_loss: one-hot rows must sum to 1");
    }
  Tensor f({1, nc, h, w});
  const Tensor chw = chw_from_hwc(onehot_hwn);
  std::copy(chw.data.begin(), chw.data.end(), f.data.begin());
  return general_loss(std::move(q), ad::constant(std::move(f)), grid,
                      DistanceKind::CrossEntropy, cfg);
}

float smooth_l1(float x) {
  const float a = std::fabs(x);
  return a < 1.0f ? 0.5f * x * x : a - 0.5f;
}

Tensor smooth_l1(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = smooth_l1(x.data[i]);
  return out;
}

ad::NodePtr joint_loss(const std::array<ad::NodePtr, 3>& disparity_preds,
                       const Tensor& gt_hw, const Tensor& valid_mask_hw,
                       ad::NodePtr q, const Tensor& lab_hwc, const GridSpec& grid,
                       const LossConfig& cfg) {
  if (gt_hw.ndim() != 2 || !same_shape(gt_hw, valid_mask_hw))
    throw std::invalid_argument("joint_loss: gt and mask must be matching [H,W]");
  const int h = gt_hw.dim(0), w = gt_hw.dim(1);
  long n_valid = 0;
  for (float v : valid_mask_hw.data)
    if (v != 0.0f) ++n_valid;
  if (n_valid == 0) throw std::invalid_argument("joint_loss: empty valid mask");

  Tensor gt4({1, 1, h, w}, 0.0f);
  Tensor mask4({1, 1, h, w}, 0.0f);
  std::copy(gt_hw.data.begin(), gt_hw.data.end(), gt4.data.begin());
  std::copy(valid_mask_hw.data.begin(), valid_mask_hw.data.end(),
            mask4.data.begin());
  ad::NodePtr gt_node = ad::constant(std::move(gt4));
  ad::NodePtr mask_node = ad::constant(std::move(mask4));

  ad::NodePtr total;
  for (int s = 0; s < 3; ++s) {
    if (!disparity_preds[s] ||
        !same_shape(disparity_preds[s]->value, gt_node->value))
      throw std::invalid_argument("joint_loss: stage predictions must be [1,1,H,W]");
    ad::NodePtr err = ad::smooth_l1(ad::sub(disparity_preds[s], gt_node));
    ad::NodePtr masked = ad::mul(err, mask_node);
    ad::NodePtr stage = ad::scale(ad::sum_all(masked),
                                  cfg.alphas[s] / static_cast<double>(n_valid));
    total = total ? ad::add(total, stage) : stage;
  }

  LossConfig slic_cfg = cfg;
  slic_cfg.reduction = LossReduction::Sum;  // Eq-form sum; the 1/N is explicit
  LossTerms slic = slic_loss(std::move(q), lab_hwc, grid, slic_cfg);
  total = ad::add(total, ad::scale(slic.total,
                                   cfg.lambda / static_cast<double>(n_valid)));
  return total;
}

}  // namespace gridpix
