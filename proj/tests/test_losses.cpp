#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gridpix/gradcheck.hpp"
#include "gridpix/losses.hpp"
#include "test_util.hpp"

using namespace gridpix;
using testutil::hard_owner_assoc;
using testutil::random_assoc;
using testutil::random_tensor;

namespace {

// Fully independent double-precision evaluation of the two-term objective:
// centers by direct scatter, reconstruction by the 9-term sum, then
// sum_p dist + (m/S) sum_p |p - p'|.
struct OracleTerms {
  double property = 0.0;
  double position = 0.0;
};

OracleTerms loss_oracle(const AssociationMap& assoc, const Tensor& f_hwc,
                        bool cross_entropy, double m, double eps = 1e-10) {
  const GridSpec& g = assoc.grid;
  const int h = g.image_h, w = g.image_w, c = f_hwc.dim(2);
  const int gh = g.grid_h(), gw = g.grid_w();
  std::vector<double> num(static_cast<std::size_t>(gh) * gw * (c + 2), 0.0);
  std::vector<double> mass(static_cast<std::size_t>(gh) * gw, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const NeighborSet ns = neighborhood(g, x, y);
      for (int k = 0; k < 9; ++k) {
        if (!ns.valid[k]) continue;
        const double q = assoc.probs.at(y, x, k);
        const std::size_t s = ns.cell[k];
        mass[s] += q;
        for (int ch = 0; ch < c; ++ch)
          num[s * (c + 2) + ch] += q * f_hwc.at(y, x, ch);
        num[s * (c + 2) + c] += q * x;
        num[s * (c + 2) + c + 1] += q * y;
      }
    }
  OracleTerms out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const NeighborSet ns = neighborhood(g, x, y);
      std::vector<double> rec(c + 2, 0.0);
      for (int k = 0; k < 9; ++k) {
        if (!ns.valid[k]) continue;
        const double q = assoc.probs.at(y, x, k);
        const std::size_t s = ns.cell[k];
        for (int j = 0; j < c + 2; ++j)
          rec[j] += q * num[s * (c + 2) + j] / mass[s];
      }
      if (cross_entropy) {
        for (int ch = 0; ch < c; ++ch)
          if (f_hwc.at(y, x, ch) != 0.0f)
            out.property -= f_hwc.at(y, x, ch) * std::log(rec[ch] + eps);
      } else {
        double d2 = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const double d = f_hwc.at(y, x, ch) - rec[ch];
          d2 += d * d;
        }
        out.property += std::sqrt(d2);
      }
      const double dx = x - rec[c], dy = y - rec[c + 1];
      out.position += std::sqrt(dx * dx + dy * dy);
    }
  out.position *= m / g.cell;
  return out;
}

ad::NodePtr q_node_from(const AssociationMap& assoc) {
  const int h = assoc.grid.image_h, w = assoc.grid.image_w;
  Tensor q({1, 9, h, w});
  const Tensor chw = chw_from_hwc(assoc.probs);
  std::copy(chw.data.begin(), chw.data.end(), q.data.begin());
  return ad::constant(std::move(q));
}

ad::NodePtr f_node_from(const Tensor& f_hwc) {
  Tensor f({1, f_hwc.dim(2), f_hwc.dim(0), f_hwc.dim(1)});
  const Tensor chw = chw_from_hwc(f_hwc);
  std::copy(chw.data.begin(), chw.data.end(), f.data.begin());
  return ad::constant(std::move(f));
}

}  // namespace

TEST_CASE("general loss: hard owner Q on a constant image leaves only the position term") {
  AssociationMap assoc = hard_owner_assoc(4, 4, 2);
  Tensor f({4, 4, 3}, 0.5f);
  LossConfig cfg;
  cfg.m = 0.2;
  cfg.reduction = LossReduction::Sum;
  const LossTerms t = general_loss(q_node_from(assoc), f_node_from(f), assoc.grid,
                                   DistanceKind::L2, cfg);
  CHECK(t.property->value.data[0] == doctest::Approx(0.0).epsilon(1e-6));
  // every pixel sits sqrt(0.5) away from its 2x2 block centroid
  const double expect = (0.2 / 2.0) * 16.0 * std::sqrt(0.5);
  CHECK(t.position->value.data[0] == doctest::Approx(expect).epsilon(1e-5));
  CHECK(t.total->value.data[0] ==
        doctest::Approx(t.property->value.data[0] + t.position->value.data[0]));
}

TEST_CASE("general loss: m = 0 removes the position term") {
  Rng rng(1);
  AssociationMap assoc = random_assoc(rng, 6, 6, 2);
  Tensor f = random_tensor(rng, {6, 6, 3});
  LossConfig cfg;
  cfg.m = 0.0;
  cfg.reduction = LossReduction::Sum;
  const LossTerms t = general_loss(q_node_from(assoc), f_node_from(f), assoc.grid,
                                   DistanceKind::L2, cfg);
  CHECK(t.position->value.data[0] == 0.0f);
  CHECK(t.total->value.data[0] == t.property->value.data[0]);
}

TEST_CASE("general loss matches the independent oracle on random input") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    AssociationMap assoc = random_assoc(rng, 6, 6, 2);
    Tensor f = random_tensor(rng, {6, 6, 3}, -2, 2);
    LossConfig cfg;
    cfg.m = 0.7;
    cfg.reduction = LossReduction::Sum;
    const LossTerms t = general_loss(q_node_from(assoc), f_node_from(f),
                                     assoc.grid, DistanceKind::L2, cfg);
    const OracleTerms ref = loss_oracle(assoc, f, false, cfg.m);
    CHECK(t.property->value.data[0] == doctest::Approx(ref.property).epsilon(1e-5));
    CHECK(t.position->value.data[0] == doctest::Approx(ref.position).epsilon(1e-5));
  }
}

TEST_CASE("general loss rejects an unknown distance kind") {
  Rng rng(3);
  AssociationMap assoc = random_assoc(rng, 4, 4, 2);
  Tensor f = random_tensor(rng, {4, 4, 1});
  CHECK_THROWS_AS(general_loss(q_node_from(assoc), f_node_from(f), assoc.grid,
                               static_cast<DistanceKind>(99), LossConfig{}),
                  std::invalid_argument);
}

TEST_CASE("loss gradients w.r.t. association logits pass finite differences") {
  Rng rng(4);
  GridSpec grid(6, 6, 2);
  auto logits = ad::param(random_tensor(rng, {1, 9, 6, 6}), "logits");
  const Tensor mask = validity_mask(grid);
  Tensor f = random_tensor(rng, {6, 6, 3}, 0, 50);
  LossConfig cfg;
  cfg.m = 0.5;
  auto build = [&] {
    auto q = ad::masked_softmax_channels(logits, mask);
    return slic_loss(q, f, grid, cfg).total;
  };
  CHECK(fd_max_rel_err(build, {logits}, 20, rng, 1e-3) < 1e-3);
}

TEST_CASE("slic loss: flat gray image has zero color term") {
  AssociationMap assoc = hard_owner_assoc(4, 4, 2);
  Tensor lab({4, 4, 3});
  for (int p = 0; p < 16; ++p) {
    lab.data[3 * p] = 53.39f;
    lab.data[3 * p + 1] = 0.0f;
    lab.data[3 * p + 2] = 0.0f;
  }
  LossConfig cfg;
  cfg.m = 30.0;  // stereo-training weight accepted verbatim
  const LossTerms t = slic_loss(q_node_from(assoc), lab, assoc.grid, cfg);
  CHECK(t.property->value.data[0] == doctest::Approx(0.0).epsilon(1e-6));
  LossConfig seg_cfg;
  seg_cfg.m = 0.003;  // segmentation-training weight accepted verbatim
  CHECK_NOTHROW(slic_loss(q_node_from(assoc), lab, assoc.grid, seg_cfg));
}

TEST_CASE("slic loss: cell-aligned two-tone image has zero color term") {
  AssociationMap assoc = hard_owner_assoc(4, 4, 2);
  Tensor lab({4, 4, 3});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) lab.at(y, x, 0) = x < 2 ? 0.0f : 100.0f;
  LossConfig cfg;
  cfg.m = 1.0;
  cfg.reduction = LossReduction::Sum;
  const LossTerms t = slic_loss(q_node_from(assoc), lab, assoc.grid, cfg);
  CHECK(t.property->value.data[0] == doctest::Approx(0.0).epsilon(1e-6));
  const OracleTerms ref = loss_oracle(assoc, lab, false, cfg.m);
  CHECK(t.position->value.data[0] == doctest::Approx(ref.position).epsilon(1e-5));
}

TEST_CASE("slic loss depends only on geometry and Q (flip invariance)") {
  Rng rng(5);
  AssociationMap assoc = random_assoc(rng, 6, 6, 2);
  Tensor lab = random_tensor(rng, {6, 6, 3}, 0, 80);
  LossConfig cfg;
  cfg.m = 2.0;
  cfg.reduction = LossReduction::Sum;
  const LossTerms a = slic_loss(q_node_from(assoc), lab, assoc.grid, cfg);

  // mirror pixels and the 9 offset channels horizontally
  AssociationMap flipped{Tensor({6, 6, 9}), assoc.grid};
  Tensor lab_f({6, 6, 3});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      for (int k = 0; k < 9; ++k) {
        const int kf = (k / 3) * 3 + (2 - k % 3);
        flipped.probs.at(y, x, k) = assoc.probs.at(y, 5 - x, kf);
      }
      for (int c = 0; c < 3; ++c) lab_f.at(y, x, c) = lab.at(y, 5 - x, c);
    }
  const LossTerms b = slic_loss(q_node_from(flipped), lab_f, assoc.grid, cfg);
  CHECK(a.total->value.data[0] == doctest::Approx(b.total->value.data[0]).epsilon(1e-5));
}

TEST_CASE("position term scales linearly in m") {
  Rng rng(6);
  AssociationMap assoc = random_assoc(rng, 6, 6, 2);
  Tensor lab = random_tensor(rng, {6, 6, 3}, 0, 80);
  LossConfig cfg;
  cfg.m = 0.4;
  const LossTerms a = slic_loss(q_node_from(assoc), lab, assoc.grid, cfg);
  cfg.m = 0.8;
  const LossTerms b = slic_loss(q_node_from(assoc), lab, assoc.grid, cfg);
  CHECK(b.position->value.data[0] ==
        doctest::Approx(2.0 * a.position->value.data[0]).epsilon(1e-5));
  CHECK(b.property->value.data[0] == a.property->value.data[0]);
}

TEST_CASE("semantic loss: label-pure cells under hard Q cost nothing") {
  AssociationMap assoc = hard_owner_assoc(4, 4, 2);
  Tensor onehot({4, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      onehot.at(y, x, (y / 2) * 2 + (x / 2)) = 1.0f;  // one label per cell
  LossConfig cfg;
  cfg.m = 0.0;
  cfg.reduction = LossReduction::Sum;
  const LossTerms t = semantic_loss(q_node_from(assoc), onehot, assoc.grid, cfg);
  CHECK(std::fabs(t.total->value.data[0]) < 1e-6);
}

TEST_CASE("semantic loss: half-and-half cells give ln 2 per pixel") {
  AssociationMap assoc = hard_owner_assoc(4, 4, 2);
  Tensor onehot({4, 4, 2});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) onehot.at(y, x, x % 2) = 1.0f;
  LossConfig cfg;
  cfg.m = 0.0;
  cfg.reduction = LossReduction::Sum;
  const LossTerms t = semantic_loss(q_node_from(assoc), onehot, assoc.grid, cfg);
  CHECK(t.total->value.data[0] == doctest::Approx(16.0 * std::log(2.0)).epsilon(1e-5));
}

TEST_CASE("semantic loss matches the direct oracle on a random 3-class map") {
  Rng rng(7);
  AssociationMap assoc = random_assoc(rng, 6, 6, 2);
  Tensor onehot({6, 6, 3});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) onehot.at(y, x, rng.uniform_int(0, 2)) = 1.0f;
  LossConfig cfg;
  cfg.m = 0.25;
  cfg.reduction = LossReduction::Sum;
  const LossTerms t = semantic_loss(q_node_from(assoc), onehot, assoc.grid, cfg);
  const OracleTerms ref = loss_oracle(assoc, onehot, true, cfg.m);
  CHECK(t.property->value.data[0] == doctest::Approx(ref.property).epsilon(1e-5));
  CHECK(t.position->value.data[0] == doctest::Approx(ref.position).epsilon(1e-5));
  CHECK(t.total->value.data[0] >= 0.0f);
}

TEST_CASE("semantic loss rejects rows that do not sum to one") {
  Rng rng(8);
  AssociationMap assoc = random_assoc(rng, 4, 4, 2);
  Tensor bad({4, 4, 2}, 0.75f);
  CHECK_THROWS_AS(semantic_loss(q_node_from(assoc), bad, assoc.grid, LossConfig{}),
                  std::invalid_argument);
}

TEST_CASE("smooth_l1 values and both branches at the switch") {
  CHECK(smooth_l1(0.0f) == 0.0f);
  CHECK(smooth_l1(0.5f) == doctest::Approx(0.125f));
  CHECK(smooth_l1(2.0f) == doctest::Approx(1.5f));
  CHECK(smooth_l1(-2.0f) == doctest::Approx(1.5f));
  // quadratic and linear branches agree at |x| = 1
  CHECK(0.5f * 1.0f * 1.0f == doctest::Approx(1.0f - 0.5f));
  CHECK(smooth_l1(1.0f) == doctest::Approx(0.5f));
  Tensor t({3});
  t.data = {0.0f, 0.5f, 2.0f};
  const Tensor y = smooth_l1(t);
  CHECK(y.data[0] == 0.0f);
  CHECK(y.data[1] == doctest::Approx(0.125f));
  CHECK(y.data[2] == doctest::Approx(1.5f));
}

namespace {

ad::NodePtr pred_node(const Tensor& hw) {
  Tensor t({1, 1, hw.dim(0), hw.dim(1)});
  std::copy(hw.data.begin(), hw.data.end(), t.data.begin());
  return ad::constant(std::move(t));
}

}  // namespace

TEST_CASE("joint loss: perfect predictions and lambda 0 give zero") {
  Rng rng(9);
  AssociationMap assoc = random_assoc(rng, 8, 8, 2);
  Tensor lab = random_tensor(rng, {8, 8, 3}, 0, 80);
  Tensor gt = random_tensor(rng, {8, 8}, 0, 30);
  Tensor mask({8, 8}, 1.0f);
  LossConfig cfg;
  cfg.lambda = 0.0;
  auto loss = joint_loss({pred_node(gt), pred_node(gt), pred_node(gt)}, gt, mask,
                         q_node_from(assoc), lab, assoc.grid, cfg);
  CHECK(loss->value.data[0] == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("joint loss: constant error of 2 costs 3.3 with the stage weights") {
  Rng rng(10);
  AssociationMap assoc = random_assoc(rng, 8, 8, 2);
  Tensor lab = random_tensor(rng, {8, 8, 3}, 0, 80);
  Tensor gt = random_tensor(rng, {8, 8}, 0, 30);
  Tensor pred = gt;
  for (auto& v : pred.data) v += 2.0f;
  Tensor mask({8, 8}, 1.0f);
  LossConfig cfg;
  cfg.lambda = 0.0;
  auto loss = joint_loss({pred_node(pred), pred_node(pred), pred_node(pred)}, gt,
                         mask, q_node_from(assoc), lab, assoc.grid, cfg);
  CHECK(loss->value.data[0] == doctest::Approx(3.3).epsilon(1e-5));
}

TEST_CASE("joint loss matches an independent evaluation on a synthetic pair") {
  Rng rng(11);
  AssociationMap assoc = random_assoc(rng, 8, 8, 2);
  Tensor lab = random_tensor(rng, {8, 8, 3}, 0, 80);
  Tensor gt = random_tensor(rng, {8, 8}, 0, 30);
  std::array<Tensor, 3> preds;
  for (auto& p : preds) {
    p = gt;
    for (auto& v : p.data) v += static_cast<float>(rng.uniform(-3, 3));
  }
  Tensor mask({8, 8}, 1.0f);
  mask.at(0, 0) = 0.0f;
  mask.at(5, 3) = 0.0f;
  LossConfig cfg;  // lambda 0.1
  auto loss = joint_loss({pred_node(preds[0]), pred_node(preds[1]),
                          pred_node(preds[2])},
                         gt, mask, q_node_from(assoc), lab, assoc.grid, cfg);

  const double n_valid = 62.0;
  double expect = 0.0;
  const double alphas[3] = {0.5, 0.7, 1.0};
  for (int s = 0; s < 3; ++s) {
    double acc = 0.0;
    for (int p = 0; p < 64; ++p) {
      if (mask.data[p] == 0.0f) continue;
      const double d = preds[s].data[p] - gt.data[p];
      acc += std::fabs(d) < 1.0 ? 0.5 * d * d : std::fabs(d) - 0.5;
    }
    expect += alphas[s] * acc / n_valid;
  }
  const OracleTerms slic_ref = loss_oracle(assoc, lab, false, 0.003);
  expect += cfg.lambda * (slic_ref.property + slic_ref.position) / n_valid;
  CHECK(loss->value.data[0] == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("joint loss rejects an empty valid mask") {
  Rng rng(12);
  AssociationMap assoc = random_assoc(rng, 8, 8, 2);
  Tensor lab = random_tensor(rng, {8, 8, 3}, 0, 80);
  Tensor gt = random_tensor(rng, {8, 8}, 0, 30);
  Tensor mask({8, 8}, 0.0f);
  CHECK_THROWS_AS(joint_loss({pred_node(gt), pred_node(gt), pred_node(gt)}, gt,
                             mask, q_node_from(assoc), lab, assoc.grid,
                             LossConfig{}),
                  std::invalid_argument);
}
