#include "gridpix/gradcheck.hpp"

#include <cmath>

#include "gridpix/losses.hpp"
#include "gridpix/ops.hpp"
#include "gridpix/spixel_net.hpp"

namespace gridpix {

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

double fd_max_rel_err(const std::function<ad::NodePtr()>& build_loss,
                      const std::vector<ad::NodePtr>& targets, int n_coords,
                      Rng& rng, double base_step) {
  ad::NodePtr loss = build_loss();
  for (const auto& t : targets) t->grad = Tensor();
  ad::backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(targets.size());
  for (const auto& t : targets) analytic.push_back(ad::grad_or_zeros(t));

  // Finite differences run on the same graph re-evaluated in float64, so the
  // quotients are not limited by float32 rounding; what is being validated is
  // the float32 analytic gradient.
  double worst = 0.0;
  for (int i = 0; i < n_coords; ++i) {
    const std::size_t ti = static_cast<std::size_t>(i) % targets.size();
    ad::NodePtr target = targets[ti];
    const std::size_t ci = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(target->value.numel()) - 1));
    const double orig = target->value.data[ci];
    const double h = base_step * std::max(1.0, std::fabs(orig));
    ad::DoubleBuf buf(target->value.data.begin(), target->value.data.end());
    std::unordered_map<ad::Node*, ad::DoubleBuf> overrides;
    buf[ci] = orig + h;
    overrides[target.get()] = buf;
    const double up = ad::eval_scalar_double(loss, overrides);
    buf[ci] = orig - h;
    overrides[target.get()] = buf;
    const double down = ad::eval_scalar_double(loss, overrides);
    const double fd = (up - down) / (2.0 * h);
    const double an = analytic[ti].data[ci];
    const double denom = std::max(std::fabs(fd), std::fabs(an));
    if (denom < 1e-6) continue;  // both effectively zero
    worst = std::max(worst, std::fabs(fd - an) / denom);
  }
  return worst;
}

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  Rng rng(seed);

  auto add_result = [&](const std::string& name, double err, int n) {
    results.push_back({name, err, n});
  };

  {  // conv2d -> leaky relu -> sum, all three inputs
    auto x = ad::param(random_tensor(rng, {1, 2, 6, 6}, -1, 1), "x");
    auto w = ad::param(random_tensor(rng, {3, 2, 3, 3}, -0.7, 0.7), "w");
    auto b = ad::param(random_tensor(rng, {3}, -0.3, 0.3), "b");
    auto build = [&] {
      return ad::sum_all(ad::leaky_relu(ad::conv2d(x, w, b, 1, 1), 0.1f));
    };
    add_result("conv2d+leaky_relu", fd_max_rel_err(build, {x, w, b}, 24, rng, 1e-3), 24);
  }
  {  // strided conv
    auto x = ad::param(random_tensor(rng, {1, 3, 8, 8}, -1, 1), "x");
    auto w = ad::param(random_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5), "w");
    auto c = ad::constant(random_tensor(rng, {1, 4, 4, 4}, -1, 1));
    auto build = [&] { return ad::sum_all(ad::mul(ad::conv2d(x, w, nullptr, 2, 1), c)); };
    add_result("conv2d_stride2", fd_max_rel_err(build, {x, w}, 20, rng, 1e-3), 20);
  }
  {  // transposed conv
    auto x = ad::param(random_tensor(rng, {1, 3, 5, 5}, -1, 1), "x");
    auto w = ad::param(random_tensor(rng, {3, 2, 4, 4}, -0.5, 0.5), "w");
    auto c = ad::constant(random_tensor(rng, {1, 2, 10, 10}, -1, 1));
    auto build = [&] {
      return ad::sum_all(ad::mul(ad::transposed_conv2d(x, w, nullptr, 2, 1), c));
    };
    add_result("transposed_conv2d", fd_max_rel_err(build, {x, w}, 20, rng, 1e-3), 20);
  }
  {  // softmax over channels
    auto x = ad::param(random_tensor(rng, {1, 9, 4, 4}, -2, 2), "x");
    auto c = ad::constant(random_tensor(rng, {1, 9, 4, 4}, -1, 1));
    auto build = [&] { return ad::sum_all(ad::mul(ad::softmax_channels(x), c)); };
    add_result("softmax_channels", fd_max_rel_err(build, {x}, 20, rng, 1e-3), 20);
  }
  {  // masked softmax with a real border mask
    GridSpec grid(8, 8, 4);
    auto x = ad::param(random_tensor(rng, {1, 9, 8, 8}, -2, 2), "x");
    auto c = ad::constant(random_tensor(rng, {1, 9, 8, 8}, -1, 1));
    const Tensor mask = validity_mask(grid);
    auto build = [&] {
      return ad::sum_all(ad::mul(ad::masked_softmax_channels(x, mask), c));
    };
    add_result("masked_softmax", fd_max_rel_err(build, {x}, 20, rng, 1e-3), 20);
  }
  {  // batch norm (training statistics path)
    auto x = ad::param(random_tensor(rng, {2, 3, 5, 5}, -1, 1), "x");
    auto g = ad::param(random_tensor(rng, {3}, 0.5, 1.5), "gamma");
    auto b = ad::param(random_tensor(rng, {3}, -0.5, 0.5), "beta");
    auto c = ad::constant(random_tensor(rng, {2, 3, 5, 5}, -1, 1));
    auto state = std::make_shared<ad::BNState>();
    state->running_mean = Tensor({3});
    state->running_var = Tensor({3}, 1.0f);
    auto build = [&] {
      return ad::sum_all(
          ad::mul(ad::batch_norm(x, g, b, state.get(), 0.0f, 1e-5f, true), c));
    };
    add_result("batch_norm", fd_max_rel_err(build, {x, g, b}, 24, rng, 1e-3), 24);
  }
  {  // center computation and reconstruction w.r.t. q-logits and features
    GridSpec grid(8, 8, 4);
    auto logits = ad::param(random_tensor(rng, {1, 9, 8, 8}, -1, 1), "logits");
    auto f = ad::param(random_tensor(rng, {1, 3, 8, 8}, -1, 1), "f");
    auto cu = ad::constant(random_tensor(rng, {1, 3, 2, 2}, -1, 1));
    auto cr = ad::constant(random_tensor(rng, {1, 3, 8, 8}, -1, 1));
    const Tensor mask = validity_mask(grid);
    auto build_u = [&] {
      auto q = ad::masked_softmax_channels(logits, mask);
      return ad::sum_all(ad::mul(ad::weighted_cell_mean(q, f, grid), cu));
    };
    add_result("weighted_cell_mean", fd_max_rel_err(build_u, {logits, f}, 20, rng, 1e-3), 20);
    auto build_r = [&] {
      auto q = ad::masked_softmax_channels(logits, mask);
      auto u = ad::weighted_cell_mean(q, f, grid);
      return ad::sum_all(ad::mul(ad::reconstruct_cells(q, u, grid), cr));
    };
    add_result("reconstruct_cells", fd_max_rel_err(build_r, {logits, f}, 20, rng, 1e-3), 20);
  }
  {  // smooth L1 (coordinates away from the quadratic/linear switch)
    auto x = ad::param(random_tensor(rng, {1, 1, 6, 6}, -3, 3), "x");
    for (auto& v : x->value.data)
      if (std::fabs(std::fabs(v) - 1.0f) < 0.01f) v += 0.05f;
    auto build = [&] { return ad::sum_all(ad::smooth_l1(x)); };
    add_result("smooth_l1", fd_max_rel_err(build, {x}, 20, rng, 1e-3), 20);
  }

  const auto loss_logit_check = [&](const std::string& name, auto&& make_loss) {
    GridSpec grid(8, 8, 4);
    auto logits = ad::param(random_tensor(rng, {1, 9, 8, 8}, -1, 1), "logits");
    const Tensor mask = validity_mask(grid);
    auto build = [&] {
      auto q = ad::masked_softmax_channels(logits, mask);
      return make_loss(q, grid);
    };
    add_result(name, fd_max_rel_err(build, {logits}, 24, rng, 1e-3), 24);
  };

  {
    Tensor lab = random_tensor(rng, {8, 8, 3}, 0, 60);
    LossConfig cfg;
    cfg.m = 0.1;
    loss_logit_check("slic_loss", [&](ad::NodePtr q, const GridSpec& grid) {
      return slic_loss(q, lab, grid, cfg).total;
    });
  }
  {
    Tensor onehot({8, 8, 3});
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        onehot.at(y, x, rng.uniform_int(0, 2)) = 1.0f;
    LossConfig cfg;
    cfg.m = 0.1;
    loss_logit_check("semantic_loss", [&](ad::NodePtr q, const GridSpec& grid) {
      return semantic_loss(q, onehot, grid, cfg).total;
    });
  }
  {
    Tensor lab = random_tensor(rng, {8, 8, 3}, 0, 60);
    Tensor gt = random_tensor(rng, {8, 8}, 0, 10);
    Tensor maskv({8, 8}, 1.0f);
    maskv.at(0, 0) = 0.0f;
    std::array<ad::NodePtr, 3> preds;
    for (auto& p : preds)
      p = ad::param(random_tensor(rng, {1, 1, 8, 8}, 0, 10), "pred");
    // keep the smooth-L1 inputs away from the branch switch
    for (auto& p : preds)
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        const float d = p->value.data[i] - gt.data[i % gt.numel()];
        if (std::fabs(std::fabs(d) - 1.0f) < 0.02f) p->value.data[i] += 0.05f;
      }
    LossConfig cfg;
    GridSpec grid(8, 8, 4);
    auto logits = ad::param(random_tensor(rng, {1, 9, 8, 8}, -1, 1), "logits");
    const Tensor mask = validity_mask(grid);
    auto build = [&] {
      auto q = ad::masked_softmax_channels(logits, mask);
      return joint_loss(preds, gt, maskv, q, lab, grid, cfg);
    };
    add_result("joint_loss",
               fd_max_rel_err(build, {logits, preds[0], preds[1], preds[2]}, 24,
                              rng, 1e-3),
               24);
  }

  {  // the full network at a 16x16 input under the SLIC loss
    SpixelNet net(NetworkSpec::table5(), seed + 1);
    GridSpec grid(16, 16, 4);
    Tensor image = random_tensor(rng, {1, 3, 16, 16}, -0.5, 0.5);
    Tensor lab = random_tensor(rng, {16, 16, 3}, 0, 60);
    const Tensor mask = validity_mask(grid);
    LossConfig cfg;
    cfg.m = 0.1;
    auto input = ad::constant(image);
    auto build = [&] {
      auto q = ad::masked_softmax_channels(net.logits(input, true), mask);
      return slic_loss(q, lab, grid, cfg).total;
    };
    auto params = net.parameters();
    // spread the probed coordinates across layers
    std::vector<ad::NodePtr> targets;
    for (std::size_t i = 0; i < params.size(); i += 7) targets.push_back(params[i]);
    targets.push_back(params.back());
    add_result("network16_slic_loss", fd_max_rel_err(build, targets, 10, rng, 1e-5), 10);
  }

  return results;
}

bool gradient_suite_passed(const std::vector<GradCheckResult>& results,
                           double tol) {
  for (const auto& r : results)
    if (!(r.max_rel_err < tol)) return false;
  return !results.empty();
}

}  // namespace gridpix
