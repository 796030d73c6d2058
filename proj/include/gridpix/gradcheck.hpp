#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gridpix/autodiff.hpp"
#include "gridpix/rng.hpp"

namespace gridpix {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  int checked = 0;
};

// Compares analytic gradients against central finite differences at n_coords
// randomly sampled coordinates cycled over the target parameters. The loss is
// rebuilt from scratch per evaluation, so any stateful ops must be configured
// statelessly inside the builder.
double fd_max_rel_err(const std::function<ad::NodePtr()>& build_loss,
                      const std::vector<ad::NodePtr>& targets, int n_coords,
                      Rng& rng, double base_step);

// The full suite: every differentiable operator, the three losses w.r.t.
// association logits, and the whole network at a 16x16 input under the SLIC
// loss. All checks must come in under 1e-3 relative error.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed);

bool gradient_suite_passed(const std::vector<GradCheckResult>& results,
                           double tol = 1e-3);

}  // namespace gridpix
