#pragma once

#include <vector>

#include "gridpix/autodiff.hpp"

namespace gridpix {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Moments start at zero;
// a parameter whose grad was not populated this step is treated as zero.
class Adam {
 public:
  Adam(std::vector<ad::NodePtr> params, AdamConfig cfg);

  void step();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long steps() const { return t_; }

 private:
  std::vector<ad::NodePtr> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace gridpix
