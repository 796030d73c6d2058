#include "gridpix/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace gridpix {

Adam::Adam(std::vector<ad::NodePtr> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.beta1 > 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 > 0.0 &&
        cfg_.beta2 < 1.0))
    throw std::invalid_argument("Adam: betas must lie in (0,1)");
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    const bool has_grad = same_shape(p->grad, p->value);
    if (p->grad.numel() != 0 && !has_grad)
      throw std::invalid_argument("Adam: gradient shape mismatch for " + p->name);
    float* w = p->value.ptr();
    float* m = m_[pi].ptr();
    float* v = v_[pi].ptr();
    const float* g = has_grad ? p->grad.ptr() : nullptr;
    const std::size_t n = p->value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g ? g[i] : 0.0;
      const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w[i] = static_cast<float>(w[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

}  // namespace gridpix
