#pragma once

#include <cmath>
#include <vector>

#include "bevssl/error.hpp"
#include "bevssl/param_set.hpp"

namespace bevssl {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment step with bias correction and decoupled weight decay:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// `step` is 1-based. Gradients are cleared afterwards.
inline void optimizer_step(ParamSet& params, const AdamWConfig& cfg, long step) {
  if (step <= 0) throw ContractError("optimizer_step: step must be positive, got " + std::to_string(step));
  if (!(cfg.lr >= 0.0)) throw ConfigError("optimizer_step: learning rate must be non-negative");
  if (cfg.weight_decay < 0.0) throw ConfigError("optimizer_step: weight decay must be non-negative");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (Param& p : params) {
    const std::size_t n = p.value.size();
    if (p.m.size() != n) p.m.assign(n, 0.0);
    if (p.v.size() != n) p.v.assign(n, 0.0);
    std::vector<double> theta(p.value.values().begin(), p.value.values().end());
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p.grad[i];
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = p.m[i] / bc1;
      const double v_hat = p.v[i] / bc2;
      theta[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta[i]);
    }
    p.value = Tensor(p.value.shape(), std::move(theta));
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }
}

}  // namespace bevssl
