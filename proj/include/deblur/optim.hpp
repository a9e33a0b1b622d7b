#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "deblur/error.hpp"
#include "deblur/nn.hpp"

namespace deblur::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update; `t` is the 1-based step number.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments& state, long t,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: params/grads size mismatch");
  if (t < 1) throw ConfigError("adam_step: step number must be >= 1");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = static_cast<T>(params[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

/// Adam over all parameters of a network.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(nn::Network<T>& net) {
    auto ps = net.params();
    if (moments_.size() != ps.size()) moments_.assign(ps.size(), {});
    ++t_;
    for (std::size_t i = 0; i < ps.size(); ++i)
      adam_step<T>(ps[i]->value, ps[i]->grad, moments_[i], t_, cfg_);
  }

  long steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<AdamMoments> moments_;
};

}  // namespace deblur::optim
