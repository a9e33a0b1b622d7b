#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "deblur/nn.hpp"
#include "deblur/tensor.hpp"

namespace deblur::nn {

/// Scalar loss of a network output: (value, dL/doutput).
using LossFn = std::function<std::pair<double, Tensor<double>>(const Tensor<double>&)>;

/// |a - n| / max(|a|, |n|, 1e-6). The floor absorbs central-difference
/// roundoff on gradients that are exactly zero (e.g. a conv bias feeding an
/// instance norm).
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckResult {
  double max_rel_param = 0.0;
  double max_rel_input = 0.0;
  double max_rel() const { return std::max(max_rel_param, max_rel_input); }
};

/// Compares backprop gradients (every parameter and every input element)
/// against central differences with step `eps`.
inline GradCheckResult grad_check(Network<double>& net, const Tensor<double>& x, const LossFn& loss,
                                  double eps = 1e-4) {
  net.zero_grad();
  const Tensor<double> out = net.forward(x);
  const Tensor<double> grad_in = net.backward(loss(out).second);

  auto eval = [&](const Tensor<double>& input) { return loss(net.forward(input)).first; };

  GradCheckResult r;
  for (Param<double>* p : net.params()) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = eval(x);
      p->value[i] = saved - eps;
      const double down = eval(x);
      p->value[i] = saved;
      r.max_rel_param = std::max(r.max_rel_param, relative_error(p->grad[i], (up - down) / (2 * eps)));
    }
  }
  Tensor<double> xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + eps;
    const double up = eval(xp);
    xp[i] = x[i] - eps;
    const double down = eval(xp);
    xp[i] = x[i];
    r.max_rel_input = std::max(r.max_rel_input, relative_error(grad_in[i], (up - down) / (2 * eps)));
  }
  return r;
}

/// L = sum(weights * output): a linear probe giving O(1) gradients everywhere.
inline LossFn linear_probe(Tensor<double> weights) {
  return [w = std::move(weights)](const Tensor<double>& out) {
    require_same_shape(out, w, "linear_probe");
    double v = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) v += w[i] * out[i];
    return std::pair{v, w};
  };
}

}  // namespace deblur::nn
