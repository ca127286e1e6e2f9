#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "fedmem/error.hpp"
#include "fedmem/param_set.hpp"

namespace fedmem {

struct AdamState {
  ParamSet first_moment;
  ParamSet second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const ParamSet& params) {
    AdamState s;
    s.first_moment = zeros_like(params);
    s.second_moment = zeros_like(params);
    return s;
  }
};

/// One bias-corrected Adam update, applied in place. Refuses non-finite
/// gradients without touching `params` or `state`.
inline void adam_step(ParamSet& params, const Gradients& grads, AdamState& state, double lr) {
  if (!layout_equal(params, grads) || !layout_equal(params, state.first_moment) ||
      !layout_equal(params, state.second_moment))
    throw ConfigError("adam step with mismatched parameter, gradient or moment layouts");
  if (!grads.all_finite()) throw NumericError("non-finite gradient at adam step " + std::to_string(state.step + 1));

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t l = 0; l < params.depth(); ++l) {
    auto update = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
      }
    };
    update(params.layer(l).weight, grads.layer(l).weight, state.first_moment.layer(l).weight,
           state.second_moment.layer(l).weight);
    update(params.layer(l).bias, grads.layer(l).bias, state.first_moment.layer(l).bias,
           state.second_moment.layer(l).bias);
  }
}

}  // namespace fedmem
