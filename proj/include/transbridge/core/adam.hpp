// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>

#include "transbridge/core/param_store.hpp"

namespace tb {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class MissingGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update over every parameter in the store. Moments
/// live in the store so they travel with checkpoints.
inline void adam_step(ParamStore& store, const AdamOptions& opt = {}) {
  for (const auto& [name, p] : store) {
    if (!p.grad_ready) throw MissingGradientError("adam_step: no gradient for parameter '" + name + "'");
  }
  const auto t = static_cast<double>(store.step() + 1);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (auto& [name, p] : store) {
    auto& w = p.value.storage();
    auto& m = p.adam_m.storage();
    auto& v = p.adam_v.storage();
    const auto& g = p.grad.storage();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
  store.set_step(store.step() + 1);
}

}  // namespace tb
