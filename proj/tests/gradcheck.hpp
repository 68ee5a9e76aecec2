// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference oracle. It only evaluates forward values, so it is
// independent of every backward closure it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "transbridge/core/graph.hpp"
#include "transbridge/core/ops.hpp"

namespace tbtest {

using tb::DenseArray;
using tb::ParamStore;
using tb::ad::Graph;
using tb::ad::Var;

using LossBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double eval_loss(ParamStore& store, const std::vector<DenseArray>& inputs, const LossBuilder& build) {
  Graph g(store);
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(g.variable(in));
  return g.value(build(g, vars)).item();
}

/// ||analytic - numeric|| / max(||analytic||, ||numeric||) over every input
/// element and (optionally) every parameter element.
inline double grad_check(ParamStore& store, std::vector<DenseArray> inputs, const LossBuilder& build,
                         double step = 1e-5, bool include_params = true) {
  std::vector<double> analytic, numeric;
  {
    store.zero_grad();
    Graph g(store);
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(g.variable(in));
    g.backward(build(g, vars));
    for (const Var& v : vars) {
      const DenseArray gr = g.grad(v);
      analytic.insert(analytic.end(), gr.data().begin(), gr.data().end());
    }
    if (include_params) {
      for (auto& [name, p] : store) analytic.insert(analytic.end(), p.grad.data().begin(), p.grad.data().end());
    }
  }
  for (auto& in : inputs) {
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double x0 = in[i];
      in[i] = x0 + step;
      const double fp = eval_loss(store, inputs, build);
      in[i] = x0 - step;
      const double fm = eval_loss(store, inputs, build);
      in[i] = x0;
      numeric.push_back((fp - fm) / (2 * step));
    }
  }
  if (include_params) {
    for (auto& [name, p] : store) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double x0 = p.value[i];
        p.value[i] = x0 + step;
        const double fp = eval_loss(store, inputs, build);
        p.value[i] = x0 - step;
        const double fm = eval_loss(store, inputs, build);
        p.value[i] = x0;
        numeric.push_back((fp - fm) / (2 * step));
      }
    }
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

inline DenseArray random_array(tb::Dims dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  DenseArray a(std::move(dims));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : a.storage()) v = d(rng);
  return a;
}

/// Fixed projection so vector-valued ops reduce to a generic scalar.
inline Var project_to_scalar(Graph& g, Var y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return tb::ad::sum(tb::ad::mul(y, g.constant(random_array(g.value(y).dims(), rng))));
}

}  // namespace tbtest
