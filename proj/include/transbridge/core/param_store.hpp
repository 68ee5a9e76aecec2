// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

#include "transbridge/core/dense_array.hpp"

namespace tb {

struct Param {
  DenseArray value;
  DenseArray grad;
  DenseArray adam_m;
  DenseArray adam_v;
  bool grad_ready = false;
};

/// Named learned parameters keyed by dotted path ("decoder.level3.ub.wq.w").
/// std::map keeps iteration order lexicographic, which the checkpoint writer and
/// the optimizer rely on for reproducibility.
class ParamStore {
 public:
  Param& add(const std::string& name, DenseArray init) {
    if (params_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    Param p;
    p.grad = DenseArray(init.dims());
    p.adam_m = DenseArray(init.dims());
    p.adam_v = DenseArray(init.dims());
    p.value = std::move(init);
    return params_.emplace(name, std::move(p)).first->second;
  }

  // Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
  Param& add_xavier(const std::string& name, Dims dims, std::size_t fan_in, std::size_t fan_out,
                    std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    DenseArray w(std::move(dims));
    for (double& v : w.storage()) v = dist(rng);
    return add(name, std::move(w));
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) {
      std::fill(p.grad.storage().begin(), p.grad.storage().end(), 0.0);
      p.grad_ready = false;
    }
  }

  std::size_t size() const noexcept { return params_.size(); }
  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t s) noexcept { step_ = s; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param> params_;
  std::uint64_t step_ = 0;
};

}  // namespace tb
