#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "saferl/core/errors.hpp"
#include "saferl/core/param_store.hpp"

namespace saferl::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. step() walks parameters in name order,
// applies the update from accumulated gradients, then clears them.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return t_; }

  void step(ParamStore& store) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const std::string& name : store.names()) {
      Tensor& p = store.param(name);
      Tensor& g = store.grad(name);
      if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
      Tensor& m = moment(m_, name, p);
      Tensor& v = moment(v_, name, p);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      g.fill(0.0);
    }
  }

 private:
  static Tensor& moment(std::map<std::string, Tensor>& side, const std::string& name, const Tensor& like) {
    auto it = side.find(name);
    if (it == side.end()) it = side.emplace(name, Tensor::zeros(like.shape)).first;
    return it->second;
  }

  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace saferl::nn
