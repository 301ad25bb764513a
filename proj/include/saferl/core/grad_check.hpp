#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "saferl/core/param_store.hpp"
#include "saferl/core/tape.hpp"

namespace saferl::nn {

// Builds a scalar loss on the given tape from the store's parameters. Must be
// deterministic (fixed rng streams, eval-mode dropout) for the check to mean
// anything.
using ScalarFn = std::function<Var(Tape&, ParamStore&)>;

// Compares reverse-mode gradients against central finite differences and
// returns the worst relative error over every parameter component.
inline double grad_check(const ScalarFn& f, ParamStore& store, double h = 1e-5,
                         const std::vector<std::string>& subset = {}) {
  store.zero_grads();
  Tape tape;
  Var root = f(tape, store);
  tape.backward(root);

  std::vector<std::string> names = subset.empty() ? store.names() : subset;
  std::map<std::string, Tensor> analytic;
  for (const std::string& name : names) analytic[name] = store.grad(name);

  auto eval = [&]() {
    Tape t(false);
    return t.value(f(t, store))[0];
  };

  double worst = 0.0;
  for (const std::string& name : names) {
    Tensor& p = store.param(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double orig = p[i];
      p[i] = orig + h;
      double fp = eval();
      p[i] = orig - h;
      double fm = eval();
      p[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[name][i];
      double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-4);
      worst = std::max(worst, rel);
    }
  }
  store.zero_grads();
  return worst;
}

}  // namespace saferl::nn
