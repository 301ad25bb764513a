#pragma once

#include <map>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/rng.hpp"
#include "saferl/core/tensor.hpp"

namespace saferl::nn {

// Named parameter set with matching gradient accumulators. Iteration order is
// lexicographic (std::map), which keeps optimizer updates and checkpoints
// deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw ParameterError("duplicate parameter: " + name);
    grads_[name] = Tensor::zeros(init.shape);
    auto [it, ok] = params_.emplace(name, std::move(init));
    (void)ok;
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Tensor& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ParameterError("unknown parameter: " + name);
    return it->second;
  }

  const Tensor& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ParameterError("unknown parameter: " + name);
    return it->second;
  }

  Tensor& grad(const std::string& name) {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw ParameterError("unknown parameter: " + name);
    return it->second;
  }

  void zero_grads() {
    for (auto& [name, g] : grads_) g.fill(0.0);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, p] : params_) out.push_back(name);
    return out;
  }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, p] : params_) {
      if (name.rfind(prefix, 0) == 0) out.push_back(name);
    }
    return out;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.size();
    return n;
  }

  void remove_prefix(const std::string& prefix) {
    for (auto it = params_.begin(); it != params_.end();) {
      if (it->first.rfind(prefix, 0) == 0) {
        grads_.erase(it->first);
        it = params_.erase(it);
      } else {
        ++it;
      }
    }
  }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> grads_;
};

// Copies every `from` parameter to the same name under `to`, creating target
// entries as needed. Used for target-network syncs and baseline refreshes.
inline void sync_prefix(ParamStore& store, const std::string& from, const std::string& to) {
  for (const std::string& name : store.names_with_prefix(from)) {
    std::string target = to + name.substr(from.size());
    if (store.has(target)) {
      store.param(target) = store.param(name);
    } else {
      store.add(target, store.param(name));
    }
  }
}

// Uniform init scaled by 1/sqrt(fan-in).
inline Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, RngStream& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace saferl::nn
