#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dwe/errors.hpp"
#include "dwe/rng.hpp"
#include "dwe/tensor.hpp"

namespace dwe {

// Named parameters in lexicographic order, plus AdamW state.
template <typename T>
class ParamStore {
 public:
  struct Moments {
    std::vector<T> first;
    std::vector<T> second;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    if (params_.count(name)) throw UsageError("duplicate parameter name: " + name);
    value.requires_grad = true;
    auto& p = params_[name] = std::move(value);
    moments_[name] = Moments{std::vector<T>(p.values.size(), T(0)), std::vector<T>(p.values.size(), T(0))};
    return p;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Tensor<T>>& params() { return params_; }
  const std::map<std::string, Tensor<T>>& params() const { return params_; }
  Moments& moments(const std::string& name) { return moments_.at(name); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  // Frozen parameters take no gradient and are skipped by the optimizer.
  void set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& [name, p] : params_) {
      if (name.rfind(prefix, 0) == 0) p.requires_grad = trainable;
    }
  }
  bool trainable(const std::string& name) const { return get(name).requires_grad; }

  void zero_grad() {
    for (auto& [name, p] : params_) {
      if (p.has_grad()) p.zero_grad();
    }
  }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.values.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, p] : params_)
      if (!p.all_finite()) return false;
    return true;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) {
      auto& q = out.add(name, p.template cast<U>());
      q.requires_grad = p.requires_grad;
    }
    out.set_step(step_);
    return out;
  }

 private:
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, Moments> moments_;
  std::uint64_t step_ = 0;
};

// Uniform(-bound, bound) initialisation from a stream keyed by (seed, name),
// so a parameter's initial value does not depend on which others exist.
template <typename T>
Tensor<T> init_uniform(std::size_t rows, std::size_t cols, double bound, std::uint64_t seed, const std::string& name) {
  SplitMix64 stream(fnv1a(name, fnv1a_u64_le(seed)));
  Tensor<T> t(rows, cols);
  for (auto& v : t.values) v = static_cast<T>(bound * (2.0 * stream.next_unit() - 1.0));
  return t;
}

struct AdamWConfig {
  double lr = 5e-5;
  double weight_decay = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One AdamW update over every trainable parameter; grads are zeroed after.
template <typename T>
void adamw_step(ParamStore<T>& store, const AdamWConfig& cfg) {
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : store.params()) {
    if (!p.requires_grad) continue;
    if (!p.has_grad()) {
      warn("adamw: parameter '" + name + "' has no gradient, skipped");
      continue;
    }
    auto& mom = store.moments(name);
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      const double g = p.grad[k];
      double theta = p.values[k];
      theta -= cfg.lr * cfg.weight_decay * theta;
      const double m = cfg.beta1 * mom.first[k] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * mom.second[k] + (1.0 - cfg.beta2) * g * g;
      mom.first[k] = static_cast<T>(m);
      mom.second[k] = static_cast<T>(v);
      theta -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      p.values[k] = static_cast<T>(theta);
    }
    p.zero_grad();
  }
}

}  // namespace dwe
