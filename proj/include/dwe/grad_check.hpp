#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "dwe/param_store.hpp"
#include "dwe/tensor.hpp"

namespace dwe {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double autodiff_grad = 0.0;
  double numeric_grad = 0.0;
  std::size_t coordinates = 0;
};

// Compares reverse-mode gradients of `fn` against central differences for
// every coordinate of every trainable parameter. `fn(tape, store)` must
// build the loss from the store's current values and be deterministic; it is
// called with Tape<double> for the gradients and Tape<Oracle> for the
// perturbed evaluations. Oracle = long double keeps the difference quotient's
// rounding noise (about ulp(L)/eps) well under tiny gradients.
template <typename Oracle = double, typename Fn>
GradCheckResult grad_check(Fn&& fn, ParamStore<double>& store, double eps_fd = 1e-5) {
  for (auto& [name, p] : store.params()) p.grad.clear();
  {
    Tape<double> tape;
    auto loss = fn(tape, store);
    tape.backward(loss);
  }

  ParamStore<Oracle> probe = store.template cast<Oracle>();
  auto evaluate = [&]() {
    Tape<Oracle> tape;
    return static_cast<Oracle>(fn(tape, probe).item());
  };

  GradCheckResult result;
  for (auto& [name, p] : store.params()) {
    if (!p.requires_grad) continue;
    auto& q = probe.get(name);
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      const double g_ad = p.has_grad() ? p.grad[k] : 0.0;
      const Oracle saved = q.values[k];
      q.values[k] = saved + static_cast<Oracle>(eps_fd);
      const Oracle up = evaluate();
      q.values[k] = saved - static_cast<Oracle>(eps_fd);
      const Oracle down = evaluate();
      q.values[k] = saved;
      const double g_fd = static_cast<double>((up - down) / (2 * static_cast<Oracle>(eps_fd)));
      const double rel = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
      ++result.coordinates;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = k;
        result.autodiff_grad = g_ad;
        result.numeric_grad = g_fd;
      }
    }
  }
  return result;
}

}  // namespace dwe
