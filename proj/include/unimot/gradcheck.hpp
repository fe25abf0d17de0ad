#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "unimot/rng.hpp"
#include "unimot/tensor.hpp"

namespace unimot {

struct GradCheckParam {
  std::string name;
  Tensor<double>* value;
  const Tensor<double>* grad;  // analytic gradient, same shape
};

struct GradCheckReport {
  double max_rel_err = 0;
  int64_t checked = 0;
  std::string worst;
};

// Central-difference check in 64-bit: loss_fn() re-evaluates the loss with
// the current parameter values. Coordinates are sampled uniformly over the
// concatenation of all parameters.
template <class F>
GradCheckReport grad_check(F&& loss_fn, std::vector<GradCheckParam> params,
                           int n_samples, uint64_t seed, double h = 1e-5) {
  int64_t total = 0;
  for (auto& p : params) {
    if (!p.grad->same_shape(*p.value))
      throw std::invalid_argument("grad_check: grad shape mismatch for " + p.name);
    total += p.value->numel();
  }
  if (total == 0) throw std::invalid_argument("grad_check: no coordinates");
  Rng rng(seed);
  GradCheckReport rep;
  for (int s = 0; s < n_samples; s++) {
    int64_t flat = int64_t(rng.below(uint64_t(total)));
    size_t pi = 0;
    while (flat >= params[pi].value->numel()) {
      flat -= params[pi].value->numel();
      pi++;
    }
    auto& t = *params[pi].value;
    double orig = t.data[size_t(flat)];
    t.data[size_t(flat)] = orig + h;
    double lp = loss_fn();
    t.data[size_t(flat)] = orig - h;
    double lm = loss_fn();
    t.data[size_t(flat)] = orig;
    double fd = (lp - lm) / (2 * h);
    double an = params[pi].grad->data[size_t(flat)];
    double rel;
    if (std::abs(fd) < 1e-12 && std::abs(an) < 1e-12)
      rel = 0.0;
    else
      rel = std::abs(fd - an) / std::max(std::abs(fd) + std::abs(an), 1e-8);
    rep.checked++;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst = params[pi].name + "[" + std::to_string(flat) + "]";
    }
  }
  return rep;
}

}  // namespace unimot
