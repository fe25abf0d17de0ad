#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "unimot/errors.hpp"
#include "unimot/model.hpp"
#include "unimot/tensor.hpp"

namespace unimot {

// AdamW with decoupled weight decay and bias correction. The clip threshold
// is passed per step; everything else is fixed for a run.
struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// First/second moment estimates, keyed by registry tensor name. Slots exist
// only for trainable parameters; frozen tensors never get optimizer state.
template <class Real>
struct OptimizerState {
  struct Slot {
    Tensor<Real> m, v;
  };
  std::map<std::string, Slot> slots;
  int64_t step = 0;
};

template <class Real>
OptimizerState<Real> init_optimizer(MoTParams<Real>& p) {
  OptimizerState<Real> st;
  for_each_tensor(p, [&](const std::string& name, Tensor<Real>& t,
                         bool trainable) {
    if (trainable)
      st.slots.emplace(name,
                       typename OptimizerState<Real>::Slot{
                           Tensor<Real>(t.shape), Tensor<Real>(t.shape)});
  });
  return st;
}

struct StepReport {
  double grad_norm = 0.0;   // global norm before clipping
  double clip_scale = 1.0;  // multiplier applied to every gradient
};

// One optimizer step over every trainable tensor. Gradients are globally
// norm-clipped first, then used for the decoupled-weight-decay Adam update.
// A non-finite gradient aborts before any parameter or moment is touched.
template <class Real>
StepReport adamw_step(MoTParams<Real>& p, const GradSinks<Real>& grads,
                      OptimizerState<Real>& st, double lr, double clip,
                      const AdamWConfig& cfg = {}) {
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw ConfigError("optimizer: learning rate must be finite and >= 0");
  if (!(clip > 0.0))
    throw ConfigError("optimizer: clip norm must be positive");

  struct Entry {
    Tensor<Real>* param;
    const Tensor<Real>* grad;
    typename OptimizerState<Real>::Slot* slot;
  };
  std::vector<Entry> entries;
  double norm_sq = 0.0;
  for_each_tensor(p, [&](const std::string& name, Tensor<Real>& t,
                         bool trainable) {
    if (!trainable) return;
    auto gi = grads.by_name.find(name);
    if (gi == grads.by_name.end())
      throw ConfigError("optimizer: no gradient sink for " + name);
    auto si = st.slots.find(name);
    if (si == st.slots.end())
      throw ConfigError("optimizer: no moment slot for " + name +
                        " (state initialized for a different trainable set)");
    if (gi->second.data.size() != t.data.size() ||
        si->second.m.data.size() != t.data.size())
      throw ConfigError("optimizer: shape mismatch for " + name);
    for (const Real g : gi->second.data) {
      if (!std::isfinite(double(g)))
        throw NumericError("optimizer: non-finite gradient in " + name +
                           ", step aborted");
      norm_sq += double(g) * double(g);
    }
    entries.push_back({&t, &gi->second, &si->second});
  });
  if (entries.size() != grads.by_name.size() ||
      entries.size() != st.slots.size())
    throw ConfigError("optimizer: trainable set does not match sinks/state");

  StepReport rep;
  rep.grad_norm = std::sqrt(norm_sq);
  rep.clip_scale = rep.grad_norm > clip ? clip / rep.grad_norm : 1.0;

  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.step));
  for (Entry& e : entries) {
    const size_t n = e.param->data.size();
    for (size_t i = 0; i < n; i++) {
      const double g = double(e.grad->data[i]) * rep.clip_scale;
      const double m =
          cfg.beta1 * double(e.slot->m.data[i]) + (1.0 - cfg.beta1) * g;
      const double v =
          cfg.beta2 * double(e.slot->v.data[i]) + (1.0 - cfg.beta2) * g * g;
      e.slot->m.data[i] = Real(m);
      e.slot->v.data[i] = Real(v);
      const double w = double(e.param->data[i]);
      const double update =
          (m / bc1) / (std::sqrt(v / bc2) + cfg.eps) + cfg.weight_decay * w;
      e.param->data[i] = Real(w - lr * update);
    }
  }
  return rep;
}

}  // namespace unimot
