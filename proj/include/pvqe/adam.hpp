#pragma once

#include <cmath>

#include "pvqe/tensor.hpp"

namespace pvqe {

template <class T>
struct AdamState {
  ParamStore<T> m, v;
  int64_t t = 0;

  static AdamState like(const ParamStore<T>& params) {
    AdamState st;
    for (const auto& [name, tensor] : params) {
      st.m.emplace(name, Tensor<T>::zeros(tensor.shape));
      st.v.emplace(name, Tensor<T>::zeros(tensor.shape));
    }
    return st;
  }
};

struct AdamConfig {
  double lr = 6e-5;
  double weight_decay = 1e-7;  // decoupled, applied before the Adam delta
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam with decoupled weight decay. Throws on non-finite
// gradients so a diverged run aborts instead of silently poisoning weights.
template <class T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw InvalidInput("adam_step: missing gradient for " + name);
    const Tensor<T>& g = git->second;
    if (!g.same_shape(p)) throw InvalidInput("adam_step: gradient shape mismatch for " + name);
    Tensor<T>& m = state.m.at(name);
    Tensor<T>& v = state.v.at(name);
    for (size_t i = 0; i < p.data.size(); ++i) {
      const double gi = double(g.data[i]);
      if (!std::isfinite(gi)) throw TrainingDiverged("non-finite gradient in " + name);
      double pi = double(p.data[i]);
      pi -= cfg.lr * cfg.weight_decay * pi;
      const double mi = cfg.beta1 * double(m.data[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(v.data[i]) + (1.0 - cfg.beta2) * gi * gi;
      m.data[i] = T(mi);
      v.data[i] = T(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      pi -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      p.data[i] = T(pi);
    }
  }
}

}  // namespace pvqe
