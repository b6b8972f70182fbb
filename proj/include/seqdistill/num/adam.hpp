#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "seqdistill/num/tape.hpp"

namespace seqdistill::num {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamHyper hyper;
  long long t = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

// One bias-corrected Adam update over every non-frozen param, then t += 1.
// Frozen params are left bit-identical whatever their grad holds.
template <class T>
void adam_step(const std::vector<Param<T>*>& params, AdamState<T>& state) {
  state.t += 1;
  const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (Param<T>* p : params) {
    if (p->frozen) continue;
    require(p->grad.shape == p->value.shape, "adam_step: grad shape mismatch for " + p->name);
    auto [mit, mnew] = state.m.try_emplace(p->name, p->value.shape);
    auto [vit, vnew] = state.v.try_emplace(p->name, p->value.shape);
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    require(m.shape == p->value.shape && v.shape == p->value.shape, "adam_step: moment shape mismatch for " + p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p->value[i] = static_cast<T>(p->value[i] - state.hyper.lr * mhat / (std::sqrt(vhat) + state.hyper.eps));
    }
  }
}

template <class T>
void zero_grads(const std::vector<Param<T>*>& params) {
  for (Param<T>* p : params) p->zero_grad();
}

}  // namespace seqdistill::num
