#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "seqdistill/num/tape.hpp"

namespace seqdistill::num {

using LossBuilder = std::function<Var<double>(Tape<double>&)>;

// Max over all coordinates of every non-frozen param of
// |analytic - central difference| / max(1, |central difference|).
inline double grad_check(const LossBuilder& build, const std::vector<Param<double>*>& params, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  double base = 0.0;
  {
    Tape<double> tape;
    Var<double> loss = build(tape);
    base = loss.item();
    tape.backward(loss);
  }
  {
    Tape<double> tape;
    NoGrad<double> ng(tape);
    double again = build(tape).item();
    if (again != base && !(std::isnan(again) && std::isnan(base)))
      fail(ErrorKind::determinism, "loss builder is not deterministic across forward passes");
  }
  auto eval = [&]() {
    Tape<double> tape;
    NoGrad<double> ng(tape);
    return build(tape).item();
  };
  double worst = 0.0;
  for (auto* p : params) {
    if (p->frozen) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(p->grad[i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  for (auto* p : params) p->zero_grad();
  return worst;
}

}  // namespace seqdistill::num
