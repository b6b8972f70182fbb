#pragma once

// Finite-difference checks for every differentiable primitive. Used by the
// gradcheck command and the test suites.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "seqdistill/num/gradcheck.hpp"
#include "seqdistill/num/init.hpp"
#include "seqdistill/num/layers.hpp"
#include "seqdistill/num/ops.hpp"

namespace seqdistill::selfcheck {

using num::Param;
using num::Rng;
using num::Shape;
using num::Tape;
using num::Tensor;
using num::Var;
using D = double;

inline Tensor<D> rand_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(s);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

struct PrimitiveCase {
  std::string name;
  std::vector<Shape> shapes;
  double lo = -1.0, hi = 1.0;
  std::function<Var<D>(Tape<D>&, std::vector<Var<D>>&)> op;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  using namespace num;
  std::vector<PrimitiveCase> c;
  c.push_back({"add", {{3, 4}, {3, 4}}, -1, 1, [](Tape<D>&, auto& x) { return add(x[0], x[1]); }});
  c.push_back({"sub", {{3, 4}, {3, 4}}, -1, 1, [](Tape<D>&, auto& x) { return sub(x[0], x[1]); }});
  c.push_back({"mul", {{3, 4}, {3, 4}}, -1, 1, [](Tape<D>&, auto& x) { return mul(x[0], x[1]); }});
  c.push_back({"scale", {{5}}, -1, 1, [](Tape<D>&, auto& x) { return scale(x[0], 1.7); }});
  c.push_back({"add_bias", {{2, 3, 4}, {4}}, -1, 1, [](Tape<D>&, auto& x) { return add_bias(x[0], x[1]); }});
  c.push_back({"relu", {{4, 5}}, -1, 1, [](Tape<D>&, auto& x) { return relu(x[0]); }});
  c.push_back({"gelu", {{4, 5}}, -2, 2, [](Tape<D>&, auto& x) { return gelu(x[0]); }});
  c.push_back({"exp", {{4, 5}}, -1, 1, [](Tape<D>&, auto& x) { return exp(x[0]); }});
  c.push_back({"log", {{4, 5}}, 0.5, 2, [](Tape<D>&, auto& x) { return log(x[0]); }});
  c.push_back({"softplus", {{4, 5}}, -3, 3, [](Tape<D>&, auto& x) { return softplus(x[0]); }});
  c.push_back({"sum", {{3, 4}}, -1, 1, [](Tape<D>&, auto& x) { return sum(x[0]); }});
  c.push_back({"mean", {{3, 4}}, -1, 1, [](Tape<D>&, auto& x) { return mean(x[0]); }});
  c.push_back({"matmul", {{3, 4}, {4, 5}}, -1, 1, [](Tape<D>&, auto& x) { return matmul(x[0], x[1]); }});
  c.push_back({"matmul_t", {{2, 3, 4}, {5, 4}}, -1, 1, [](Tape<D>&, auto& x) { return matmul(x[0], x[1], true); }});
  c.push_back({"matmul_batched", {{2, 3, 4}, {2, 4, 3}}, -1, 1, [](Tape<D>&, auto& x) { return matmul(x[0], x[1]); }});
  c.push_back({"matmul_batched_t", {{2, 3, 4}, {2, 5, 4}}, -1, 1,
               [](Tape<D>&, auto& x) { return matmul(x[0], x[1], true); }});
  c.push_back({"dot_rows", {{4, 6}, {4, 6}}, -1, 1, [](Tape<D>&, auto& x) { return dot_rows(x[0], x[1]); }});
  c.push_back({"sqdist_rows", {{3, 5}, {4, 5}}, -1, 1, [](Tape<D>&, auto& x) { return sqdist_rows(x[0], x[1]); }});
  c.push_back({"softmax", {{3, 6}}, -2, 2, [](Tape<D>&, auto& x) { return softmax(x[0]); }});
  c.push_back({"log_softmax", {{3, 6}}, -2, 2, [](Tape<D>&, auto& x) { return log_softmax(x[0]); }});
  c.push_back({"softmax_log", {{3, 6}}, -2, 2, [](Tape<D>&, auto& x) { return log(softmax(x[0])); }});
  c.push_back({"layer_norm", {{3, 6}, {6}, {6}}, -1, 1,
               [](Tape<D>&, auto& x) { return layer_norm(x[0], x[1], x[2]); }});
  c.push_back({"l2_normalize", {{3, 5}}, -1, 1, [](Tape<D>&, auto& x) { return l2_normalize(x[0]); }});
  c.push_back({"reshape", {{3, 4}}, -1, 1, [](Tape<D>&, auto& x) { return reshape(x[0], Shape{2, 6}); }});
  c.push_back({"gather", {{5, 3}}, -1, 1,
               [](Tape<D>&, auto& x) { return gather(x[0], std::vector<int>{0, 3, 3, 1, 4, 0}, Shape{2, 3}); }});
  c.push_back({"gather_rows_multi", {{3, 4}, {2, 4}}, -1, 1, [](Tape<D>&, auto& x) {
                 std::vector<RowRef> refs{{0, 1}, {1, 0}, {-1, 0}, {0, 2}, {1, 1}, {1, 0}};
                 return gather_rows_multi(std::vector<Var<D>>{x[0], x[1]}, refs, Shape{2, 3});
               }});
  c.push_back({"take", {{3, 4}}, -1, 1,
               [](Tape<D>&, auto& x) { return take(x[0], std::vector<std::size_t>{11, 0, 5, 5}, Shape{2, 2}); }});
  c.push_back({"slice_last", {{2, 3, 6}}, -1, 1, [](Tape<D>&, auto& x) { return slice_last(x[0], 2, 3); }});
  c.push_back({"concat_last", {{2, 3}, {2, 2}}, -1, 1,
               [](Tape<D>&, auto& x) { return concat(std::vector<Var<D>>{x[0], x[1]}, -1); }});
  c.push_back({"concat_first", {{2, 3}, {1, 3}}, -1, 1,
               [](Tape<D>&, auto& x) { return concat(std::vector<Var<D>>{x[0], x[1]}, 0); }});
  c.push_back({"masked_fill", {{2, 3, 3}}, -1, 1, [](Tape<D>&, auto& x) {
                 std::vector<unsigned char> m{0, 1, 1, 0, 0, 1, 0, 0, 0};
                 return masked_fill(x[0], m, -5.0);
               }});
  c.push_back({"masked_softmax", {{2, 3, 3}}, -1, 1, [](Tape<D>&, auto& x) {
                 std::vector<unsigned char> m{0, 1, 1, 0, 0, 1, 0, 0, 0};
                 return softmax(masked_fill(x[0], m, num::kMaskedLogit<D>));
               }});
  return c;
}

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
};

// Runs every primitive at `points` random inputs; returns the worst error per
// primitive.
inline std::vector<CheckResult> check_all_primitives(std::uint64_t seed, int points = 10) {
  std::vector<CheckResult> out;
  Rng root(seed, 0);
  for (const auto& pc : primitive_cases()) {
    double worst = 0.0;
    for (int p = 0; p < points; ++p) {
      Rng rng = root.split(pc.name).split(static_cast<std::uint64_t>(p));
      std::vector<std::unique_ptr<Param<D>>> params;
      std::vector<Param<D>*> raw;
      for (std::size_t i = 0; i < pc.shapes.size(); ++i) {
        params.push_back(std::make_unique<Param<D>>(pc.name + std::to_string(i), rand_tensor(pc.shapes[i], rng, pc.lo, pc.hi)));
        raw.push_back(params.back().get());
      }
      Tensor<D> w;
      auto build = [&](Tape<D>& t) {
        std::vector<Var<D>> xs;
        for (auto* pr : raw) xs.push_back(t.param(*pr));
        Var<D> y = pc.op(t, xs);
        if (w.empty()) w = rand_tensor(y.shape(), rng);
        return num::sum(num::mul(y, t.view(w)));
      };
      worst = std::max(worst, num::grad_check(build, raw));
    }
    out.push_back({pc.name, worst});
  }
  return out;
}

}  // namespace seqdistill::selfcheck
