#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seqdistill/num/tensor.hpp"

namespace seqdistill::num {

// Named trainable (or frozen) array. Frozen params never receive gradient
// accumulation and are skipped by the optimizer.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  Param(std::string n, Tensor<T> v, bool is_frozen = false)
      : name(std::move(n)), value(std::move(v)), grad(value.shape), frozen(is_frozen) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), T(0)); }
};

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  T item() const { return value().item(); }
  bool requires_grad() const { return tape->needs_grad(id); }
};

template <class T>
using GradMap = std::map<std::string, const Tensor<T>*>;

// Records executed primitives in execution order; backward() walks the
// records once in reverse.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out, const Tensor<T>& out)>;

  struct Node {
    const char* op = "leaf";
    Tensor<T> own;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Param<T>* param = nullptr;
    std::vector<int> inputs;
    BackwardFn backward;

    const Tensor<T>& value() const { return external ? *external : own; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  Var<T> constant(Tensor<T> v) {
    Node& n = nodes_.emplace_back();
    n.op = "constant";
    n.own = std::move(v);
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  // Constant that aliases caller-owned storage; the tensor must outlive the tape.
  Var<T> view(const Tensor<T>& v) {
    Node& n = nodes_.emplace_back();
    n.op = "constant";
    n.external = &v;
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  // Differentiable leaf not bound to a Param (used by gradient checks).
  Var<T> leaf(const Tensor<T>& v) {
    Node& n = nodes_.emplace_back();
    n.op = "leaf";
    n.external = &v;
    n.requires_grad = grad_enabled_;
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  Var<T> param(Param<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node& n = nodes_.emplace_back();
    n.op = "param";
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_ && !p.frozen;
    int id = static_cast<int>(nodes_.size() - 1);
    param_nodes_.emplace(&p, id);
    return {this, id};
  }

  Var<T> record(const char* op, Tensor<T> value, std::vector<int> inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
      for (int i : inputs) needs = needs || nodes_[static_cast<std::size_t>(i)].requires_grad;
    Node& n = nodes_.emplace_back();
    n.op = op;
    n.own = std::move(value);
    n.requires_grad = needs;
    if (needs) {
      n.inputs = std::move(inputs);
      n.backward = std::move(fn);
    }
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value(); }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }

  // Gradient buffer of a node, allocated on first use.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    param_nodes_.clear();
  }

  // Reverse pass from a scalar loss. Gradients of reachable non-frozen Params
  // are added into Param::grad; the returned map lists them by name.
  GradMap<T> backward(Var<T> loss) {
    require(loss.tape == this, "loss was not recorded on this tape");
    const Tensor<T>& lv = value(loss.id);
    require(lv.size() == 1, "backward needs a scalar loss, got shape " + shape_str(lv.shape));
    GradMap<T> out;
    if (!needs_grad(loss.id)) return out;
    grad(loss.id).data[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        n.backward(*this, n.grad, n.value());
        for (int in : n.inputs) {
          const Node& src = nodes_[static_cast<std::size_t>(in)];
          if (src.requires_grad && !src.grad.empty() && !src.grad.all_finite())
            fail(ErrorKind::numeric, std::string("non-finite gradient produced by backward of '") + n.op + "'");
        }
      }
      if (n.param && !n.param->frozen) {
        Tensor<T>& pg = n.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg.data[k] += n.grad.data[k];
        out.emplace(n.param->name, &pg);
      }
    }
    return out;
  }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<const Param<T>*, int> param_nodes_;
  bool grad_enabled_ = true;
};

// Scoped no-grad region.
template <class T>
class NoGrad {
 public:
  explicit NoGrad(Tape<T>& t) : tape_(t), prev_(t.grad_enabled()) { t.set_grad_enabled(false); }
  ~NoGrad() { tape_.set_grad_enabled(prev_); }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape<T>& tape_;
  bool prev_;
};

}  // namespace seqdistill::num
