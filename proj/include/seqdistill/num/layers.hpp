#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "seqdistill/num/init.hpp"
#include "seqdistill/num/ops.hpp"

namespace seqdistill::num {

// Owns a model's named parameters. Addresses are stable for the store's
// lifetime, so layers keep raw Param pointers.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Param<T>& add(const std::string& name, Tensor<T> value, bool frozen = false) {
    require(!index_.count(name), "duplicate parameter name '" + name + "'");
    params_.push_back(std::make_unique<Param<T>>(name, std::move(value), frozen));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  Param<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Param<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  Param<T>& get(const std::string& name) {
    Param<T>* p = find(name);
    require(p != nullptr, "no parameter named '" + name + "'");
    return *p;
  }

  std::vector<Param<T>*> all() const {
    std::vector<Param<T>*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Param<T>*> trainable() const {
    std::vector<Param<T>*> out;
    for (const auto& p : params_)
      if (!p->frozen) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return params_.size(); }

  std::map<std::string, Tensor<T>> snapshot(bool trainable_only = false) const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& p : params_)
      if (!trainable_only || !p->frozen) out.emplace(p->name, p->value);
    return out;
  }

  void restore(const std::map<std::string, Tensor<T>>& snap) {
    for (const auto& [name, value] : snap) {
      Param<T>& p = get(name);
      require(p.value.shape == value.shape, "restore: shape mismatch for '" + name + "'");
      p.value = value;
    }
  }

 private:
  std::vector<std::unique_ptr<Param<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
struct Linear {
  Param<T>* weight = nullptr;  // [in, out]
  Param<T>* bias = nullptr;    // [out]

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool frozen = false) {
    weight = &store.add(name + ".weight", seeded_init<T>({in, out}, InitScheme::uniform_xavier, rng), frozen);
    bias = &store.add(name + ".bias", Tensor<T>(Shape{out}), frozen);
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const { return add_bias(matmul(x, t.param(*weight)), t.param(*bias)); }
};

// Two linear layers with a GELU between; hidden width equals output width.
template <class T>
struct Mlp2 {
  Linear<T> first;
  Linear<T> second;

  Mlp2() = default;
  Mlp2(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : first(store, name + ".0", in, out, rng), second(store, name + ".1", out, out, rng) {}

  Var<T> operator()(Tape<T>& t, Var<T> x) const { return second(t, gelu(first(t, x))); }
};

template <class T>
struct LayerNorm {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t n, bool frozen = false, T epsilon = T(1e-5))
      : eps(epsilon) {
    gamma = &store.add(name + ".gamma", Tensor<T>(Shape{n}, T(1)), frozen);
    beta = &store.add(name + ".beta", Tensor<T>(Shape{n}), frozen);
  }

  Var<T> operator()(Tape<T>& t, Var<T> x) const { return layer_norm(x, t.param(*gamma), t.param(*beta), eps); }
};

// Inverted dropout; identity when rng is null or rate is zero.
template <class T>
Var<T> dropout(Var<T> x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  Tensor<T> mask(x.shape());
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask.data) m = rng->uniform01() < rate ? T(0) : keep;
  return mul(x, x.tape->constant(std::move(mask)));
}

// Additive-logit mask value. Finite so fully masked rows stay defined.
template <class T>
inline constexpr T kMaskedLogit = T(-1e9);

// Multi-head scaled dot-product attention over [B, L, d] inputs. mask has
// shape [B, L, L] or [L, L]; a set entry forbids attending to that key.
template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t num_heads, Rng& rng,
                     bool frozen = false)
      : q(store, name + ".q", d, d, rng, frozen),
        k(store, name + ".k", d, d, rng, frozen),
        v(store, name + ".v", d, d, rng, frozen),
        o(store, name + ".o", d, d, rng, frozen),
        heads(num_heads) {
    require(num_heads > 0 && d % num_heads == 0, "attention width must divide evenly into heads");
  }

  Var<T> operator()(Tape<T>& t, Var<T> query_in, Var<T> kv_in, const std::vector<unsigned char>& mask, double drop = 0.0,
                    Rng* rng = nullptr) const {
    const std::size_t d = query_in.shape().back();
    const std::size_t dh = d / heads;
    Var<T> qa = q(t, query_in), ka = k(t, kv_in), va = v(t, kv_in);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Var<T>> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var<T> qh = heads == 1 ? qa : slice_last(qa, h * dh, dh);
      Var<T> kh = heads == 1 ? ka : slice_last(ka, h * dh, dh);
      Var<T> vh = heads == 1 ? va : slice_last(va, h * dh, dh);
      Var<T> scores = scale(matmul(qh, kh, true), inv_sqrt);
      Var<T> att = softmax(masked_fill(scores, mask, kMaskedLogit<T>));
      att = dropout(att, drop, rng);
      outs.push_back(matmul(att, vh));
    }
    Var<T> merged = heads == 1 ? outs.front() : concat(outs, -1);
    return o(t, merged);
  }
};

// Position-wise feed-forward: Linear(d, hidden) -> act -> Linear(hidden, d).
template <class T>
struct FeedForward {
  Linear<T> up, down;
  bool use_gelu = true;

  FeedForward() = default;
  FeedForward(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t hidden, Rng& rng,
              bool frozen = false, bool gelu_act = true)
      : up(store, name + ".up", d, hidden, rng, frozen), down(store, name + ".down", hidden, d, rng, frozen),
        use_gelu(gelu_act) {}

  Var<T> operator()(Tape<T>& t, Var<T> x, double drop = 0.0, Rng* rng = nullptr) const {
    Var<T> h = up(t, x);
    h = use_gelu ? gelu(h) : relu(h);
    h = dropout(h, drop, rng);
    return down(t, h);
  }
};

}  // namespace seqdistill::num
