#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "seqdistill/enc/encoder.hpp"

namespace seqdistill::distill {

using num::ParamStore;
using num::Tape;
using num::Tensor;
using num::Var;

enum class DistillKind { mse, contrastive };

inline DistillKind parse_distill_kind(const std::string& s) {
  if (s == "mse") return DistillKind::mse;
  if (s == "contrastive") return DistillKind::contrastive;
  fail(ErrorKind::config, "unknown distill kind '" + s + "' (expected mse or contrastive)");
}
inline const char* to_string(DistillKind k) { return k == DistillKind::mse ? "mse" : "contrastive"; }

// ------------------------------------------------------------------- losses

// -log softmax(scores)[0]; scores is [C] or [1, C] with the positive first.
template <class T>
Var<T> loss_retrieval(Var<T> scores) {
  require(scores.size() >= 2, "retrieval loss needs at least one negative");
  Var<T> row = num::reshape(scores, {1, scores.size()});
  return num::scale(num::take(num::log_softmax(row), {0}, {1}), T(-1));
}

// Mean over batch and coordinates of (cf - user)^2.
template <class T>
Var<T> loss_distill_mse(Var<T> cf_out, Var<T> user_out) {
  Var<T> diff = num::sub(cf_out, user_out);
  return num::mean(num::mul(diff, diff));
}

// Mean over ordered pairs u != u' of exp(-2 |g_u - g_u'|^2), g = l2-normalized rows.
template <class T>
Var<T> uniformity_term(Var<T> x) {
  const std::size_t B = x.value().rows();
  Var<T> g = num::l2_normalize(x);
  Var<T> e = num::exp(num::scale(num::sqdist_rows(g, g), T(-2)));
  // Self-pairs contribute exactly 1 each with zero gradient.
  Var<T> off = num::sub(num::sum(e), x.tape->constant(Tensor<T>::scalar(static_cast<T>(B))));
  return num::scale(off, T(1) / static_cast<T>(B * (B - 1)));
}

template <class T>
Var<T> loss_uniform(Var<T> cf_out, Var<T> user_out) {
  if (cf_out.value().rows() < 2) {
    static bool warned = false;
    if (!warned) std::fprintf(stderr, "warning: uniformity loss needs a batch of at least 2; using 0\n");
    warned = true;
    return cf_out.tape->constant(Tensor<T>::scalar(T(0)));
  }
  return num::add(uniformity_term(cf_out), uniformity_term(user_out));
}

// In-batch contrastive distillation: user u must pick its own CF row.
template <class T>
Var<T> loss_distill_contrastive(Var<T> cf_out, Var<T> user_out) {
  const std::size_t B = user_out.value().rows();
  require(B >= 2, "contrastive distillation needs a batch of at least 2");
  Var<T> ls = num::log_softmax(num::matmul(user_out, cf_out, true));
  std::vector<std::size_t> diag(B);
  for (std::size_t b = 0; b < B; ++b) diag[b] = b * B + b;
  return num::scale(num::mean(num::take(ls, diag, {B})), T(-1));
}

struct LossWeights {
  double retrieval = 1.0;
  double distill = 1.0;
  double uniform = 1.0;
};

struct LossBreakdown {
  double retrieval = 0.0;
  double distill = 0.0;
  double uniform = 0.0;
  double total = 0.0;
};

inline LossBreakdown loss_total(double retrieval, double distill, double uniform, const LossWeights& w = {}) {
  const std::pair<const char*, double> parts[] = {{"retrieval", retrieval}, {"distill", distill}, {"uniform", uniform}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) fail(ErrorKind::numeric, std::string("loss part '") + name + "' is not finite");
  return {retrieval, distill, uniform, w.retrieval * retrieval + w.distill * distill + w.uniform * uniform};
}

// ------------------------------------------------------------------- model

struct DistillConfig {
  std::size_t d = 64;         // CF representation width
  std::size_t d_prime = 128;  // shared scoring space
  bool include_user_rep = false;
  std::uint64_t seed = 0;
};

struct DistillBatch {
  std::vector<enc::PromptStream> user_prompts;
  std::vector<enc::PromptStream> item_prompts;  // distinct items referenced by candidates
  std::vector<std::vector<std::size_t>> candidates;  // per user, into item_prompts, positive first
};

template <class T>
struct BatchLosses {
  Var<T> retrieval, distill, uniform, total;
};

template <class T>
class DistillModel {
 public:
  DistillModel(enc::EncoderConfig ecfg, DistillConfig cfg) : enc_(ecfg), cfg_(cfg) {
    num::Rng rng = num::Rng(cfg.seed).split("distill/heads");
    const std::size_t de = ecfg.d_enc;
    f_item_in_ = num::Mlp2<T>(heads_, "f_I", cfg.d, de, rng);
    if (cfg.include_user_rep) f_user_in_ = num::Mlp2<T>(heads_, "f_U", cfg.d, de, rng);
    f_user_ = num::Mlp2<T>(heads_, "f_user", de, cfg.d_prime, rng);
    f_item_ = num::Mlp2<T>(heads_, "f_item", de, cfg.d_prime, rng);
    f_cf_user_ = num::Mlp2<T>(heads_, "f_CF-user", cfg.d, cfg.d_prime, rng);
  }

  DistillModel(const DistillModel&) = delete;
  DistillModel& operator=(const DistillModel&) = delete;
  DistillModel(DistillModel&&) = default;

  const DistillConfig& config() const { return cfg_; }
  const enc::FrozenEncoder<T>& encoder() const { return enc_; }
  enc::FrozenEncoder<T>& encoder() { return enc_; }
  ParamStore<T>& heads() { return heads_; }
  const ParamStore<T>& heads() const { return heads_; }

  std::vector<num::Param<T>*> trainable() const {
    auto out = enc_.params().trainable();
    for (auto* p : heads_.trainable()) out.push_back(p);
    return out;
  }
  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (auto* p : trainable()) out.push_back(p->name);
    return out;
  }

  // f_I over the CF item table [rows, d]; row 0 must be the zero embedding.
  Var<T> item_slots(Tape<T>& t, Var<T> cf_items) const { return f_item_in_(t, cf_items); }
  Var<T> user_slots(Tape<T>& t, Var<T> cf_users) const {
    require(cfg_.include_user_rep, "model was built without the user-representation prompt slot");
    return f_user_in_(t, cf_users);
  }

  // h^u for a batch of user prompts. cf_users (O_u rows) is needed only with
  // the user-representation prompt variant.
  Var<T> user_hidden(Tape<T>& t, const std::vector<enc::PromptStream>& prompts, Var<T> slots,
                     std::optional<Var<T>> cf_users = std::nullopt) const {
    std::optional<Var<T>> z;
    if (cfg_.include_user_rep) {
      require(cf_users.has_value(), "user-representation prompts need O_u rows");
      z = user_slots(t, *cf_users);
    }
    return enc_.encode(t, prompts, slots, z);
  }
  Var<T> item_hidden(Tape<T>& t, const std::vector<enc::PromptStream>& prompts, Var<T> slots) const {
    return enc_.encode(t, prompts, slots);
  }

  Var<T> user_head(Tape<T>& t, Var<T> h) const { return f_user_(t, h); }
  Var<T> item_head(Tape<T>& t, Var<T> h) const { return f_item_(t, h); }
  Var<T> cf_head(Tape<T>& t, Var<T> o) const { return f_cf_user_(t, o); }

  // s(u, i) = f_item(h_i) . f_user(h_u) for one pair of encoded rows.
  T score(const Tensor<T>& h_u, const Tensor<T>& h_i) const {
    Tape<T> t;
    t.set_grad_enabled(false);
    const Tensor<T> a = user_head(t, t.view(h_u)).value();
    const Tensor<T> b = item_head(t, t.view(h_i)).value();
    return num::kernels::dot(a.data.data(), b.data.data(), cfg_.d_prime);
  }

  // The full objective on one batch. cf_items: CF item table with zero row 0;
  // cf_users: O_u per user prompt.
  BatchLosses<T> losses(Tape<T>& t, const DistillBatch& batch, Var<T> cf_items, Var<T> cf_users, DistillKind kind,
                        const LossWeights& w) const {
    const std::size_t B = batch.user_prompts.size();
    require(B > 0 && batch.candidates.size() == B, "distill batch: candidates misaligned with users");
    require(cf_users.value().rows() == B, "distill batch: O_u rows misaligned with users");
    Var<T> slots = item_slots(t, cf_items);
    Var<T> hu = user_hidden(t, batch.user_prompts, slots, cf_users);
    Var<T> hi = item_hidden(t, batch.item_prompts, slots);
    Var<T> fu = user_head(t, hu);
    Var<T> fi = item_head(t, hi);
    Var<T> zero = t.constant(Tensor<T>::scalar(T(0)));
    BatchLosses<T> out{zero, zero, zero, zero};

    if (w.retrieval != 0.0) {
      const std::size_t M = batch.item_prompts.size();
      Var<T> s = num::matmul(fu, fi, true);  // [B, M]
      std::vector<Var<T>> per;
      for (std::size_t b = 0; b < B; ++b) {
        std::vector<std::size_t> idx;
        for (std::size_t c : batch.candidates[b]) {
          require(c < M, "distill batch: candidate index out of range");
          idx.push_back(b * M + c);
        }
        per.push_back(loss_retrieval(num::take(s, idx, {idx.size()})));
      }
      out.retrieval = num::scale(num::sum(num::concat(per, 0)), T(1) / static_cast<T>(B));
    }
    const bool need_cf = w.distill != 0.0 || w.uniform != 0.0;
    if (need_cf) {
      Var<T> fc = cf_head(t, cf_users);
      if (w.distill != 0.0)
        out.distill = kind == DistillKind::mse ? loss_distill_mse(fc, fu) : loss_distill_contrastive(fc, fu);
      if (w.uniform != 0.0) out.uniform = loss_uniform(fc, fu);
    }
    out.total = num::add(num::add(num::scale(out.retrieval, static_cast<T>(w.retrieval)),
                                  num::scale(out.distill, static_cast<T>(w.distill))),
                         num::scale(out.uniform, static_cast<T>(w.uniform)));
    return out;
  }

 private:
  enc::FrozenEncoder<T> enc_;
  DistillConfig cfg_;
  ParamStore<T> heads_;
  num::Mlp2<T> f_item_in_, f_user_in_, f_user_, f_item_, f_cf_user_;
};

}  // namespace seqdistill::distill
