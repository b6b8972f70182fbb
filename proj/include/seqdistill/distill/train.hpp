#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "seqdistill/cf/sasrec.hpp"
#include "seqdistill/distill/model.hpp"
#include "seqdistill/eval/evaluate.hpp"

namespace seqdistill::distill {

// Prompt streams for one dataset. Items of a dataset without a CF model
// (cross-domain targets) all point at slot row 0, the zero CF embedding.
class PromptBuilder {
 public:
  PromptBuilder(const data::InteractionDataset& ds, enc::HashSpace space, enc::PromptOptions opts, bool has_cf)
      : opts_(opts), space_(space), has_cf_(has_cf) {
    tokens_.reserve(ds.num_items());
    for (std::size_t i = 0; i < ds.num_items(); ++i) tokens_.push_back(enc::hash_title_tokens(ds.title(static_cast<int>(i)), space));
  }

  const enc::PromptOptions& options() const { return opts_; }
  std::size_t num_items() const { return tokens_.size(); }
  int slot(int item) const { return has_cf_ ? item + 1 : 0; }

  enc::PromptStream user_prompt(const data::Sequence& seq) const {
    std::vector<enc::PromptItem> items;
    items.reserve(seq.size());
    for (const auto& e : seq) items.push_back({tokens(e.item), e.ts, slot(e.item)});
    return enc::assemble_user_prompt(items, space_, opts_);
  }
  enc::PromptStream item_prompt(int item) const { return enc::assemble_item_prompt(tokens(item), slot(item)); }

 private:
  const std::vector<int>& tokens(int item) const {
    require(item >= 0 && static_cast<std::size_t>(item) < tokens_.size(), "prompt: item id out of range");
    return tokens_[static_cast<std::size_t>(item)];
  }

  enc::PromptOptions opts_;
  enc::HashSpace space_;
  bool has_cf_;
  std::vector<std::vector<int>> tokens_;
};

// CF item table with a zero row 0 followed by the exported item embeddings.
inline Tensor<float> cf_item_table(const cf::SasrecModel& cf) {
  Tensor<float> t = cf.embedding_table();
  std::fill_n(t.data.begin(), t.cols(), 0.0f);
  return t;
}

class DistillRecommender : public eval::Recommender {
 public:
  // cf may be null (cross-domain target): every slot then carries f_I(0) and
  // O_u is the zero vector.
  DistillRecommender(const DistillModel<float>& m, const data::InteractionDataset& ds, const cf::SasrecModel* cf,
                     enc::PromptOptions opts, std::size_t chunk = 64)
      : m_(m), cf_(cf), pb_(ds, m.encoder().space(), opts, cf != nullptr), chunk_(chunk) {
    cf_items_ = cf ? cf_item_table(*cf) : Tensor<float>({1, m.config().d});
    const std::size_t n = ds.num_items();
    Tensor<float> out({std::max<std::size_t>(n, 1), m.config().d_prime});
    for (std::size_t s = 0; s < n; s += chunk_) {
      const std::size_t e = std::min(n, s + chunk_);
      std::vector<enc::PromptStream> prompts;
      for (std::size_t i = s; i < e; ++i) prompts.push_back(pb_.item_prompt(static_cast<int>(i)));
      Tape<float> t;
      t.set_grad_enabled(false);
      Var<float> slots = m_.item_slots(t, t.view(cf_items_));
      const Tensor<float>& v = m_.item_head(t, m_.item_hidden(t, prompts, slots)).value();
      std::copy(v.data.begin(), v.data.end(), out.row(s));
    }
    items_ = std::move(out);
  }

  std::string kind() const override { return "distill"; }
  const PromptBuilder& prompts() const { return pb_; }

  Tensor<float> user_reps(const std::vector<data::Sequence>& histories) const override {
    const std::size_t de = m_.encoder().dim();
    Tensor<float> out({std::max<std::size_t>(histories.size(), 1), de});
    for (std::size_t s = 0; s < histories.size(); s += chunk_) {
      const std::size_t e = std::min(histories.size(), s + chunk_);
      std::vector<data::Sequence> part(histories.begin() + static_cast<std::ptrdiff_t>(s),
                                       histories.begin() + static_cast<std::ptrdiff_t>(e));
      std::vector<enc::PromptStream> prompts;
      for (const auto& h : part) prompts.push_back(pb_.user_prompt(h));
      Tape<float> t;
      t.set_grad_enabled(false);
      Var<float> slots = m_.item_slots(t, t.view(cf_items_));
      std::optional<Var<float>> o;
      if (m_.config().include_user_rep)
        o = t.constant(cf_ ? cf_->user_reps(part) : Tensor<float>({part.size(), m_.config().d}));
      const Tensor<float>& h = m_.user_hidden(t, prompts, slots, o).value();
      std::copy(h.data.begin(), h.data.end(), out.row(s));
    }
    return out;
  }

  Tensor<float> user_vectors(const Tensor<float>& reps) const override {
    Tape<float> t;
    t.set_grad_enabled(false);
    return m_.user_head(t, t.view(reps)).value();
  }

  const Tensor<float>& item_vectors() const override { return items_; }

 private:
  const DistillModel<float>& m_;
  const cf::SasrecModel* cf_;
  PromptBuilder pb_;
  std::size_t chunk_;
  Tensor<float> cf_items_;
  Tensor<float> items_;
};

enum class Regime { last_item, auto_regressive };

inline Regime parse_regime(const std::string& s) {
  if (s == "last-item") return Regime::last_item;
  if (s == "auto-regressive") return Regime::auto_regressive;
  fail(ErrorKind::config, "unknown distill regime '" + s + "' (expected last-item or auto-regressive)");
}
inline const char* to_string(Regime r) { return r == Regime::last_item ? "last-item" : "auto-regressive"; }

struct DistillTrainConfig {
  std::size_t m_train = 32;
  std::size_t batch_size = 20;
  double lr = 1e-4;
  std::size_t max_epochs = 10;
  double eval_every = 0.1;
  std::size_t patience = 10;
  Regime regime = Regime::last_item;
  DistillKind kind = DistillKind::mse;
  LossWeights weights;
  enc::PromptOptions prompt;
  std::size_t valid_users = 0;  // 0 = every user
  std::uint64_t seed = 0;
  bool restore_best = true;
  bool verbose = false;
};

struct DistillLogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
  double valid_ndcg10 = 0.0;
};

struct DistillTrainResult {
  std::vector<DistillLogRow> log;
  double best_valid_ndcg10 = -1.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  std::size_t examples_per_epoch = 0;
  bool early_stopped = false;

  std::string log_csv() const {
    std::string out = "step,L_retrieval,L_distill,L_uniform,L_total,valid_ndcg10\n";
    char buf[160];
    for (const auto& r : log) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.step, r.loss.retrieval, r.loss.distill,
                    r.loss.uniform, r.loss.total, r.valid_ndcg10);
      out += buf;
    }
    return out;
  }
};

struct DistillExample {
  std::size_t user = 0;   // position in split.users
  std::size_t length = 0;  // input prefix = train[0, length)
};

inline std::vector<DistillExample> distill_examples(const data::SplitSpec& split, Regime regime) {
  std::vector<DistillExample> out;
  for (std::size_t k = 0; k < split.users.size(); ++k) {
    const std::size_t n = split.users[k].train.size();
    if (n < 2) continue;
    if (regime == Regime::last_item) {
      out.push_back({k, n - 1});
    } else {
      for (std::size_t j = 1; j < n; ++j) out.push_back({k, j});
    }
  }
  return out;
}

// Only f_I, (f_U), f_user, f_item, f_CF-user and the two special rows
// change. O_u for an example is the CF representation of the same prefix
// the encoder sees.
inline DistillTrainResult train_distill(DistillModel<float>& model, const data::InteractionDataset& ds,
                                        const data::SplitSpec& split, const data::EvalCandidates& cands,
                                        const cf::SasrecModel& cf, const DistillTrainConfig& cfg) {
  require(cfg.m_train >= 1 && cfg.patience >= 1 && cfg.batch_size > 0 && cfg.lr > 0 && cfg.eval_every > 0,
          "invalid distill training config");
  require(cf.dim() == model.config().d, "CF width does not match the distill model");
  num::Rng rng = num::Rng(cfg.seed).split("distill/train");
  const std::string enc_hash = model.encoder().frozen_hash();
  const auto cf_before = cf.params().snapshot();

  const std::vector<DistillExample> examples = distill_examples(split, cfg.regime);
  require(!examples.empty(), "no user has a training sequence of length >= 2");
  PromptBuilder pb(ds, model.encoder().space(), cfg.prompt, true);
  const Tensor<float> cf_items = cf_item_table(cf);

  std::vector<std::unordered_set<int>> seen(split.users.size());
  for (std::size_t k = 0; k < split.users.size(); ++k)
    for (const auto& e : ds.sequence(split.users[k].user)) seen[k].insert(e.item);

  std::vector<std::size_t> valid_idx;
  for (std::size_t k = 0; k < split.users.size(); ++k) valid_idx.push_back(k);
  if (cfg.valid_users > 0 && cfg.valid_users < valid_idx.size()) {
    valid_idx = rng.split("valid-subset").sample(valid_idx, cfg.valid_users);
    std::sort(valid_idx.begin(), valid_idx.end());
  }
  auto validate = [&]() {
    DistillRecommender rec(model, ds, &cf, cfg.prompt);
    eval::EvalOptions opt;
    opt.users = valid_idx;
    return eval::evaluate(rec, split, cands, data::Phase::valid, opt).at("NDCG@10");
  };

  const std::size_t steps_per_epoch = (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t interval =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.eval_every * static_cast<double>(steps_per_epoch))));
  num::AdamState<float> adam;
  adam.hyper.lr = cfg.lr;
  const auto params = model.trainable();
  DistillTrainResult res;
  res.examples_per_epoch = examples.size();
  auto best = model.encoder().params().snapshot(true);
  auto best_heads = model.heads().snapshot();
  std::size_t since_best = 0;
  LossBreakdown acc;
  std::size_t acc_n = 0;
  bool stop = false;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t s = 0; s < steps_per_epoch && !stop; ++s) {
      const std::size_t b0 = s * cfg.batch_size, b1 = std::min(order.size(), b0 + cfg.batch_size);
      DistillBatch batch;
      std::vector<data::Sequence> inputs;
      std::map<int, std::size_t> item_pos;
      auto item_index = [&](int item) {
        auto [it, fresh] = item_pos.try_emplace(item, batch.item_prompts.size());
        if (fresh) batch.item_prompts.push_back(pb.item_prompt(item));
        return it->second;
      };
      for (std::size_t b = b0; b < b1; ++b) {
        const DistillExample& ex = examples[order[b]];
        const data::Sequence& tr = split.users[ex.user].train;
        inputs.emplace_back(tr.begin(), tr.begin() + static_cast<std::ptrdiff_t>(ex.length));
        batch.user_prompts.push_back(pb.user_prompt(inputs.back()));
        std::vector<std::size_t> c{item_index(tr[ex.length].item)};
        for (int neg : data::sample_negatives(seen[ex.user], ds.num_items(), cfg.m_train, rng, nullptr))
          c.push_back(item_index(neg));
        batch.candidates.push_back(std::move(c));
      }
      const Tensor<float> o_u = cf.user_reps(inputs);

      num::zero_grads(params);
      Tape<float> t;
      auto L = model.losses(t, batch, t.view(cf_items), t.view(o_u), cfg.kind, cfg.weights);
      const LossBreakdown lb = loss_total(L.retrieval.item(), L.distill.item(), L.uniform.item(), cfg.weights);
      t.backward(L.total);
      num::adam_step(params, adam);
      ++res.steps;
      acc.retrieval += lb.retrieval;
      acc.distill += lb.distill;
      acc.uniform += lb.uniform;
      acc.total += lb.total;
      ++acc_n;

      if (res.steps % interval == 0 || (s + 1 == steps_per_epoch && epoch + 1 == cfg.max_epochs)) {
        const double v = validate();
        const double n = static_cast<double>(acc_n);
        res.log.push_back({res.steps, epoch, {acc.retrieval / n, acc.distill / n, acc.uniform / n, acc.total / n}, v});
        if (cfg.verbose)
          std::fprintf(stderr, "[distill] epoch %zu step %zu loss %.4f (ret %.4f dist %.4f uni %.4f) valid NDCG@10 %.4f\n",
                       epoch, res.steps, acc.total / n, acc.retrieval / n, acc.distill / n, acc.uniform / n, v);
        acc = {};
        acc_n = 0;
        if (v > res.best_valid_ndcg10) {
          res.best_valid_ndcg10 = v;
          res.best_step = res.steps;
          best = model.encoder().params().snapshot(true);
          best_heads = model.heads().snapshot();
          since_best = 0;
        } else if (++since_best >= cfg.patience) {
          stop = true;
          res.early_stopped = true;
        }
      }
    }
  }
  if (cfg.restore_best) {
    model.encoder().params().restore(best);
    model.heads().restore(best_heads);
  }
  if (model.encoder().frozen_hash() != enc_hash) fail(ErrorKind::contract, "frozen encoder weights changed during training");
  for (const auto& [name, v] : cf.params().snapshot())
    if (v.data != cf_before.at(name).data) fail(ErrorKind::contract, "CF weights changed during distill training");
  return res;
}

}  // namespace seqdistill::distill
