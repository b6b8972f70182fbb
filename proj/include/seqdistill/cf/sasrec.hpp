#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "seqdistill/data/split.hpp"
#include "seqdistill/eval/metrics.hpp"
#include "seqdistill/num/adam.hpp"
#include "seqdistill/num/layers.hpp"

namespace seqdistill::cf {

using num::ParamStore;
using num::Tape;
using num::Tensor;
using num::Var;

struct SasrecConfig {
  std::size_t d = 64;
  std::size_t blocks = 2;
  std::size_t heads = 1;
  std::size_t max_len = 50;
  double dropout = 0.2;
  std::uint64_t seed = 0;
};

struct CfTrainConfig {
  std::size_t batch_size = 128;
  double lr = 1e-4;
  std::size_t max_epochs = 200;
  std::size_t negatives = 1;  // per position
  double eval_every = 0.1;    // fraction of an epoch
  std::size_t patience = 10;  // evaluation points without improvement
  std::size_t valid_users = 0;  // 0 = every user
  std::uint64_t seed = 0;
  bool restore_best = true;  // false keeps the final weights
  bool verbose = false;
};

// Left-padded window of the most recent max_len items; ids shifted by one so
// that 0 is padding.
inline std::vector<int> pad_window(const data::Sequence& seq, std::size_t max_len) {
  std::vector<int> w(max_len, 0);
  const std::size_t n = std::min(seq.size(), max_len);
  const std::size_t off = seq.size() - n;
  for (std::size_t k = 0; k < n; ++k) w[max_len - n + k] = seq[off + k].item + 1;
  return w;
}

class SasrecModel {
 public:
  SasrecModel(std::size_t num_items, SasrecConfig cfg) : cfg_(cfg), num_items_(num_items) {
    require(num_items > 0, "SASRec needs at least one item");
    num::Rng rng = num::Rng(cfg.seed).split("sasrec/init");
    auto emb = num::seeded_init<float>({num_items + 1, cfg.d}, num::InitScheme::uniform_xavier, rng);
    std::fill_n(emb.data.begin(), cfg.d, 0.0f);
    item_emb_ = &store_.add("item_emb", std::move(emb));
    pos_emb_ = &store_.add("pos_emb", num::seeded_init<float>({cfg.max_len, cfg.d}, num::InitScheme::uniform_xavier, rng));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      const std::string p = "block" + std::to_string(b);
      blocks_.push_back({num::LayerNorm<float>(store_, p + ".attn_ln", cfg.d, false, 1e-8f),
                         num::MultiHeadAttention<float>(store_, p + ".attn", cfg.d, cfg.heads, rng),
                         num::LayerNorm<float>(store_, p + ".ffn_ln", cfg.d, false, 1e-8f),
                         num::FeedForward<float>(store_, p + ".ffn", cfg.d, cfg.d, rng, false, false)});
    }
    last_ln_ = num::LayerNorm<float>(store_, "last_ln", cfg.d, false, 1e-8f);
  }

  SasrecModel(const SasrecModel&) = delete;
  SasrecModel& operator=(const SasrecModel&) = delete;
  SasrecModel(SasrecModel&&) = default;

  const SasrecConfig& config() const { return cfg_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t dim() const { return cfg_.d; }
  ParamStore<float>& params() { return store_; }
  const ParamStore<float>& params() const { return store_; }
  const Tensor<float>& embedding_table() const { return item_emb_->value; }

  // windows: B rows of max_len padded ids. Returns hidden states [B, L, d].
  // Dropout is active only when rng is given.
  Var<float> forward(Tape<float>& t, const std::vector<std::vector<int>>& windows, num::Rng* rng = nullptr) const {
    const std::size_t B = windows.size(), L = cfg_.max_len, d = cfg_.d;
    require(B > 0, "sasrec_forward: empty batch");
    std::vector<int> ids;
    ids.reserve(B * L);
    std::vector<unsigned char> pad(B * L);
    for (std::size_t b = 0; b < B; ++b) {
      require(windows[b].size() == L, "sasrec_forward: window length must equal max_len");
      for (std::size_t k = 0; k < L; ++k) {
        const int id = windows[b][k];
        require(id >= 0 && static_cast<std::size_t>(id) <= num_items_, "sasrec_forward: item id out of range");
        ids.push_back(id);
        pad[b * L + k] = id == 0;
      }
    }
    // Query q may attend key k only if k <= q and k is not padding.
    std::vector<unsigned char> mask(B * L * L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t q = 0; q < L; ++q)
        for (std::size_t k = 0; k < L; ++k) mask[(b * L + q) * L + k] = k > q || pad[b * L + k];
    Tensor<float> keep({B, L, d});
    for (std::size_t r = 0; r < B * L; ++r)
      if (!pad[r]) std::fill_n(keep.row(r), d, 1.0f);
    Var<float> keep_v = t.constant(std::move(keep));

    std::vector<int> positions(B * L);
    for (std::size_t r = 0; r < B * L; ++r) positions[r] = static_cast<int>(r % L);
    Var<float> x = num::scale(num::gather(t.param(*item_emb_), ids, {B, L}, 0), std::sqrt(static_cast<float>(d)));
    x = num::add(x, num::gather(t.param(*pos_emb_), positions, {B, L}));
    x = num::dropout(x, cfg_.dropout, rng);
    x = num::mul(x, keep_v);
    for (const Block& blk : blocks_) {
      Var<float> q = blk.attn_ln(t, x);
      x = num::add(q, blk.attn(t, q, x, mask, cfg_.dropout, rng));
      x = blk.ffn_ln(t, x);
      x = num::add(x, num::dropout(blk.ffn(t, x, cfg_.dropout, rng), cfg_.dropout, rng));
      x = num::mul(x, keep_v);
    }
    return last_ln_(t, x);
  }

  // Final hidden state at the last position for each history (O_u). Empty
  // histories give a zero row.
  Tensor<float> user_reps(const std::vector<data::Sequence>& histories, std::size_t chunk = 256) const {
    const std::size_t d = cfg_.d, L = cfg_.max_len;
    Tensor<float> out({std::max<std::size_t>(histories.size(), 1), d});
    for (std::size_t s = 0; s < histories.size(); s += chunk) {
      const std::size_t e = std::min(histories.size(), s + chunk);
      std::vector<std::vector<int>> windows;
      for (std::size_t k = s; k < e; ++k) windows.push_back(pad_window(histories[k], L));
      Tape<float> t;
      t.set_grad_enabled(false);
      const Tensor<float>& h = forward(t, windows).value();
      for (std::size_t k = s; k < e; ++k) {
        if (histories[k].empty()) continue;
        std::copy_n(h.row((k - s) * L + (L - 1)), d, out.row(k));
      }
    }
    return out;
  }

  // Rows 1..|I| of the embedding table.
  Tensor<float> item_embeddings() const {
    const std::size_t d = cfg_.d;
    Tensor<float> out({num_items_, d});
    std::copy(item_emb_->value.data.begin() + static_cast<std::ptrdiff_t>(d), item_emb_->value.data.end(), out.data.begin());
    return out;
  }

  float score(const float* user_rep, int item) const {
    return num::kernels::dot(user_rep, item_emb_->value.row(static_cast<std::size_t>(item) + 1), cfg_.d);
  }

 private:
  struct Block {
    num::LayerNorm<float> attn_ln;
    num::MultiHeadAttention<float> attn;
    num::LayerNorm<float> ffn_ln;
    num::FeedForward<float> ffn;
  };

  SasrecConfig cfg_;
  std::size_t num_items_;
  ParamStore<float> store_;
  num::Param<float>* item_emb_ = nullptr;
  num::Param<float>* pos_emb_ = nullptr;
  std::vector<Block> blocks_;
  num::LayerNorm<float> last_ln_;
};

// O_u over each user's full training prefix, aligned with split.users.
inline Tensor<float> extract_cf_reps(const SasrecModel& m, const data::SplitSpec& split) {
  std::vector<data::Sequence> hist;
  hist.reserve(split.users.size());
  for (const auto& us : split.users) hist.push_back(us.train);
  return m.user_reps(hist);
}

inline Tensor<float> export_item_embeddings(const SasrecModel& m) { return m.item_embeddings(); }

// Metrics of a representation-based scorer on one phase, over the users at
// the given positions in split.users.
inline eval::MetricSums score_reps_on(const SasrecModel& m, const Tensor<float>& reps,
                                      const std::vector<data::CandidateSet>& cands, const std::vector<std::size_t>& which) {
  eval::MetricSums sums;
  std::vector<float> scores;
  for (std::size_t r = 0; r < which.size(); ++r) {
    const auto& cs = cands[which[r]];
    const std::vector<int> items = cs.items();
    scores.resize(items.size());
    for (std::size_t j = 0; j < items.size(); ++j) scores[j] = m.score(reps.row(r), items[j]);
    sums.add(eval::pessimistic_rank(scores, 0));
  }
  return sums;
}

struct CfLogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_ndcg10 = 0.0;
};

struct CfTrainResult {
  std::vector<CfLogRow> log;
  double best_valid_ndcg10 = 0.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  double first_epoch_loss = 0.0;
  bool early_stopped = false;

  std::string log_csv() const {
    std::string out = "step,train_loss,valid_ndcg10\n";
    char buf[96];
    for (const auto& r : log) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", r.step, r.train_loss, r.valid_ndcg10);
      out += buf;
    }
    return out;
  }
};

// Next-item training over every prefix position with BCE on the positive and
// sampled negatives. Evaluates validation NDCG@10 every eval_every of an
// epoch and restores the best evaluation point at the end.
inline CfTrainResult train_sasrec(SasrecModel& model, const data::InteractionDataset& ds, const data::SplitSpec& split,
                                  const data::EvalCandidates& cands, const CfTrainConfig& cfg) {
  require(cfg.batch_size > 0 && cfg.patience >= 1 && cfg.negatives >= 1 && cfg.lr > 0 && cfg.eval_every > 0,
          "invalid CF training config");
  const std::size_t L = model.config().max_len, d = model.dim();
  num::Rng rng = num::Rng(cfg.seed).split("sasrec/train");

  std::vector<std::size_t> trainable;
  for (std::size_t k = 0; k < split.users.size(); ++k)
    if (split.users[k].train.size() >= 2) trainable.push_back(k);
  require(!trainable.empty(), "no user has a training sequence of length >= 2");

  std::vector<std::unordered_set<int>> seen(split.users.size());
  for (std::size_t k = 0; k < split.users.size(); ++k)
    for (const auto& e : ds.sequence(split.users[k].user)) seen[k].insert(e.item);

  std::vector<std::size_t> valid_idx(split.users.size());
  for (std::size_t k = 0; k < valid_idx.size(); ++k) valid_idx[k] = k;
  if (cfg.valid_users > 0 && cfg.valid_users < valid_idx.size()) {
    num::Rng vr = rng.split("valid-subset");
    valid_idx = vr.sample(valid_idx, cfg.valid_users);
    std::sort(valid_idx.begin(), valid_idx.end());
  }
  std::vector<data::Sequence> valid_hist;
  for (std::size_t k : valid_idx) valid_hist.push_back(split.history(k, data::Phase::valid));
  auto validate = [&]() {
    Tensor<float> reps = model.user_reps(valid_hist);
    auto s = score_reps_on(model, reps, cands.valid, valid_idx);
    return eval::finalize(s).at("NDCG@10");
  };

  const std::size_t steps_per_epoch = (trainable.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t interval =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.eval_every * static_cast<double>(steps_per_epoch))));

  num::AdamState<float> adam;
  adam.hyper.lr = cfg.lr;
  auto params = model.params().all();
  CfTrainResult res;
  res.best_valid_ndcg10 = -1.0;
  auto best = model.params().snapshot();
  std::size_t since_best = 0;
  double loss_acc = 0.0;
  std::size_t loss_n = 0;
  bool stop = false;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    std::vector<std::size_t> order = trainable;
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch && !stop; ++s) {
      const std::size_t b0 = s * cfg.batch_size, b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::vector<std::vector<int>> windows;
      std::vector<int> rows, pos_ids, neg_ids;
      for (std::size_t b = b0; b < b1; ++b) {
        const std::size_t k = order[b];
        const data::Sequence& tr = split.users[k].train;
        data::Sequence input(tr.begin(), tr.end() - 1);
        windows.push_back(pad_window(input, L));
        const std::size_t n = std::min(input.size(), L);
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t slot = L - n + j;
          const int target = tr[tr.size() - n + j].item;
          for (std::size_t q = 0; q < cfg.negatives; ++q) {
            rows.push_back(static_cast<int>((b - b0) * L + slot));
            pos_ids.push_back(target + 1);
            int neg;
            do neg = static_cast<int>(rng.uniform_int(model.num_items()));
            while (seen[k].count(neg) && seen[k].size() < model.num_items());
            neg_ids.push_back(neg + 1);
          }
        }
      }
      num::zero_grads(params);
      Tape<float> t;
      Var<float> h = model.forward(t, windows, &rng);
      const std::size_t n = rows.size();
      Var<float> feats = num::gather(num::reshape(h, {windows.size() * L, d}), rows, {n});
      Var<float> table = t.param(model.params().get("item_emb"));
      Var<float> pos = num::dot_rows(feats, num::gather(table, pos_ids, {n}));
      Var<float> neg = num::dot_rows(feats, num::gather(table, neg_ids, {n}));
      Var<float> loss = num::add(num::mean(num::softplus(num::scale(pos, -1.0f))), num::mean(num::softplus(neg)));
      const double lv = loss.item();
      if (!std::isfinite(lv))
        fail(ErrorKind::numeric, "SASRec training diverged at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(res.steps) + " (loss " + std::to_string(lv) + ")");
      t.backward(loss);
      num::adam_step(params, adam);
      ++res.steps;
      epoch_loss += lv;
      loss_acc += lv;
      ++loss_n;

      if (res.steps % interval == 0 || (s + 1 == steps_per_epoch && epoch + 1 == cfg.max_epochs)) {
        const double v = validate();
        res.log.push_back({res.steps, epoch, loss_acc / static_cast<double>(loss_n), v});
        if (cfg.verbose)
          std::fprintf(stderr, "[sasrec] epoch %zu step %zu loss %.4f valid NDCG@10 %.4f\n", epoch, res.steps,
                       loss_acc / static_cast<double>(loss_n), v);
        loss_acc = 0.0;
        loss_n = 0;
        if (v > res.best_valid_ndcg10) {
          res.best_valid_ndcg10 = v;
          res.best_step = res.steps;
          best = model.params().snapshot();
          since_best = 0;
        } else if (++since_best >= cfg.patience) {
          stop = true;
          res.early_stopped = true;
        }
      }
    }
    if (epoch == 0) res.first_epoch_loss = epoch_loss / static_cast<double>(steps_per_epoch);
  }
  if (cfg.restore_best) model.params().restore(best);
  return res;
}

// Order-invariant contrast model: the user representation is the mean of the
// history's item embeddings, summed in ascending item order so any
// permutation gives bit-identical output.
class BagModel {
 public:
  explicit BagModel(Tensor<float> table) : table_(std::move(table)) {}  // [|I|+1, d], row 0 padding
  static BagModel from_sasrec(const SasrecModel& m) { return BagModel(m.embedding_table()); }

  std::size_t dim() const { return table_.cols(); }
  const Tensor<float>& table() const { return table_; }

  std::vector<float> forward(const data::Sequence& seq) const {
    const std::size_t d = dim();
    std::vector<float> out(d, 0.0f);
    if (seq.empty()) return out;
    std::vector<int> items;
    for (const auto& e : seq) items.push_back(e.item);
    std::sort(items.begin(), items.end());
    for (int i : items) num::kernels::axpy(out.data(), table_.row(static_cast<std::size_t>(i) + 1), 1.0f, d);
    const float inv = 1.0f / static_cast<float>(items.size());
    for (auto& v : out) v *= inv;
    return out;
  }

  Tensor<float> user_reps(const std::vector<data::Sequence>& histories) const {
    Tensor<float> out({std::max<std::size_t>(histories.size(), 1), dim()});
    for (std::size_t k = 0; k < histories.size(); ++k) {
      auto r = forward(histories[k]);
      std::copy(r.begin(), r.end(), out.row(k));
    }
    return out;
  }

  float score(const float* user_rep, int item) const {
    return num::kernels::dot(user_rep, table_.row(static_cast<std::size_t>(item) + 1), dim());
  }

 private:
  Tensor<float> table_;
};

}  // namespace seqdistill::cf
