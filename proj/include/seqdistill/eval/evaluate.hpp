#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "seqdistill/cf/sasrec.hpp"
#include "seqdistill/data/split.hpp"
#include "seqdistill/eval/metrics.hpp"

namespace seqdistill::eval {

using num::Tensor;

// Anything that scores items by a dot product between a user vector and an
// item vector.
class Recommender {
 public:
  virtual ~Recommender() = default;
  virtual std::string kind() const = 0;
  // The model's native user representation (O_u for CF models, h^u for the
  // distilled model).
  virtual Tensor<float> user_reps(const std::vector<data::Sequence>& histories) const = 0;
  // Scoring-space vectors from native representations.
  virtual Tensor<float> user_vectors(const Tensor<float>& reps) const { return reps; }
  virtual const Tensor<float>& item_vectors() const = 0;  // [num_items, dim]
};

class SasrecRecommender : public Recommender {
 public:
  explicit SasrecRecommender(const cf::SasrecModel& m) : m_(m), items_(m.item_embeddings()) {}
  std::string kind() const override { return "sasrec"; }
  Tensor<float> user_reps(const std::vector<data::Sequence>& h) const override { return m_.user_reps(h); }
  const Tensor<float>& item_vectors() const override { return items_; }

 private:
  const cf::SasrecModel& m_;
  Tensor<float> items_;
};

class BagRecommender : public Recommender {
 public:
  explicit BagRecommender(cf::BagModel m) : m_(std::move(m)) {
    const auto& tb = m_.table();
    items_ = Tensor<float>({tb.rows() - 1, tb.cols()});
    std::copy(tb.data.begin() + static_cast<std::ptrdiff_t>(tb.cols()), tb.data.end(), items_.data.begin());
  }
  std::string kind() const override { return "bag"; }
  Tensor<float> user_reps(const std::vector<data::Sequence>& h) const override { return m_.user_reps(h); }
  const Tensor<float>& item_vectors() const override { return items_; }

 private:
  cf::BagModel m_;
  Tensor<float> items_;
};

// SEQDISTILL_THREADS if set, else the hardware count.
inline std::size_t eval_threads() {
  if (const char* s = std::getenv("SEQDISTILL_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end != s && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(c) for c in [0, n) over up to `threads` workers. Each index is
// handled by exactly one worker; the first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t c = 0; c < n; ++c) body(c);
    return;
  }
  std::vector<std::exception_ptr> errs(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < n; c += threads) body(c);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

struct EvalOptions {
  std::vector<std::size_t> users;  // positions in split.users; empty = all
  std::function<data::Sequence(std::size_t)> history;  // default: split.history(k, phase)
  std::string subset = "all";
  std::size_t threads = 0;  // 0 = eval_threads()
  std::size_t chunk = 128;
};

struct UserRanks {
  std::vector<std::size_t> users;
  std::vector<std::size_t> ranks;  // 0 = skipped
};

// Pessimistic rank of the positive for every requested user. Chunking is
// fixed, so results do not depend on the thread count.
inline UserRanks rank_users(const Recommender& model, const data::SplitSpec& split,
                            const std::vector<data::CandidateSet>& cands, data::Phase phase, const EvalOptions& opt = {}) {
  UserRanks out;
  out.users = opt.users;
  if (out.users.empty())
    for (std::size_t k = 0; k < split.users.size(); ++k) out.users.push_back(k);
  out.ranks.assign(out.users.size(), 0);
  const Tensor<float>& items = model.item_vectors();
  const std::size_t dim = items.cols();
  const std::size_t nchunks = (out.users.size() + opt.chunk - 1) / opt.chunk;
  parallel_for(nchunks, opt.threads ? opt.threads : eval_threads(), [&](std::size_t c) {
    const std::size_t b0 = c * opt.chunk, b1 = std::min(out.users.size(), b0 + opt.chunk);
    std::vector<data::Sequence> hist;
    std::vector<std::size_t> rows;
    for (std::size_t r = b0; r < b1; ++r) {
      const std::size_t k = out.users[r];
      require(k < split.users.size() && k < cands.size(), "evaluate: user index out of range");
      if (cands[k].negatives.empty()) continue;
      hist.push_back(opt.history ? opt.history(k) : split.history(k, phase));
      rows.push_back(r);
    }
    if (rows.empty()) return;
    Tensor<float> vecs = model.user_vectors(model.user_reps(hist));
    std::vector<float> scores;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto& cs = cands[out.users[rows[j]]];
      const std::vector<int> ids = cs.items();
      scores.resize(ids.size());
      for (std::size_t q = 0; q < ids.size(); ++q)
        scores[q] = num::kernels::dot(vecs.row(j), items.row(static_cast<std::size_t>(ids[q])), dim);
      out.ranks[rows[j]] = pessimistic_rank(scores, 0);
    }
  });
  return out;
}

inline EvalReport report_from_ranks(const UserRanks& r, const std::string& subset = "all") {
  MetricSums s;
  std::size_t skipped = 0;
  for (std::size_t rank : r.ranks) {
    if (rank == 0) {
      ++skipped;
      continue;
    }
    s.add(rank);
  }
  return finalize(s, subset, skipped);
}

inline EvalReport evaluate(const Recommender& model, const data::SplitSpec& split, const data::EvalCandidates& cands,
                           data::Phase phase, const EvalOptions& opt = {}) {
  return report_from_ranks(rank_users(model, split, cands.of(phase), phase, opt), opt.subset);
}

}  // namespace seqdistill::eval
