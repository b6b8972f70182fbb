#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "seqdistill/data/shuffle.hpp"
#include "seqdistill/data/subsets.hpp"
#include "seqdistill/distill/train.hpp"
#include "seqdistill/eval/evaluate.hpp"

namespace seqdistill::eval {

enum class DiagMode { shuffle_train, shuffle_infer, rep_sim };

inline const char* to_string(DiagMode m) {
  switch (m) {
    case DiagMode::shuffle_train: return "shuffle-train";
    case DiagMode::shuffle_infer: return "shuffle-infer";
    case DiagMode::rep_sim: return "rep-sim";
  }
  return "rep-sim";
}

inline DiagMode parse_diag_mode(const std::string& s) {
  if (s == "shuffle-train") return DiagMode::shuffle_train;
  if (s == "shuffle-infer") return DiagMode::shuffle_infer;
  if (s == "rep-sim") return DiagMode::rep_sim;
  fail(ErrorKind::config, "unknown diagnostic mode '" + s + "' (expected shuffle-train, shuffle-infer or rep-sim)");
}

struct SimilarityStats {
  double mean = 0.0, stddev = 0.0, min = 0.0, max = 0.0;
  std::size_t users = 0;
  std::size_t skipped = 0;  // zero-norm representation on either side
  std::vector<std::size_t> histogram;  // 20 equal bins over [-1, 1]
  std::vector<double> per_user;        // aligned with evaluated users; NaN when skipped
};

struct DiagnosticReport {
  DiagMode mode = DiagMode::shuffle_infer;
  std::string model;
  EvalReport original, shuffled;
  std::map<std::string, std::optional<double>> change;  // metric -> percent
  std::optional<SimilarityStats> similarity;
};

inline std::map<std::string, std::optional<double>> change_ratios(const EvalReport& a, const EvalReport& b) {
  std::map<std::string, std::optional<double>> out;
  for (const auto& name : metric_names()) {
    if (a.empty() || b.empty()) {
      out[name] = std::nullopt;
      continue;
    }
    out[name] = change_ratio(a.at(name), b.at(name));
  }
  return out;
}

namespace detail {

inline std::optional<double> cosine(const float* a, const float* b, std::size_t n) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return std::nullopt;
  return ab / std::sqrt(aa * bb);
}

}  // namespace detail

// Per user, cosine between native representations of the original and the
// shuffled input prefix of `phase`.
inline SimilarityStats rep_similarity(const Recommender& model, const data::SplitSpec& split, data::Phase phase,
                                      const num::Rng& rng, const EvalOptions& opt = {}) {
  std::vector<std::size_t> users = opt.users;
  if (users.empty())
    for (std::size_t k = 0; k < split.users.size(); ++k) users.push_back(k);
  SimilarityStats st;
  st.per_user.assign(users.size(), std::nan(""));
  const std::size_t nchunks = (users.size() + opt.chunk - 1) / opt.chunk;
  parallel_for(nchunks, opt.threads ? opt.threads : eval_threads(), [&](std::size_t c) {
    const std::size_t b0 = c * opt.chunk, b1 = std::min(users.size(), b0 + opt.chunk);
    std::vector<data::Sequence> orig, shuf;
    for (std::size_t r = b0; r < b1; ++r) {
      orig.push_back(split.history(users[r], phase));
      shuf.push_back(data::shuffled_history(split, users[r], phase, rng));
    }
    Tensor<float> a = model.user_reps(orig), b = model.user_reps(shuf);
    for (std::size_t r = b0; r < b1; ++r)
      if (auto cs = detail::cosine(a.row(r - b0), b.row(r - b0), a.cols())) st.per_user[r] = *cs;
  });
  st.histogram.assign(20, 0);
  double sum = 0, sq = 0;
  st.min = 1.0;
  st.max = -1.0;
  for (double v : st.per_user) {
    if (std::isnan(v)) {
      ++st.skipped;
      continue;
    }
    ++st.users;
    sum += v;
    sq += v * v;
    st.min = std::min(st.min, v);
    st.max = std::max(st.max, v);
    const auto bin = static_cast<std::size_t>(std::clamp((v + 1.0) * 10.0, 0.0, 19.0));
    ++st.histogram[bin];
  }
  if (st.users == 0) {
    st.min = st.max = 0.0;
    return st;
  }
  st.mean = sum / static_cast<double>(st.users);
  st.stddev = std::sqrt(std::max(0.0, sq / static_cast<double>(st.users) - st.mean * st.mean));
  return st;
}

inline std::string histogram_csv(const SimilarityStats& st) {
  std::string out = "bin_lo,bin_hi,count\n";
  char buf[64];
  for (std::size_t b = 0; b < st.histogram.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.1f,%.1f,%zu\n", -1.0 + 0.1 * double(b), -0.9 + 0.1 * double(b), st.histogram[b]);
    out += buf;
  }
  return out;
}

// Trained once on original sequences; evaluated with original and with
// shuffled input prefixes against the same candidates.
inline DiagnosticReport shuffle_infer(const Recommender& model, const data::SplitSpec& split,
                                      const data::EvalCandidates& cands, data::Phase phase, const num::Rng& rng,
                                      EvalOptions opt = {}) {
  DiagnosticReport r;
  r.mode = DiagMode::shuffle_infer;
  r.model = model.kind();
  opt.history = nullptr;
  r.original = evaluate(model, split, cands, phase, opt);
  opt.history = [&](std::size_t k) { return data::shuffled_history(split, k, phase, rng); };
  r.shuffled = evaluate(model, split, cands, phase, opt);
  r.change = change_ratios(r.original, r.shuffled);
  r.similarity = rep_similarity(model, split, phase, rng, opt);
  return r;
}

// Builds and trains a model on the given split; used twice by shuffle_train.
using TrainFn = std::function<std::unique_ptr<Recommender>(const data::SplitSpec&)>;

// Trains on original and on once-shuffled training prefixes; both models are
// evaluated on the original (unshuffled) inputs and identical candidates.
inline DiagnosticReport shuffle_train(const TrainFn& train, const data::SplitSpec& split,
                                      const data::EvalCandidates& cands, data::Phase phase, const num::Rng& rng,
                                      const EvalOptions& opt = {}) {
  DiagnosticReport r;
  r.mode = DiagMode::shuffle_train;
  auto a = train(split);
  r.model = a->kind();
  r.original = evaluate(*a, split, cands, phase, opt);
  a.reset();
  auto b = train(data::shuffle_train(split, rng));
  r.shuffled = evaluate(*b, split, cands, phase, opt);
  r.change = change_ratios(r.original, r.shuffled);
  return r;
}

inline DiagnosticReport rep_sim_report(const Recommender& model, const data::SplitSpec& split, data::Phase phase,
                                       const num::Rng& rng, const EvalOptions& opt = {}) {
  DiagnosticReport r;
  r.mode = DiagMode::rep_sim;
  r.model = model.kind();
  r.similarity = rep_similarity(model, split, phase, rng, opt);
  return r;
}

// Transition / non-transition user subsets; labels come from training data.
inline std::vector<EvalReport> transition_eval(const Recommender& model, const data::SplitSpec& split,
                                               const data::EvalCandidates& cands, data::Phase phase,
                                               const std::vector<data::UserTransition>& labels, EvalOptions opt = {}) {
  require(labels.size() == split.users.size(), "transition labels misaligned with split");
  std::vector<EvalReport> out;
  for (bool flag : {true, false}) {
    opt.users.clear();
    for (std::size_t k = 0; k < labels.size(); ++k)
      if (labels[k].transition == flag) opt.users.push_back(k);
    opt.subset = flag ? "transition" : "non-transition";
    if (opt.users.empty()) {
      out.push_back(finalize({}, opt.subset));
      continue;
    }
    out.push_back(evaluate(model, split, cands, phase, opt));
  }
  return out;
}

// Users grouped by the label of their held-out item.
inline std::vector<EvalReport> warm_cold_eval(const Recommender& model, const data::SplitSpec& split,
                                              const data::EvalCandidates& cands, data::Phase phase,
                                              const data::ItemPopularity& pop, const EvalOptions& opt = {}) {
  UserRanks all = rank_users(model, split, cands.of(phase), phase, opt);
  std::vector<EvalReport> out;
  for (data::ItemLabel want : {data::ItemLabel::warm, data::ItemLabel::cold}) {
    UserRanks sub;
    for (std::size_t r = 0; r < all.users.size(); ++r) {
      const int target = split.target(all.users[r], phase).item;
      if (pop.label[static_cast<std::size_t>(target)] != want) continue;
      sub.users.push_back(all.users[r]);
      sub.ranks.push_back(all.ranks[r]);
    }
    out.push_back(report_from_ranks(sub, data::to_string(want)));
  }
  return out;
}

// Distilled model applied to a dataset it never saw: no CF embeddings exist,
// so every item slot carries f_I(0).
inline EvalReport cross_domain_eval(const distill::DistillModel<float>& m, const data::InteractionDataset& target,
                                    const data::SplitSpec& split, const data::EvalCandidates& cands,
                                    const enc::PromptOptions& prompt = {}, const EvalOptions& opt = {}) {
  distill::DistillRecommender rec(m, target, nullptr, prompt);
  EvalReport r = evaluate(rec, split, cands, data::Phase::test, opt);
  r.subset = "cross-domain";
  return r;
}

}  // namespace seqdistill::eval
