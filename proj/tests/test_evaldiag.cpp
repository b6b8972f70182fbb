#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "seqdistill/data/synth.hpp"
#include "seqdistill/eval/diagnostics.hpp"

using namespace seqdistill;
using namespace seqdistill::eval;

namespace {

// Sort-based reference: order candidates by descending score with the
// positive placed after every equal score, then read its position.
struct BruteMetrics {
  std::size_t rank;
  double hr1, hr10, hr20, ndcg10, ndcg20;
};

BruteMetrics brute(const std::vector<float>& s) {
  std::vector<std::size_t> order(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    if (a == 0 || b == 0) return b == 0;  // positive loses ties
    return a < b;
  });
  std::size_t rank = 0;
  while (order[rank] != 0) ++rank;
  ++rank;
  auto dcg = [&](std::size_t n) { return rank <= n ? 1.0 / std::log2(double(rank) + 1.0) : 0.0; };
  return {rank, rank <= 1 ? 1.0 : 0.0, rank <= 10 ? 1.0 : 0.0, rank <= 20 ? 1.0 : 0.0, dcg(10), dcg(20)};
}

struct Markov {
  data::InteractionDataset ds;
  data::SplitSpec split;
  data::EvalCandidates cands;
  cf::SasrecModel model;
};

Markov& markov() {
  static Markov* m = [] {
    data::MarkovSpec spec;
    spec.num_users = 500;
    spec.num_items = 60;
    spec.len_min = 10;
    spec.len_max = 14;
    spec.seed = 9;
    auto ds = data::gen_markov(spec);
    auto split = data::split_leave_last_out(ds);
    auto cands = data::sample_eval_candidates(ds, split, 49, num::Rng(9));
    cf::SasrecConfig mc;
    mc.d = 32;
    mc.max_len = 12;
    mc.seed = 9;
    auto* out = new Markov{std::move(ds), std::move(split), std::move(cands), cf::SasrecModel(60, mc)};
    cf::CfTrainConfig tc;
    tc.lr = 2e-3;
    tc.max_epochs = 25;
    tc.eval_every = 1.0;
    tc.seed = 9;
    cf::train_sasrec(out->model, out->ds, out->split, out->cands, tc);
    return out;
  }();
  return *m;
}

// Random item vectors; user vectors are seeded by the last input timestamp.
class RandomRecommender : public Recommender {
 public:
  RandomRecommender(std::size_t items, std::uint64_t seed) : items_({items, 8}), seed_(seed) {
    num::Rng r(seed);
    for (auto& v : items_.data) v = static_cast<float>(r.normal());
  }
  std::string kind() const override { return "random"; }
  Tensor<float> user_reps(const std::vector<data::Sequence>& h) const override {
    Tensor<float> out({h.size(), 8});
    for (std::size_t b = 0; b < h.size(); ++b) {
      num::Rng r = num::Rng(seed_).split(h[b].back().ts);
      for (std::size_t c = 0; c < 8; ++c) out.at(b, c) = static_cast<float>(r.normal());
    }
    return out;
  }
  const Tensor<float>& item_vectors() const override { return items_; }

 private:
  Tensor<float> items_;
  std::uint64_t seed_;
};

// Looks up the held-out item from the last input event and points at it.
class OracleRecommender : public Recommender {
 public:
  OracleRecommender(const data::SplitSpec& split, std::size_t items, data::Phase phase) : items_({items, items}) {
    for (std::size_t i = 0; i < items; ++i) items_.at(i, i) = 1.0f;
    for (std::size_t k = 0; k < split.users.size(); ++k)
      next_[split.history(k, phase).back().ts] = split.target(k, phase).item;
  }
  std::string kind() const override { return "oracle"; }
  Tensor<float> user_reps(const std::vector<data::Sequence>& h) const override {
    Tensor<float> out({h.size(), items_.cols()});
    for (std::size_t b = 0; b < h.size(); ++b) out.at(b, static_cast<std::size_t>(next_.at(h[b].back().ts))) = 1.0f;
    return out;
  }
  const Tensor<float>& item_vectors() const override { return items_; }

 private:
  Tensor<float> items_;
  std::map<std::int64_t, int> next_;  // timestamps are unique in this toy
};

void expect_bounds(const EvalReport& r) {
  if (r.empty()) return;
  for (const auto& [name, v] : r.metrics) {
    EXPECT_GE(v, 0.0) << name;
    EXPECT_LE(v, 1.0) << name;
  }
  EXPECT_LE(r.at("HR@10"), r.at("HR@20"));
  EXPECT_LE(r.at("NDCG@10"), r.at("NDCG@20"));
  EXPECT_LE(r.at("HR@1"), r.at("HR@10"));
}

}  // namespace

TEST(RankMetrics, ClosedForms) {
  std::vector<float> top{5, 1, 2, 3};
  EXPECT_EQ(pessimistic_rank(top, 0), 1u);
  EXPECT_EQ(ndcg_at(1, 10), 1.0);
  EXPECT_EQ(hit_at(1, 10), 1.0);
  EXPECT_EQ(ndcg_at(3, 10), 0.5);
  EXPECT_EQ(hit_at(11, 10), 0.0);
  EXPECT_EQ(ndcg_at(11, 10), 0.0);
  EXPECT_EQ(hit_at(11, 20), 1.0);
  std::vector<float> tie{1, 1, 0};
  EXPECT_EQ(pessimistic_rank(tie, 0), 2u);
}

TEST(RankMetrics, MatchesSortOracleIncludingTies) {
  num::Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> s(100);
    // Small integer range so ties with the positive are common.
    for (auto& v : s) v = static_cast<float>(rng.uniform_int(trial % 2 ? 8 : 1000));
    const BruteMetrics b = brute(s);
    const std::size_t rank = pessimistic_rank(s, 0);
    ASSERT_EQ(rank, b.rank) << "trial " << trial;
    MetricSums m;
    m.add(rank);
    EvalReport r = finalize(m);
    EXPECT_EQ(r.at("HR@1"), b.hr1);
    EXPECT_EQ(r.at("HR@10"), b.hr10);
    EXPECT_EQ(r.at("HR@20"), b.hr20);
    EXPECT_EQ(r.at("NDCG@10"), b.ndcg10);
    EXPECT_EQ(r.at("NDCG@20"), b.ndcg20);
  }
}

TEST(ChangeRatio, ReportedToTwoDecimals) {
  EXPECT_EQ(format_percent(change_ratio(0.2918, 0.2688)), "-7.88%");
  EXPECT_EQ(format_percent(change_ratio(0.3388, 0.3224)), "-4.84%");
  EXPECT_EQ(format_percent(change_ratio(0.4, 0.4)), "0.00%");
  EXPECT_EQ(format_percent(change_ratio(0.0, 0.1)), "N/A");
  EXPECT_EQ(format_metric(0.123456), "0.1235");
}

TEST(Evaluate, RandomScorerNearChance) {
  data::MarkovSpec spec;
  spec.num_users = 2000;
  spec.num_items = 200;
  spec.len_min = spec.len_max = 8;
  spec.seed = 2;
  auto ds = data::gen_markov(spec);
  auto split = data::split_leave_last_out(ds);
  auto cands = data::sample_eval_candidates(ds, split, 99, num::Rng(2));
  RandomRecommender rec(200, 3);
  EvalReport r = evaluate(rec, split, cands, data::Phase::test);
  EXPECT_EQ(r.users, 2000u);
  EXPECT_NEAR(r.at("HR@10"), 0.10, 0.02);
  expect_bounds(r);
}

TEST(Evaluate, OracleScoresPerfect) {
  data::MarkovSpec spec;
  spec.num_users = 300;
  spec.num_items = 80;
  spec.len_min = spec.len_max = 6;
  spec.seed = 4;
  auto ds = data::gen_markov(spec);
  auto split = data::split_leave_last_out(ds);
  auto cands = data::sample_eval_candidates(ds, split, 49, num::Rng(4));
  OracleRecommender rec(split, 80, data::Phase::test);
  EvalReport r = evaluate(rec, split, cands, data::Phase::test);
  for (const auto& [name, v] : r.metrics) EXPECT_EQ(v, 1.0) << name;
}

TEST(Evaluate, SkipsUsersWithoutCandidatesAndIgnoresThreads) {
  auto& m = markov();
  auto cands = m.cands;
  cands.test[3].negatives.clear();
  cands.test[7].negatives.clear();
  SasrecRecommender rec(m.model);
  EvalOptions one, many;
  one.threads = 1;
  many.threads = 3;
  many.chunk = 17;
  one.chunk = 17;
  EvalReport a = evaluate(rec, m.split, cands, data::Phase::test, one);
  EvalReport b = evaluate(rec, m.split, cands, data::Phase::test, many);
  EXPECT_EQ(a.skipped, 2u);
  EXPECT_EQ(a.users, m.split.users.size() - 2);
  EXPECT_EQ(a.metrics, b.metrics);
  expect_bounds(a);
}

TEST(Diagnostics, BagEncoderIsOrderBlind) {
  auto& m = markov();
  BagRecommender bag(cf::BagModel::from_sasrec(m.model));
  auto r = shuffle_infer(bag, m.split, m.cands, data::Phase::test, num::Rng(1));
  for (const auto& [name, c] : r.change) {
    ASSERT_TRUE(c.has_value()) << name;
    EXPECT_EQ(*c, 0.0) << name;
    EXPECT_EQ(format_percent(c), "0.00%");
  }
  ASSERT_TRUE(r.similarity);
  EXPECT_NEAR(r.similarity->mean, 1.0, 1e-6);
  EXPECT_NEAR(r.similarity->min, 1.0, 1e-6);
}

TEST(Diagnostics, TrainedSasrecDependsOnOrder) {
  auto& m = markov();
  SasrecRecommender rec(m.model);
  auto r = shuffle_infer(rec, m.split, m.cands, data::Phase::test, num::Rng(1));
  EXPECT_LT(*r.change.at("NDCG@10"), 0.0);
  EXPECT_LT(r.similarity->mean, 0.99);
  std::size_t in_hist = 0;
  for (auto c : r.similarity->histogram) in_hist += c;
  EXPECT_EQ(in_hist, r.similarity->users);
  EXPECT_EQ(r.similarity->users + r.similarity->skipped, m.split.users.size());
  EXPECT_EQ(histogram_csv(*r.similarity).substr(0, 21), "bin_lo,bin_hi,count\n-");
  expect_bounds(r.original);
  expect_bounds(r.shuffled);
}

TEST(Diagnostics, ZeroNormRepresentationsAreSkipped) {
  auto& m = markov();
  Tensor<float> zeros({61, 4});
  BagRecommender bag{cf::BagModel(zeros)};
  auto st = rep_similarity(bag, m.split, data::Phase::test, num::Rng(1));
  EXPECT_EQ(st.users, 0u);
  EXPECT_EQ(st.skipped, m.split.users.size());
}

TEST(Diagnostics, ShuffledTrainingHurtsOnMarkovData) {
  auto& m = markov();
  int calls = 0;
  TrainFn train = [&](const data::SplitSpec& s) -> std::unique_ptr<Recommender> {
    ++calls;
    cf::SasrecConfig mc;
    mc.d = 32;
    mc.max_len = 12;
    mc.seed = 9;
    auto model = std::make_shared<cf::SasrecModel>(60, mc);
    cf::CfTrainConfig tc;
    tc.lr = 2e-3;
    tc.max_epochs = 15;
    tc.eval_every = 1.0;
    tc.seed = 9;
    cf::train_sasrec(*model, m.ds, s, m.cands, tc);
    struct Owning : SasrecRecommender {
      explicit Owning(std::shared_ptr<cf::SasrecModel> p) : SasrecRecommender(*p), keep(std::move(p)) {}
      std::shared_ptr<cf::SasrecModel> keep;
    };
    return std::make_unique<Owning>(model);
  };
  auto r = shuffle_train(train, m.split, m.cands, data::Phase::test, num::Rng(2));
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.mode, DiagMode::shuffle_train);
  EXPECT_LT(*r.change.at("NDCG@10"), 0.0);
  // Training prefixes were permuted; held-out items and candidates were not.
  auto shuffled = data::shuffle_train(m.split, num::Rng(2));
  for (std::size_t k = 0; k < m.split.users.size(); ++k) {
    EXPECT_EQ(shuffled.users[k].valid, m.split.users[k].valid);
    EXPECT_EQ(shuffled.users[k].test, m.split.users[k].test);
  }
}

TEST(Subsets, TransitionPartitionAndDirection) {
  auto& m = markov();
  auto labels = data::transition_scores(m.split);
  SasrecRecommender rec(m.model);
  auto reps = transition_eval(rec, m.split, m.cands, data::Phase::test, labels);
  ASSERT_EQ(reps.size(), 2u);
  EXPECT_EQ(reps[0].subset, "transition");
  EXPECT_EQ(reps[1].subset, "non-transition");
  EXPECT_EQ(reps[0].users + reps[0].skipped + reps[1].users + reps[1].skipped, m.split.users.size());
  EXPECT_GE(reps[0].at("NDCG@10"), reps[1].at("NDCG@10"));
  for (const auto& r : reps) expect_bounds(r);
}

TEST(Subsets, WarmColdFilterTargets) {
  auto& m = markov();
  auto pop = data::label_warm_cold(m.ds, m.split);
  SasrecRecommender rec(m.model);
  auto reps = warm_cold_eval(rec, m.split, m.cands, data::Phase::test, pop);
  ASSERT_EQ(reps.size(), 2u);
  std::size_t warm = 0, cold = 0;
  for (const auto& us : m.split.users) {
    warm += pop.label[static_cast<std::size_t>(us.test.item)] == data::ItemLabel::warm;
    cold += pop.label[static_cast<std::size_t>(us.test.item)] == data::ItemLabel::cold;
  }
  EXPECT_EQ(reps[0].users, warm);
  EXPECT_EQ(reps[1].users, cold);
  EXPECT_EQ(reps[0].subset, "warm");
  EXPECT_EQ(reps[1].subset, "cold");
}

TEST(Subsets, EmptySubsetIsNotApplicable) {
  auto& m = markov();
  std::vector<data::UserTransition> labels(m.split.users.size());
  SasrecRecommender rec(m.model);
  auto reps = transition_eval(rec, m.split, m.cands, data::Phase::test, labels);
  EXPECT_TRUE(reps[0].empty());
  EXPECT_EQ(format_percent(change_ratios(reps[0], reps[1]).at("NDCG@10")), "N/A");
}

namespace {

struct CrossDomain {
  data::MarkovSpec source_spec;
  data::InteractionDataset source;
  data::SplitSpec split;
  data::EvalCandidates cands;
  cf::SasrecModel cf;
  distill::DistillModel<float> model;
};

enc::EncoderConfig cross_encoder() {
  enc::EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_enc = 32;
  c.buckets = 2048;
  c.p_max = 128;
  c.seed = 3;
  return c;
}

CrossDomain& cross() {
  static CrossDomain* x = [] {
    data::MarkovSpec spec;
    spec.num_users = 600;
    spec.num_items = 200;
    spec.len_min = spec.len_max = 8;
    spec.seed = 21;
    auto ds = data::gen_markov(spec);
    auto split = data::split_leave_last_out(ds);
    auto cands = data::sample_eval_candidates(ds, split, 20, num::Rng(21));
    cf::SasrecConfig mc;
    mc.d = 16;
    mc.max_len = 8;
    mc.seed = 21;
    auto* out = new CrossDomain{spec, std::move(ds), std::move(split), std::move(cands), cf::SasrecModel(200, mc),
                                distill::DistillModel<float>(cross_encoder(), distill::DistillConfig{16, 32, false, 21})};
    cf::CfTrainConfig tc;
    tc.lr = 3e-3;
    tc.max_epochs = 20;
    tc.eval_every = 1.0;
    tc.seed = 21;
    cf::train_sasrec(out->cf, out->source, out->split, out->cands, tc);
    distill::DistillTrainConfig dc;
    dc.lr = 2e-3;
    dc.max_epochs = 8;
    dc.eval_every = 1.0;
    dc.m_train = 16;
    dc.valid_users = 100;
    dc.seed = 21;
    distill::train_distill(out->model, out->source, out->split, out->cands, out->cf, dc);
    return out;
  }();
  return *x;
}

EvalReport target_eval(const data::MarkovSpec& spec) {
  auto ds = data::gen_markov(spec);
  auto split = data::split_leave_last_out(ds);
  auto cands = data::sample_eval_candidates(ds, split, 99, num::Rng(spec.seed));
  return cross_domain_eval(cross().model, ds, split, cands);
}

}  // namespace

TEST(CrossDomain, DisjointVocabularyIsChance) {
  data::MarkovSpec spec;
  spec.num_users = 2000;
  spec.num_items = 200;
  spec.len_min = spec.len_max = 8;
  spec.seed = 77;
  spec.title_tag = "zz";
  spec.item_prefix = "t";
  EvalReport r = target_eval(spec);
  EXPECT_EQ(r.subset, "cross-domain");
  EXPECT_NEAR(r.at("HR@10"), 0.10, 0.03);
}

TEST(CrossDomain, SharedVocabularyBeatsChance) {
  data::MarkovSpec spec = cross().source_spec;
  spec.num_users = 2000;
  spec.seed = 78;
  spec.structure_seed = cross().source_spec.seed;
  spec.item_prefix = "t";
  spec.user_prefix = "v";
  EvalReport r = target_eval(spec);
  EXPECT_GT(r.at("HR@10"), 0.12);
}
